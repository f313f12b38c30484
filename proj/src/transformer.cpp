#include "heterolora/transformer.hpp"

#include <cmath>
#include <limits>

namespace heterolora {

void ModelConfig::validate() const {
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || vocab_size == 0 || max_seq_len == 0) {
        throw ConfigError("model config: all extents must be >= 1");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("model config: d_model " + std::to_string(d_model) +
                          " is not divisible by n_heads " + std::to_string(n_heads));
    }
    if (head_type == HeadType::Classification && n_classes == 0) {
        throw ConfigError("model config: classification head needs n_classes >= 1");
    }
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask) {
    if (q.cols() != k.cols()) {
        throw DimensionError("attention: query/key width mismatch " + shape_str(q.shape()) + " vs " +
                             shape_str(k.shape()));
    }
    if (k.rows() != v.rows()) {
        throw DimensionError("attention: key/value count mismatch " + shape_str(k.shape()) + " vs " +
                             shape_str(v.shape()));
    }
    Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.cols())));
    if (mask.defined()) scores = add(scores, mask);
    return matmul(softmax(scores, 1), v);
}

namespace {

Tensor gaussian_matrix(Shape shape, double stddev, Rng& rng, bool requires_grad) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = stddev * rng.gaussian();
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

Model::Model(const ModelConfig& config) : cfg_(config), rng_(config.seed) {
    cfg_.validate();
    const std::size_t d = cfg_.d_model;
    Rng& init = rng_.stream("init.base");

    tok_emb_ = gaussian_matrix({cfg_.vocab_size, d}, 1.0, init, true);
    pos_emb_ = gaussian_matrix({cfg_.max_seq_len, d}, 1.0, init, true);

    const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
    const double ff_std = 1.0 / std::sqrt(static_cast<double>(cfg_.d_ff));
    layers_.reserve(cfg_.n_layers);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        LayerParams p;
        p.wq = gaussian_matrix({d, d}, w_std, init, true);
        p.bq = Tensor::zeros({d}, true);
        p.wk = gaussian_matrix({d, d}, w_std, init, true);
        p.bk = Tensor::zeros({d}, true);
        p.wv = gaussian_matrix({d, d}, w_std, init, true);
        p.bv = Tensor::zeros({d}, true);
        p.wo = gaussian_matrix({d, d}, w_std, init, true);
        p.bo = Tensor::zeros({d}, true);
        p.w1 = gaussian_matrix({d, cfg_.d_ff}, w_std, init, true);
        p.b1 = Tensor::zeros({cfg_.d_ff}, true);
        p.w2 = gaussian_matrix({cfg_.d_ff, d}, ff_std, init, true);
        p.b2 = Tensor::zeros({d}, true);
        p.ln1_g = Tensor::ones({d}, true);
        p.ln1_b = Tensor::zeros({d}, true);
        p.ln2_g = Tensor::ones({d}, true);
        p.ln2_b = Tensor::zeros({d}, true);
        layers_.push_back(std::move(p));
    }

    const std::size_t head_out = cfg_.head_type == HeadType::Classification ? cfg_.n_classes : cfg_.vocab_size;
    head_w_ = gaussian_matrix({d, head_out}, w_std, init, true);
    head_b_ = Tensor::zeros({head_out}, true);
}

const Tensor& Model::causal_mask(std::size_t t) {
    auto it = mask_cache_.find(t);
    if (it == mask_cache_.end()) {
        const double neg_inf = -std::numeric_limits<double>::infinity();
        std::vector<double> m(t * t, 0.0);
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = i + 1; j < t; ++j) m[i * t + j] = neg_inf;
        it = mask_cache_.emplace(t, Tensor({t, t}, std::move(m))).first;
    }
    return it->second;
}

Tensor Model::adapted_linear(const Tensor& x, std::size_t layer, Site site) {
    const LayerParams& p = layers_[layer];
    const Tensor* w = nullptr;
    const Tensor* b = nullptr;
    switch (site) {
        case Site::q_proj: w = &p.wq; b = &p.bq; break;
        case Site::k_proj: w = &p.wk; b = &p.bk; break;
        case Site::v_proj: w = &p.wv; b = &p.bv; break;
        case Site::o_proj: w = &p.wo; b = &p.bo; break;
        case Site::ffn_w1: w = &p.w1; b = &p.b1; break;
        case Site::ffn_w2: w = &p.w2; b = &p.b2; break;
        default: throw ContractError("adapted_linear: not a projection site");
    }
    const Adapter* ad = registry_.find({layer, site});
    Tensor y = ad ? lora_forward(x, *ad) : matmul(x, *w);
    return add_bias(y, *b);
}

Tensor Model::multi_head_attention(const Tensor& x, std::size_t layer, const Tensor& mask) {
    Tensor q = adapted_linear(x, layer, Site::q_proj);
    Tensor k = adapted_linear(x, layer, Site::k_proj);
    Tensor v = adapted_linear(x, layer, Site::v_proj);
    const std::size_t h = cfg_.n_heads, dk = cfg_.head_dim();
    Tensor merged;
    if (h == 1) {
        merged = scaled_dot_attention(q, k, v, mask);
    } else {
        std::vector<Tensor> heads;
        heads.reserve(h);
        for (std::size_t i = 0; i < h; ++i) {
            heads.push_back(scaled_dot_attention(slice_cols(q, i * dk, dk), slice_cols(k, i * dk, dk),
                                                 slice_cols(v, i * dk, dk), mask));
        }
        merged = concat(heads, 1);
    }
    return adapted_linear(merged, layer, Site::o_proj);
}

Tensor Model::ffn_forward(const Tensor& x, std::size_t layer) {
    Tensor hidden = relu(adapted_linear(x, layer, Site::ffn_w1));
    return adapted_linear(hidden, layer, Site::ffn_w2);
}

Tensor Model::block_forward(const Tensor& h, std::size_t layer, const Tensor& mask) {
    const LayerParams& p = layers_[layer];
    Tensor a = layer_norm(add(h, multi_head_attention(h, layer, mask)), p.ln1_g, p.ln1_b, kLayerNormEps);
    return layer_norm(add(a, ffn_forward(a, layer)), p.ln2_g, p.ln2_b, kLayerNormEps);
}

std::pair<Tensor, Tensor> Model::shortcut_layer_forward(const Tensor& h, const Tensor& a_prev,
                                                        std::size_t layer, const Tensor& mask) {
    const LayerParams& p = layers_[layer];

    Tensor attn = multi_head_attention(h, layer, mask);
    const Adapter* res1 = registry_.find({layer, Site::res1});
    Tensor res1_path = (res1 && res1->enabled) ? lora_forward(h, *res1) : h;
    Tensor a_i = layer_norm(add(res1_path, attn), p.ln1_g, p.ln1_b, kLayerNormEps);

    const Adapter* cut = registry_.find({layer, Site::cut});
    if (cut && cut->enabled) {
        if (layer == 0) throw ConfigError("cut shortcut cannot exist at layer 0");
        if (!a_prev.defined()) throw ContractError("cut shortcut needs the previous layer's attention state");
        a_i = layer_norm(add(a_i, lora_forward(a_prev, *cut)), p.ln1_g, p.ln1_b, kLayerNormEps);
    }

    Tensor ffn = ffn_forward(a_i, layer);
    const Adapter* res2 = registry_.find({layer, Site::res2});
    Tensor res2_path = (res2 && res2->enabled) ? lora_forward(a_i, *res2) : a_i;
    Tensor h_next = layer_norm(add(res2_path, ffn), p.ln2_g, p.ln2_b, kLayerNormEps);

    const Adapter* in = registry_.find({layer, Site::in});
    if (in && in->enabled) {
        h_next = layer_norm(add(h_next, lora_forward(h, *in)), p.ln2_g, p.ln2_b, kLayerNormEps);
    }
    return {a_i, h_next};
}

Tensor Model::forward(std::span<const int> tokens) {
    if (tokens.empty()) throw ContractError("forward: empty token sequence");
    if (tokens.size() > cfg_.max_seq_len) {
        throw DimensionError("forward: sequence of length " + std::to_string(tokens.size()) +
                             " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
    }
    const std::size_t t = tokens.size();
    Tensor x = add(embedding_gather(tok_emb_, tokens), slice_rows(pos_emb_, 0, t));
    return forward_from_embedding(x);
}

Tensor Model::forward_from_embedding(const Tensor& x0) {
    if (x0.ndim() != 2 || x0.cols() != cfg_.d_model) {
        throw DimensionError("forward_from_embedding: expected (t, d_model), got " + shape_str(x0.shape()));
    }
    const Tensor& mask = causal_mask(x0.rows());
    Tensor h = x0;
    Tensor a_prev;
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        auto [a_i, h_next] = shortcut_layer_forward(h, a_prev, l, mask);
        a_prev = a_i;
        h = h_next;
    }
    return apply_head(h);
}

Tensor Model::apply_head(const Tensor& h) {
    if (cfg_.head_type == HeadType::Classification) {
        Tensor last = slice_rows(h, h.rows() - 1, 1);
        Tensor logits = add_bias(matmul(last, head_w_), head_b_);
        return reshape(logits, {cfg_.n_classes});
    }
    return add_bias(matmul(h, head_w_), head_b_);
}

void Model::freeze_base() {
    tok_emb_.set_requires_grad(false);
    pos_emb_.set_requires_grad(false);
    for (LayerParams& p : layers_) {
        for (Tensor* t : {&p.wq, &p.bq, &p.wk, &p.bk, &p.wv, &p.bv, &p.wo, &p.bo, &p.w1, &p.b1, &p.w2,
                          &p.b2, &p.ln1_g, &p.ln1_b, &p.ln2_g, &p.ln2_b}) {
            t->set_requires_grad(false);
        }
    }
    head_w_.set_requires_grad(true);
    head_b_.set_requires_grad(true);
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("tok_emb", tok_emb_);
    out.emplace_back("pos_emb", pos_emb_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const LayerParams& p = layers_[l];
        const std::string prefix = "layer" + std::to_string(l) + ".";
        out.emplace_back(prefix + "wq", p.wq);
        out.emplace_back(prefix + "bq", p.bq);
        out.emplace_back(prefix + "wk", p.wk);
        out.emplace_back(prefix + "bk", p.bk);
        out.emplace_back(prefix + "wv", p.wv);
        out.emplace_back(prefix + "bv", p.bv);
        out.emplace_back(prefix + "wo", p.wo);
        out.emplace_back(prefix + "bo", p.bo);
        out.emplace_back(prefix + "w1", p.w1);
        out.emplace_back(prefix + "b1", p.b1);
        out.emplace_back(prefix + "w2", p.w2);
        out.emplace_back(prefix + "b2", p.b2);
        out.emplace_back(prefix + "ln1_g", p.ln1_g);
        out.emplace_back(prefix + "ln1_b", p.ln1_b);
        out.emplace_back(prefix + "ln2_g", p.ln2_g);
        out.emplace_back(prefix + "ln2_b", p.ln2_b);
    }
    out.emplace_back("head.w", head_w_);
    out.emplace_back("head.b", head_b_);
    for (const auto& [id, ad] : registry_) {
        const std::string prefix = "adapter." + to_string(id) + ".";
        if (ad.is_shortcut()) out.emplace_back(prefix + "w0", ad.w0);
        out.emplace_back(prefix + "a", ad.a);
        out.emplace_back(prefix + "b", ad.b);
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> Model::trainable_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (auto& [name, t] : named_parameters()) {
        if (name.rfind("adapter.", 0) == 0) continue;  // enablement-gated, handled below
        if (!t.requires_grad()) continue;
        out.emplace_back(name, t);
    }
    for (const auto& [id, ad] : registry_) {
        if (!ad.enabled) continue;
        const std::string prefix = "adapter." + to_string(id) + ".";
        if (ad.a.requires_grad()) out.emplace_back(prefix + "a", ad.a);
        if (ad.b.requires_grad()) out.emplace_back(prefix + "b", ad.b);
    }
    return out;
}

std::size_t Model::count_parameters(bool trainable_only) const {
    std::size_t n = 0;
    if (trainable_only) {
        for (const auto& [name, t] : trainable_parameters()) n += t.size();
    } else {
        for (const auto& [name, t] : named_parameters()) n += t.size();
    }
    return n;
}

void Model::zero_grads() {
    for (auto& [name, t] : named_parameters()) const_cast<Tensor&>(t).zero_grad();
}

}  // namespace heterolora
