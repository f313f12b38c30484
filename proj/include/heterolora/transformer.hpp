#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "heterolora/adapters.hpp"
#include "heterolora/rng.hpp"
#include "heterolora/tensor.hpp"

namespace heterolora {

enum class HeadType { Classification, CausalLm };

struct ModelConfig {
    std::size_t d_model = 32;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t d_ff = 64;
    std::size_t vocab_size = 16;
    std::size_t max_seq_len = 16;
    HeadType head_type = HeadType::Classification;
    std::size_t n_classes = 2;
    std::uint64_t seed = 0;

    void validate() const;  // throws ConfigError
    std::size_t head_dim() const { return d_model / n_heads; }
};

struct LayerParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor w1, b1, w2, b2;
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
};

// softmax(Q K^T / sqrt(d_k) + mask) V over row-convention (t x d) operands.
// An undefined mask handle means no mask.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask);

// Small decoder-style post-layer-norm Transformer hosting the adapters.
// Base weights come from the run seed; "pre-training" is simulated by
// freezing them once adapters are injected.
class Model {
public:
    explicit Model(const ModelConfig& config);

    const ModelConfig& config() const { return cfg_; }
    RngPool& rng() { return rng_; }

    AdapterRegistry& registry() { return registry_; }
    const AdapterRegistry& registry() const { return registry_; }

    // Token ids -> logits. Classification heads read the last position and
    // return (n_classes,); causal-lm heads return (t, vocab_size).
    Tensor forward(std::span<const int> tokens);

    // Runs blocks and head on an embedding-level input, bypassing the token
    // and positional tables (SYNFLOW entry point).
    Tensor forward_from_embedding(const Tensor& x0);

    Tensor multi_head_attention(const Tensor& x, std::size_t layer, const Tensor& mask);
    Tensor ffn_forward(const Tensor& x, std::size_t layer);

    // Baseline post-LN block: a = LN1(h + Attn(h)); h' = LN2(a + FFN(a)).
    // LoRA projection adapters participate; shortcut modules do not.
    Tensor block_forward(const Tensor& h, std::size_t layer, const Tensor& mask);

    // Block with LoRA-adapted shortcuts. Returns (a_i, h_{i+1}); a_i feeds
    // the next layer's `cut` shortcut. Enabled cross-layer shortcuts add
    // their term and re-apply the layer's own (frozen) normalisation.
    std::pair<Tensor, Tensor> shortcut_layer_forward(const Tensor& h, const Tensor& a_prev,
                                                     std::size_t layer, const Tensor& mask);

    void freeze_base();

    // Deterministically ordered (name, tensor) pairs: base, head, then
    // adapter parameters in registry order.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    // Parameters the optimizer may update: requires_grad and, for adapter
    // parameters, the owning adapter is enabled.
    std::vector<std::pair<std::string, Tensor>> trainable_parameters() const;

    std::size_t count_parameters(bool trainable_only) const;
    void zero_grads();

    LayerParams& layer(std::size_t i) { return layers_[i]; }
    const LayerParams& layer(std::size_t i) const { return layers_[i]; }
    Tensor& token_embedding() { return tok_emb_; }
    Tensor& positional_embedding() { return pos_emb_; }
    Tensor& head_weight() { return head_w_; }
    Tensor& head_bias() { return head_b_; }

    const Tensor& causal_mask(std::size_t t);

    static constexpr double kLayerNormEps = 1e-5;

private:
    Tensor adapted_linear(const Tensor& x, std::size_t layer, Site site);
    Tensor apply_head(const Tensor& h);

    ModelConfig cfg_;
    RngPool rng_;
    Tensor tok_emb_;  // (vocab_size, d_model)
    Tensor pos_emb_;  // (max_seq_len, d_model)
    std::vector<LayerParams> layers_;
    Tensor head_w_, head_b_;
    AdapterRegistry registry_;
    std::map<std::size_t, Tensor> mask_cache_;
};

}  // namespace heterolora
