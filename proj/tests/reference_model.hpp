#pragma once

// Test-only reference forward pass written as plain double loops, kept
// independent of the Tensor/Tape implementation it checks. Reads parameters
// straight out of a Model and evaluates the post-LN block composition and
// the shortcut double-LN composition directly.

#include <cmath>
#include <limits>
#include <vector>

#include "heterolora/transformer.hpp"

namespace refmodel {

using Mat = std::vector<std::vector<double>>;

inline Mat mat_of(const heterolora::Tensor& t) {
    Mat m(t.rows(), std::vector<double>(t.shape().size() == 2 ? t.shape()[1] : 1));
    const std::size_t c = m[0].size();
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) m[i][j] = t.values()[i * c + j];
    return m;
}

inline std::vector<double> vec_of(const heterolora::Tensor& t) { return t.values(); }

inline Mat mul(const Mat& a, const Mat& b) {
    Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t p = 0; p < b.size(); ++p)
            for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][p] * b[p][j];
    return out;
}

inline Mat addm(const Mat& a, const Mat& b) {
    Mat out = a;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[0].size(); ++j) out[i][j] += b[i][j];
    return out;
}

inline Mat add_bias(const Mat& a, const std::vector<double>& bias) {
    Mat out = a;
    for (auto& row : out)
        for (std::size_t j = 0; j < bias.size(); ++j) row[j] += bias[j];
    return out;
}

inline Mat layer_norm(const Mat& x, const std::vector<double>& g, const std::vector<double>& b,
                      double eps) {
    Mat out = x;
    const double d = static_cast<double>(x[0].size());
    for (auto& row : out) {
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= d;
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mean) * inv * g[j] + b[j];
    }
    return out;
}

// Adapted linear transform: x.W0 + (alpha/r)(x.A).B when the adapter exists
// and is enabled, else x.W (or x.W0 for shortcut bases).
inline Mat adapted(const Mat& x, const Mat& w, const heterolora::Adapter* ad) {
    Mat y = mul(x, w);
    if (ad && ad->enabled) {
        Mat upd = mul(mul(x, mat_of(ad->a)), mat_of(ad->b));
        const double s = ad->alpha / static_cast<double>(ad->rank);
        for (std::size_t i = 0; i < y.size(); ++i)
            for (std::size_t j = 0; j < y[0].size(); ++j) y[i][j] += s * upd[i][j];
    }
    return y;
}

inline Mat shortcut_term(const Mat& x, const heterolora::Adapter& ad) {
    return adapted(x, mat_of(ad.w0), &ad);
}

inline Mat attention(heterolora::Model& m, std::size_t l, const Mat& x, bool causal) {
    using heterolora::Site;
    const auto& cfg = m.config();
    const auto& p = m.layer(l);
    Mat q = add_bias(adapted(x, mat_of(p.wq), m.registry().find({l, Site::q_proj})), vec_of(p.bq));
    Mat k = add_bias(adapted(x, mat_of(p.wk), m.registry().find({l, Site::k_proj})), vec_of(p.bk));
    Mat v = add_bias(adapted(x, mat_of(p.wv), m.registry().find({l, Site::v_proj})), vec_of(p.bv));
    const std::size_t t = x.size(), h = cfg.n_heads, dk = cfg.head_dim();
    Mat merged(t, std::vector<double>(cfg.d_model, 0.0));
    for (std::size_t head = 0; head < h; ++head) {
        const std::size_t c0 = head * dk;
        for (std::size_t i = 0; i < t; ++i) {
            std::vector<double> scores(t, -std::numeric_limits<double>::infinity());
            const std::size_t jmax = causal ? i + 1 : t;
            for (std::size_t j = 0; j < jmax; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dk; ++c) s += q[i][c0 + c] * k[j][c0 + c];
                scores[j] = s / std::sqrt(static_cast<double>(dk));
            }
            double mx = -std::numeric_limits<double>::infinity();
            for (double s : scores) mx = std::max(mx, s);
            double denom = 0.0;
            std::vector<double> w(t, 0.0);
            for (std::size_t j = 0; j < t; ++j) {
                w[j] = std::exp(scores[j] - mx);
                denom += w[j];
            }
            for (std::size_t j = 0; j < t; ++j) {
                const double wj = w[j] / denom;
                for (std::size_t c = 0; c < dk; ++c) merged[i][c0 + c] += wj * v[j][c0 + c];
            }
        }
    }
    return add_bias(adapted(merged, mat_of(p.wo), m.registry().find({l, Site::o_proj})), vec_of(p.bo));
}

inline Mat ffn(heterolora::Model& m, std::size_t l, const Mat& x) {
    using heterolora::Site;
    const auto& p = m.layer(l);
    Mat h = add_bias(adapted(x, mat_of(p.w1), m.registry().find({l, Site::ffn_w1})), vec_of(p.b1));
    for (auto& row : h)
        for (double& vv : row) vv = vv > 0.0 ? vv : 0.0;
    return add_bias(adapted(h, mat_of(p.w2), m.registry().find({l, Site::ffn_w2})), vec_of(p.b2));
}

// One layer under the shortcut composition:
//   a_i   = LN1[ LN1( s_res1(h) + Attn(h) ) + s_cut(a_prev) ]
//   h_i+1 = LN2[ LN2( s_res2(a_i) + FFN(a_i) ) + s_in(h) ]
// with disabled cross-layer shortcuts dropping both the term and the outer
// LN, and disabled residual shortcuts falling back to identity.
inline std::pair<Mat, Mat> shortcut_layer(heterolora::Model& m, std::size_t l, const Mat& h,
                                          const Mat& a_prev, bool causal) {
    using heterolora::Site;
    const auto& p = m.layer(l);
    const double eps = heterolora::Model::kLayerNormEps;
    Mat attn = attention(m, l, h, causal);
    const heterolora::Adapter* res1 = m.registry().find({l, Site::res1});
    Mat r1 = (res1 && res1->enabled) ? shortcut_term(h, *res1) : h;
    Mat a_i = layer_norm(addm(r1, attn), vec_of(p.ln1_g), vec_of(p.ln1_b), eps);
    const heterolora::Adapter* cut = m.registry().find({l, Site::cut});
    if (cut && cut->enabled) {
        a_i = layer_norm(addm(a_i, shortcut_term(a_prev, *cut)), vec_of(p.ln1_g), vec_of(p.ln1_b), eps);
    }
    Mat f = ffn(m, l, a_i);
    const heterolora::Adapter* res2 = m.registry().find({l, Site::res2});
    Mat r2 = (res2 && res2->enabled) ? shortcut_term(a_i, *res2) : a_i;
    Mat h_next = layer_norm(addm(r2, f), vec_of(p.ln2_g), vec_of(p.ln2_b), eps);
    const heterolora::Adapter* in = m.registry().find({l, Site::in});
    if (in && in->enabled) {
        h_next = layer_norm(addm(h_next, shortcut_term(h, *in)), vec_of(p.ln2_g), vec_of(p.ln2_b), eps);
    }
    return {a_i, h_next};
}

inline std::vector<double> forward(heterolora::Model& m, const std::vector<int>& tokens) {
    const auto& cfg = m.config();
    Mat x(tokens.size(), std::vector<double>(cfg.d_model));
    for (std::size_t t = 0; t < tokens.size(); ++t)
        for (std::size_t j = 0; j < cfg.d_model; ++j)
            x[t][j] = m.token_embedding().at(static_cast<std::size_t>(tokens[t]), j) +
                      m.positional_embedding().at(t, j);
    Mat a_prev;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        auto [a_i, h_next] = shortcut_layer(m, l, x, a_prev, true);
        a_prev = a_i;
        x = h_next;
    }
    Mat head = add_bias(mul(x, mat_of(m.head_weight())), vec_of(m.head_bias()));
    if (cfg.head_type == heterolora::HeadType::Classification) return head.back();
    std::vector<double> flat;
    for (const auto& row : head) flat.insert(flat.end(), row.begin(), row.end());
    return flat;
}

}  // namespace refmodel
