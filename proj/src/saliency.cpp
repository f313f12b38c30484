#include "heterolora/saliency.hpp"

#include <cmath>

#include "heterolora/transformer.hpp"

namespace heterolora {

const char* proxy_name(Proxy p) {
    switch (p) {
        case Proxy::Constant: return "constant";
        case Proxy::Snip: return "snip";
        case Proxy::Synflow: return "synflow";
        case Proxy::GradNorm: return "gradnorm";
    }
    return "?";
}

Proxy proxy_from_name(const std::string& name) {
    for (Proxy p : {Proxy::Constant, Proxy::Snip, Proxy::Synflow, Proxy::GradNorm}) {
        if (name == proxy_name(p)) return p;
    }
    throw ConfigError("unknown proxy '" + name + "'");
}

const char* basis_name(Basis b) { return b == Basis::Decomposed ? "decomposed" : "merged"; }

Basis basis_from_name(const std::string& name) {
    if (name == "decomposed") return Basis::Decomposed;
    if (name == "merged") return Basis::Merged;
    throw ConfigError("unknown basis '" + name + "'");
}

namespace {

// Scoring must rank every installed module, so all of them are enabled for
// the duration of the pass and the previous enablement is restored after.
class EnableAllScope {
public:
    explicit EnableAllScope(AdapterRegistry& reg) : reg_(reg) {
        for (auto& [id, ad] : reg_) {
            saved_.emplace_back(id, ad.enabled);
            ad.enabled = true;
        }
    }
    ~EnableAllScope() {
        for (const auto& [id, was] : saved_) reg_.at(id).enabled = was;
    }

private:
    AdapterRegistry& reg_;
    std::vector<std::pair<ModuleId, bool>> saved_;
};

// Clears scoring-pass hooks (masks, merged leaves) even on exceptions.
class HookClearGuard {
public:
    explicit HookClearGuard(AdapterRegistry& reg) : reg_(reg) {}
    ~HookClearGuard() {
        for (auto& [id, ad] : reg_) {
            ad.mask_a = Tensor();
            ad.mask_b = Tensor();
            ad.merged_override = Tensor();
        }
    }

private:
    AdapterRegistry& reg_;
};

double abs_dot_own_grad(const Tensor& t) {
    if (!t.has_grad()) return 0.0;
    const auto& g = t.grad();
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += std::fabs(t.at(i) * g[i]);
    return s;
}

double signed_dot(const std::vector<double>& values, const Tensor& with_grad_of) {
    if (!with_grad_of.has_grad()) return 0.0;
    const auto& g = with_grad_of.grad();
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += values[i] * g[i];
    return s;
}

double l2_norm_scaled(const Tensor& t, double inv_scale) {
    if (!t.has_grad()) return 0.0;
    double s = 0.0;
    for (double g : t.grad()) {
        const double m = g * inv_scale;
        s += m * m;
    }
    return std::sqrt(s);
}

ScoreMap empty_scores(const AdapterRegistry& reg, Proxy proxy, Basis basis, int budget) {
    ScoreMap out;
    for (const auto& [id, ad] : reg) out[id] = SaliencyScore{id, 0.0, proxy, basis, budget};
    return out;
}

void check_budget(const BatchLossFn& fn, int budget) {
    if (!fn || budget <= 0) throw ContractError("saliency: a positive batch budget of data is required");
}

}  // namespace

ScoreMap snip_scores(Model& model, const BatchLossFn& loss_fn, int batch_budget, Basis basis) {
    check_budget(loss_fn, batch_budget);
    EnableAllScope enable_all(model.registry());
    HookClearGuard hooks(model.registry());
    ScoreMap out = empty_scores(model.registry(), Proxy::Snip, basis, batch_budget);

    for (int bi = 0; bi < batch_budget; ++bi) {
        model.zero_grads();
        if (basis == Basis::Merged) {
            for (auto& [id, ad] : model.registry()) {
                ad.merged_override = lora_merge(ad);
                ad.merged_override.set_requires_grad(true);
            }
        }
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = loss_fn(bi);
        backward(loss);
        for (auto& [id, ad] : model.registry()) {
            if (basis == Basis::Decomposed) {
                out[id].value += abs_dot_own_grad(ad.a) + abs_dot_own_grad(ad.b);
            } else {
                out[id].value += abs_dot_own_grad(ad.merged_override);
                ad.merged_override = Tensor();
            }
        }
    }
    model.zero_grads();
    for (auto& [id, sc] : out) sc.value /= batch_budget;
    return out;
}

ScoreMap snip_scores_mask_route(Model& model, const BatchLossFn& loss_fn, int batch_budget) {
    check_budget(loss_fn, batch_budget);
    EnableAllScope enable_all(model.registry());
    HookClearGuard hooks(model.registry());
    ScoreMap out = empty_scores(model.registry(), Proxy::Snip, Basis::Decomposed, batch_budget);

    for (int bi = 0; bi < batch_budget; ++bi) {
        model.zero_grads();
        for (auto& [id, ad] : model.registry()) {
            ad.mask_a = Tensor::ones(ad.a.shape(), true);
            ad.mask_b = Tensor::ones(ad.b.shape(), true);
        }
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = loss_fn(bi);
        backward(loss);
        for (auto& [id, ad] : model.registry()) {
            double s = 0.0;
            if (ad.mask_a.has_grad())
                for (double g : ad.mask_a.grad()) s += std::fabs(g);
            if (ad.mask_b.has_grad())
                for (double g : ad.mask_b.grad()) s += std::fabs(g);
            out[id].value += s;
            ad.mask_a = Tensor();
            ad.mask_b = Tensor();
        }
    }
    model.zero_grads();
    for (auto& [id, sc] : out) sc.value /= batch_budget;
    return out;
}

ScoreMap synflow_scores(Model& model, Basis basis) {
    EnableAllScope enable_all(model.registry());
    HookClearGuard hooks(model.registry());
    ScoreMap out = empty_scores(model.registry(), Proxy::Synflow, basis, 0);

    // Signed state, captured before the abs replacement.
    auto params = model.named_parameters();
    std::vector<std::vector<double>> snapshot;
    snapshot.reserve(params.size());
    for (auto& [name, t] : params) snapshot.push_back(t.values());

    std::map<ModuleId, std::vector<double>> signed_merged;
    if (basis == Basis::Merged) {
        for (auto& [id, ad] : model.registry()) signed_merged[id] = lora_merge(ad).values();
    }
    std::map<ModuleId, std::pair<std::vector<double>, std::vector<double>>> signed_ab;
    for (auto& [id, ad] : model.registry()) signed_ab[id] = {ad.a.values(), ad.b.values()};

    for (auto& [name, t] : params)
        for (double& v : const_cast<Tensor&>(t).values()) v = std::fabs(v);

    model.zero_grads();
    {
        if (basis == Basis::Merged) {
            for (auto& [id, ad] : model.registry()) {
                ad.merged_override = lora_merge(ad);  // built from the abs-valued state
                ad.merged_override.set_requires_grad(true);
            }
        }
        Tape tape;
        TapeScope scope(tape);
        Tensor x0 = Tensor::ones({model.config().max_seq_len, model.config().d_model});
        Tensor r = sum(model.forward_from_embedding(x0));
        backward(r);
        for (auto& [id, ad] : model.registry()) {
            if (basis == Basis::Decomposed) {
                const auto& [sa, sb] = signed_ab[id];
                out[id].value = signed_dot(sa, ad.a) + signed_dot(sb, ad.b);
            } else {
                out[id].value = signed_dot(signed_merged[id], ad.merged_override);
                ad.merged_override = Tensor();
            }
        }
    }

    for (std::size_t i = 0; i < params.size(); ++i)
        const_cast<Tensor&>(params[i].second).values() = snapshot[i];
    model.zero_grads();
    return out;
}

ScoreMap gradnorm_scores(Model& model, const BatchLossFn& loss_fn, int batch_budget) {
    check_budget(loss_fn, batch_budget);
    EnableAllScope enable_all(model.registry());
    ScoreMap out = empty_scores(model.registry(), Proxy::GradNorm, Basis::Decomposed, batch_budget);

    model.zero_grads();
    for (int bi = 0; bi < batch_budget; ++bi) {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = loss_fn(bi);
        backward(loss);  // gradients accumulate across the budget
    }
    const double inv = 1.0 / static_cast<double>(batch_budget);
    for (auto& [id, ad] : model.registry()) {
        out[id].value = l2_norm_scaled(ad.a, inv) + l2_norm_scaled(ad.b, inv);
    }
    model.zero_grads();
    return out;
}

ScoreMap constant_scores(const AdapterRegistry& registry) {
    ScoreMap out;
    for (const auto& [id, ad] : registry)
        out[id] = SaliencyScore{id, 1.0, Proxy::Constant, Basis::Decomposed, 0};
    return out;
}

ScoreMap compute_scores(Model& model, Proxy proxy, Basis basis, const BatchLossFn& loss_fn,
                        int batch_budget) {
    switch (proxy) {
        case Proxy::Constant: return constant_scores(model.registry());
        case Proxy::Snip: return snip_scores(model, loss_fn, batch_budget, basis);
        case Proxy::Synflow: return synflow_scores(model, basis);
        case Proxy::GradNorm: return gradnorm_scores(model, loss_fn, batch_budget);
    }
    throw ContractError("compute_scores: unreachable proxy");
}

}  // namespace heterolora
