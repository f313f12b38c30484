#include "heterolora/adapters.hpp"

#include <algorithm>
#include <set>

#include "heterolora/transformer.hpp"

namespace heterolora {

const char* site_name(Site site) {
    switch (site) {
        case Site::q_proj: return "q_proj";
        case Site::k_proj: return "k_proj";
        case Site::v_proj: return "v_proj";
        case Site::o_proj: return "o_proj";
        case Site::ffn_w1: return "ffn_w1";
        case Site::ffn_w2: return "ffn_w2";
        case Site::res1: return "res1";
        case Site::res2: return "res2";
        case Site::in: return "in";
        case Site::cut: return "cut";
    }
    return "?";
}

Site site_from_name(const std::string& name) {
    for (Site s : {Site::q_proj, Site::k_proj, Site::v_proj, Site::o_proj, Site::ffn_w1, Site::ffn_w2,
                   Site::res1, Site::res2, Site::in, Site::cut}) {
        if (name == site_name(s)) return s;
    }
    throw ConfigError("unknown adapter site '" + name + "'");
}

bool site_is_shortcut(Site site) {
    return site == Site::res1 || site == Site::res2 || site == Site::in || site == Site::cut;
}

std::string to_string(const ModuleId& id) {
    return "L" + std::to_string(id.layer) + "." + site_name(id.site);
}

Tensor lora_forward(const Tensor& x, const Adapter& ad) {
    if (x.shape().back() != ad.d_in()) {
        throw DimensionError("lora_forward: input " + shape_str(x.shape()) + " does not match base " +
                             shape_str(ad.w0.shape()));
    }
    if (ad.merged_override.defined()) {
        return matmul(x, ad.merged_override);
    }
    Tensor base = matmul(x, ad.w0);
    if (!ad.enabled) return base;
    Tensor a = ad.mask_a.defined() ? mul(ad.a, ad.mask_a) : ad.a;
    Tensor b = ad.mask_b.defined() ? mul(ad.b, ad.mask_b) : ad.b;
    Tensor update = matmul(matmul(x, a), b);
    return add(base, scale(update, ad.alpha / static_cast<double>(ad.rank)));
}

Tensor lora_update(const Adapter& ad) {
    const std::size_t din = ad.d_in(), dout = ad.d_out(), r = ad.rank;
    const double s = ad.alpha / static_cast<double>(r);
    std::vector<double> upd(din * dout, 0.0);
    for (std::size_t i = 0; i < din; ++i)
        for (std::size_t p = 0; p < r; ++p) {
            const double aip = ad.a.at(i * r + p);
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < dout; ++j) upd[i * dout + j] += aip * ad.b.at(p * dout + j);
        }
    for (double& v : upd) v *= s;
    return Tensor({din, dout}, std::move(upd));
}

Tensor lora_merge(const Adapter& ad) {
    if (!ad.enabled) {
        throw ContractError("lora_merge: adapter " + to_string(ad.id) + " is disabled");
    }
    Tensor upd = lora_update(ad);
    std::vector<double> w(ad.w0.values());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += upd.at(i);
    return Tensor({ad.d_in(), ad.d_out()}, std::move(w));
}

Adapter* AdapterRegistry::find(const ModuleId& id) {
    auto it = mods_.find(id);
    return it == mods_.end() ? nullptr : &it->second;
}

const Adapter* AdapterRegistry::find(const ModuleId& id) const {
    auto it = mods_.find(id);
    return it == mods_.end() ? nullptr : &it->second;
}

Adapter& AdapterRegistry::at(const ModuleId& id) {
    Adapter* ad = find(id);
    if (!ad) throw IndexError("unknown module id " + to_string(id));
    return *ad;
}

const Adapter& AdapterRegistry::at(const ModuleId& id) const {
    const Adapter* ad = find(id);
    if (!ad) throw IndexError("unknown module id " + to_string(id));
    return *ad;
}

void AdapterRegistry::install(Adapter adapter) {
    if (contains(adapter.id)) {
        throw ContractError("adapter already installed at " + to_string(adapter.id));
    }
    mods_.emplace(adapter.id, std::move(adapter));
}

std::vector<ModuleId> AdapterRegistry::ids() const {
    std::vector<ModuleId> out;
    out.reserve(mods_.size());
    for (const auto& [id, ad] : mods_) out.push_back(id);
    return out;
}

std::vector<ModuleId> AdapterRegistry::enabled_ids() const {
    std::vector<ModuleId> out;
    for (const auto& [id, ad] : mods_) {
        if (ad.enabled) out.push_back(id);
    }
    return out;
}

namespace {

constexpr double kAdapterInitStd = 0.02;

Tensor gaussian_init(Shape shape, Rng rng) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = kAdapterInitStd * rng.gaussian();
    return Tensor(std::move(shape), std::move(v), true);
}

Tensor identity_matrix(std::size_t d) {
    std::vector<double> v(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;
    return Tensor({d, d}, std::move(v));
}

Adapter make_adapter(const ModuleId& id, Tensor w0, std::size_t rank, double alpha, RngPool& pool) {
    const std::size_t din = w0.shape()[0], dout = w0.shape()[1];
    if (rank == 0 || rank > std::min(din, dout)) {
        throw ConfigError("adapter rank " + std::to_string(rank) + " invalid for base " +
                          shape_str(w0.shape()) + " at " + to_string(id));
    }
    Adapter ad;
    ad.id = id;
    ad.w0 = std::move(w0);
    ad.w0.set_requires_grad(false);
    ad.rank = rank;
    ad.alpha = alpha;
    ad.a = gaussian_init({din, rank}, pool.derived("init.adapter." + to_string(id)));
    ad.b = Tensor::zeros({rank, dout}, true);
    ad.enabled = true;
    return ad;
}

}  // namespace

void inject(Model& model, const AdapterConfig& cfg) {
    const std::size_t d = model.config().d_model;
    const std::size_t n_layers = model.config().n_layers;

    std::set<Site> seen;
    for (Site s : cfg.lora_sites) {
        if (site_is_shortcut(s)) {
            throw ConfigError(std::string("'") + site_name(s) + "' is a shortcut kind, not a LoRA site");
        }
        if (!seen.insert(s).second) {
            throw ConfigError(std::string("duplicate LoRA site '") + site_name(s) + "'");
        }
    }
    seen.clear();
    for (Site s : cfg.shortcut_kinds) {
        if (!site_is_shortcut(s)) {
            throw ConfigError(std::string("'") + site_name(s) + "' is not a shortcut kind");
        }
        if (!seen.insert(s).second) {
            throw ConfigError(std::string("duplicate shortcut kind '") + site_name(s) + "'");
        }
    }

    for (std::size_t l = 0; l < n_layers; ++l) {
        LayerParams& p = model.layer(l);
        for (Site s : {Site::q_proj, Site::k_proj, Site::v_proj, Site::o_proj, Site::ffn_w1, Site::ffn_w2}) {
            if (std::find(cfg.lora_sites.begin(), cfg.lora_sites.end(), s) == cfg.lora_sites.end()) continue;
            Tensor w0;
            switch (s) {
                case Site::q_proj: w0 = p.wq; break;
                case Site::k_proj: w0 = p.wk; break;
                case Site::v_proj: w0 = p.wv; break;
                case Site::o_proj: w0 = p.wo; break;
                case Site::ffn_w1: w0 = p.w1; break;
                case Site::ffn_w2: w0 = p.w2; break;
                default: break;
            }
            model.registry().install(make_adapter({l, s}, w0, cfg.lora_rank, cfg.lora_alpha, model.rng()));
        }
        for (Site s : {Site::res1, Site::res2, Site::in, Site::cut}) {
            if (std::find(cfg.shortcut_kinds.begin(), cfg.shortcut_kinds.end(), s) ==
                cfg.shortcut_kinds.end())
                continue;
            if (s == Site::cut && l == 0) continue;  // consumes a_{i-1}
            Tensor w0 = (s == Site::res1 || s == Site::res2) ? identity_matrix(d) : Tensor::zeros({d, d});
            model.registry().install(
                make_adapter({l, s}, std::move(w0), cfg.shortcut_rank, cfg.shortcut_alpha, model.rng()));
        }
    }
    model.freeze_base();
}

void set_enabled(AdapterRegistry& registry, const std::vector<ModuleId>& enabled) {
    for (const ModuleId& id : enabled) {
        if (!registry.contains(id)) throw IndexError("plan names unknown module " + to_string(id));
    }
    for (auto& [id, ad] : registry) ad.enabled = false;
    for (const ModuleId& id : enabled) registry.at(id).enabled = true;
}

}  // namespace heterolora
