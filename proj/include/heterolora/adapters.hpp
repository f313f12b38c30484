#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "heterolora/module_id.hpp"
#include "heterolora/tensor.hpp"

namespace heterolora {

class Model;

// One low-rank adapter over a frozen base matrix. Weights are stored in the
// row convention: w0 is (d_in x d_out) and the forward path right-multiplies,
// so `a` is the Gaussian-initialised input factor (d_in x r) and `b` the
// zero-initialised output factor (r x d_out). The effective update stays
// (alpha/r) * B A in the paper's column orientation.
struct Adapter {
    ModuleId id;
    Tensor w0;  // frozen; aliases the model weight for projection sites, owned for shortcuts
    Tensor a;
    Tensor b;
    std::size_t rank = 0;
    double alpha = 0.0;
    bool enabled = true;

    // Scoring-pass hooks; unset outside a saliency evaluation.
    Tensor mask_a, mask_b;   // SNIP mask-gradient route
    Tensor merged_override;  // merged-basis leaf W' = W0 + (alpha/r) A B

    std::size_t d_in() const { return w0.shape()[0]; }
    std::size_t d_out() const { return w0.shape()[1]; }
    bool is_shortcut() const { return site_is_shortcut(id.site); }
    std::size_t trainable_count() const { return (d_in() + d_out()) * rank; }
};

// Dual-path adapted projection: x.W0 plus (alpha/r) (x.A).B when enabled.
// The low-rank update is never materialised on the training path; only A and
// B carry gradients.
Tensor lora_forward(const Tensor& x, const Adapter& adapter);

// The update (alpha/r) A B as a plain (untaped) tensor; linear in alpha.
Tensor lora_update(const Adapter& adapter);

// W' = W0 + (alpha/r) A B, as a plain (untaped) tensor. Merging a disabled
// adapter is a contract error.
Tensor lora_merge(const Adapter& adapter);

// Installed adapters keyed and iterated in ModuleId order (layer, then site).
class AdapterRegistry {
public:
    bool empty() const { return mods_.empty(); }
    std::size_t size() const { return mods_.size(); }
    bool contains(const ModuleId& id) const { return mods_.count(id) != 0; }

    Adapter* find(const ModuleId& id);
    const Adapter* find(const ModuleId& id) const;
    Adapter& at(const ModuleId& id);  // throws IndexError on unknown ids
    const Adapter& at(const ModuleId& id) const;

    void install(Adapter adapter);  // throws ContractError on duplicate sites

    auto begin() { return mods_.begin(); }
    auto end() { return mods_.end(); }
    auto begin() const { return mods_.begin(); }
    auto end() const { return mods_.end(); }

    std::vector<ModuleId> ids() const;
    std::vector<ModuleId> enabled_ids() const;

private:
    std::map<ModuleId, Adapter> mods_;
};

struct AdapterConfig {
    std::vector<Site> lora_sites;  // projection/FFN sites, one adapter per site per layer
    std::size_t lora_rank = 8;
    double lora_alpha = 16.0;
    std::vector<Site> shortcut_kinds;  // drawn from {res1, res2, in, cut}
    std::size_t shortcut_rank = 8;
    double shortcut_alpha = 4.0;

    bool any() const { return !lora_sites.empty() || !shortcut_kinds.empty(); }
};

// Installs adapters on every layer, freezes the base model (including layer
// norms, which re-applied normalisation reuses), and leaves the head
// trainable. Residual shortcuts get an identity W0, cross-layer shortcuts a
// zero W0; `cut` exists only from layer 1 on.
void inject(Model& model, const AdapterConfig& config);

// Enables exactly the listed modules and disables all others. Adapter
// parameters survive disablement untouched.
void set_enabled(AdapterRegistry& registry, const std::vector<ModuleId>& enabled);

}  // namespace heterolora
