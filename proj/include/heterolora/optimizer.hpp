#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "heterolora/tensor.hpp"

namespace heterolora {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Adaptive moment estimation with bias correction and decoupled weight
// decay: the decay is applied straight to the parameter, not folded into the
// gradient. Moment slots are keyed by parameter name and each keeps its own
// step count, so adapters toggled out of a run resume exactly where they
// stopped.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    const AdamWConfig& config() const { return cfg_; }

    // One update over the given parameters. A parameter without an
    // accumulated gradient is treated as zero-gradient. Non-finite gradients
    // abort with the parameter name.
    void step(const std::vector<std::pair<std::string, Tensor>>& params);

    bool has_slot(const std::string& name) const { return slots_.count(name) != 0; }

private:
    struct Slot {
        std::vector<double> m, v;
        long t = 0;
    };
    std::map<std::string, Slot> slots_;
    AdamWConfig cfg_;
};

}  // namespace heterolora
