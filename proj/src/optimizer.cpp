#include "heterolora/optimizer.hpp"

#include <cmath>

namespace heterolora {

void AdamW::step(const std::vector<std::pair<std::string, Tensor>>& params) {
    for (const auto& [name, param] : params) {
        Tensor p = param;
        Slot& slot = slots_[name];
        if (slot.m.empty()) {
            slot.m.assign(p.size(), 0.0);
            slot.v.assign(p.size(), 0.0);
        }
        if (slot.m.size() != p.size()) {
            throw DimensionError("optimizer slot for '" + name + "' does not match parameter size");
        }
        ++slot.t;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(slot.t));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(slot.t));
        const bool has_grad = p.has_grad();
        const std::vector<double>* g = has_grad ? &p.grad() : nullptr;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g ? (*g)[i] : 0.0;
            if (!std::isfinite(gi)) {
                throw NumericError("non-finite gradient in '" + name + "' at coordinate " +
                                   std::to_string(i));
            }
            slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * gi;
            slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double m_hat = slot.m[i] / bc1;
            const double v_hat = slot.v[i] / bc2;
            double theta = p.at(i);
            theta -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
            theta -= cfg_.lr * cfg_.weight_decay * p.at(i);  // decoupled decay
            p.mut(i) = theta;
        }
    }
}

}  // namespace heterolora
