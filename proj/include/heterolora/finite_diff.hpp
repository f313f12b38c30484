#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "heterolora/tensor.hpp"

namespace heterolora {

struct GradCheckReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::string worst_param;
    std::size_t worst_coord = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coords_checked = 0;
};

// Compares tape gradients of loss_fn against central finite differences
// (f(t+h) - f(t-h)) / 2h for every coordinate of every listed parameter.
// loss_fn must be deterministic in the parameter values. Relative error uses
// a small floor so exactly-zero gradients compare cleanly.
GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn,
                                  const std::vector<std::pair<std::string, Tensor>>& params,
                                  double h = 1e-4);

}  // namespace heterolora
