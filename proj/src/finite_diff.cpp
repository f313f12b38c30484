#include "heterolora/finite_diff.hpp"

#include <cmath>

namespace heterolora {

namespace {

double eval_scalar(const std::function<Tensor()>& loss_fn) {
    Tensor out = loss_fn();
    double v = out.item();
    if (!std::isfinite(v)) throw NumericError("finite_diff_check: loss is not finite");
    return v;
}

}  // namespace

GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn,
                                  const std::vector<std::pair<std::string, Tensor>>& params,
                                  double h) {
    // Analytic pass on a private tape.
    std::vector<std::vector<double>> saved_grads;
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = loss_fn();
        if (!std::isfinite(loss.item())) throw NumericError("finite_diff_check: loss is not finite");
        backward(loss);
    }
    saved_grads.reserve(params.size());
    for (const auto& [name, p] : params) {
        saved_grads.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.size(), 0.0));
    }
    for (const auto& [name, p] : params) const_cast<Tensor&>(p).zero_grad();

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi].second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double orig = p.at(i);
            p.mut(i) = orig + h;
            const double fp = eval_scalar(loss_fn);
            p.mut(i) = orig - h;
            const double fm = eval_scalar(loss_fn);
            p.mut(i) = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = saved_grads[pi][i];
            const double abs_err = std::fabs(numeric - analytic);
            const double denom = std::max({std::fabs(numeric), std::fabs(analytic), 1e-6});
            const double rel_err = abs_err / denom;
            ++report.coords_checked;
            if (rel_err > report.max_rel_err) {
                report.max_rel_err = rel_err;
                report.max_abs_err = abs_err;
                report.worst_param = params[pi].first;
                report.worst_coord = i;
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace heterolora
