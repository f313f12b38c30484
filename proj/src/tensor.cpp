#include "heterolora/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace heterolora {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local Precision g_precision = Precision::F64;

void apply_precision(std::vector<double>& v) {
    if (g_precision == Precision::F32) {
        for (double& x : v) x = static_cast<double>(static_cast<float>(x));
    }
}

bool grad_needed(std::initializer_list<const Tensor*> inputs) {
    if (g_active_tape == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

void require_2d(const Tensor& t, const char* op) {
    if (t.ndim() != 2) {
        throw DimensionError(std::string(op) + ": expected a 2-d tensor, got shape " + shape_str(t.shape()));
    }
}

// Adjoint buffer of a node, allocated zero on first touch.
std::vector<double>& grad_buf(const std::shared_ptr<TensorData>& n) {
    if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
    return n->grad;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Precision precision_mode() { return g_precision; }
void set_precision_mode(Precision p) { g_precision = p; }

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
    for (std::size_t e : shape) {
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    d_ = std::make_shared<TensorData>();
    d_->data.assign(shape_numel(shape), fill);
    d_->shape = std::move(shape);
    d_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    }
    d_ = std::make_shared<TensorData>();
    d_->shape = std::move(shape);
    d_->data = std::move(values);
    d_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return Tensor(std::move(shape), 0.0, requires_grad); }
Tensor Tensor::ones(Shape shape, bool requires_grad) { return Tensor(std::move(shape), 1.0, requires_grad); }
Tensor Tensor::scalar(double v, bool requires_grad) { return Tensor(Shape{1}, std::vector<double>{v}, requires_grad); }

std::size_t Tensor::rows() const {
    return d_->shape.empty() ? 1 : d_->shape[0];
}

std::size_t Tensor::cols() const {
    if (d_->shape.size() != 2) throw DimensionError("cols(): tensor is not 2-d: " + shape_str(d_->shape));
    return d_->shape[1];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    return d_->data[r * cols() + c];
}

double& Tensor::mut(std::size_t r, std::size_t c) {
    return d_->data[r * cols() + c];
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item(): tensor is not a scalar: " + shape_str(shape()));
    return d_->data[0];
}

const std::vector<double>& Tensor::grad() const {
    if (d_->grad.empty()) throw ContractError("grad(): no gradient has been accumulated");
    return d_->grad;
}

void Tensor::accumulate_grad(std::span<const double> g) {
    if (!d_->requires_grad) return;
    if (g.size() != d_->data.size()) {
        throw DimensionError("accumulate_grad: adjoint length " + std::to_string(g.size()) +
                             " does not match tensor of shape " + shape_str(d_->shape));
    }
    std::vector<double>& acc = grad_buf(d_);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    apply_precision(acc);
}

void Tape::replay_reverse() const {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

Tape* active_tape() { return g_active_tape; }

void backward(Tensor& loss) {
    Tape* tape = g_active_tape;
    if (tape == nullptr) throw ContractError("backward: no active tape");
    if (loss.size() != 1) {
        throw ContractError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    }
    const double one = 1.0;
    loss.accumulate_grad(std::span<const double>(&one, 1));
    tape->replay_reverse();
}

// ---- op helpers ----

namespace {

Tensor make_output(Shape shape, std::vector<double> values, bool rg) {
    apply_precision(values);
    Tensor out(std::move(shape), std::move(values));
    out.set_requires_grad(rg);
    return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
    if (k != k2) {
        throw DimensionError("matmul: inner extents differ: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = &bv[p * n];
            double* orow = &out[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    bool rg = grad_needed({&a, &b});
    Tensor y = make_output({m, n}, std::move(out), rg);
    if (rg) {
        auto an = a.shared(), bn = b.shared(), yn = y.shared();
        active_tape()->record([an, bn, yn, m, k, n]() {
            if (yn->grad.empty()) return;
            const auto& g = yn->grad;
            if (an->requires_grad) {
                auto& ga = grad_buf(an);
                // dL/da = g . b^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bn->data[p * n + j];
                        ga[i * k + p] += s;
                    }
            }
            if (bn->requires_grad) {
                auto& gb = grad_buf(bn);
                // dL/db = a^T . g
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t j = 0; j < n; ++j) {
                        double s = 0.0;
                        for (std::size_t i = 0; i < m; ++i) s += an->data[i * k + p] * g[i * n + j];
                        gb[p * n + j] += s;
                    }
            }
        });
    }
    return y;
}

Tensor transpose(const Tensor& x) {
    require_2d(x, "transpose");
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x.values()[i * n + j];
    bool rg = grad_needed({&x});
    Tensor y = make_output({n, m}, std::move(out), rg);
    if (rg) {
        auto xn = x.shared(), yn = y.shared();
        active_tape()->record([xn, yn, m, n]() {
            if (yn->grad.empty() || !xn->requires_grad) return;
            auto& gx = grad_buf(xn);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += yn->grad[j * m + i];
        });
    }
    return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    bool rg = grad_needed({&a, &b});
    Tensor y = make_output(a.shape(), std::move(out), rg);
    if (rg) {
        auto an = a.shared(), bn = b.shared(), yn = y.shared();
        active_tape()->record([an, bn, yn]() {
            if (yn->grad.empty()) return;
            if (an->requires_grad) {
                auto& ga = grad_buf(an);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += yn->grad[i];
            }
            if (bn->requires_grad) {
                auto& gb = grad_buf(bn);
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += yn->grad[i];
            }
        });
    }
    return y;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (bias.ndim() != 1) throw DimensionError("add_bias: bias must be 1-d, got " + shape_str(bias.shape()));
    const std::size_t d = bias.size();
    if (x.shape().back() != d) {
        throw DimensionError("add_bias: last extent of " + shape_str(x.shape()) + " does not match bias " +
                             shape_str(bias.shape()));
    }
    std::vector<double> out(x.size());
    const std::size_t nrows = x.size() / d;
    for (std::size_t r = 0; r < nrows; ++r)
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x.values()[r * d + j] + bias.values()[j];
    bool rg = grad_needed({&x, &bias});
    Tensor y = make_output(x.shape(), std::move(out), rg);
    if (rg) {
        auto xn = x.shared(), bn = bias.shared(), yn = y.shared();
        active_tape()->record([xn, bn, yn, nrows, d]() {
            if (yn->grad.empty()) return;
            if (xn->requires_grad) {
                auto& gx = grad_buf(xn);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += yn->grad[i];
            }
            if (bn->requires_grad) {
                auto& gb = grad_buf(bn);
                for (std::size_t r = 0; r < nrows; ++r)
                    for (std::size_t j = 0; j < d; ++j) gb[j] += yn->grad[r * d + j];
            }
        });
    }
    return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    bool rg = grad_needed({&a, &b});
    Tensor y = make_output(a.shape(), std::move(out), rg);
    if (rg) {
        auto an = a.shared(), bn = b.shared(), yn = y.shared();
        active_tape()->record([an, bn, yn]() {
            if (yn->grad.empty()) return;
            if (an->requires_grad) {
                auto& ga = grad_buf(an);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += yn->grad[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                auto& gb = grad_buf(bn);
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += yn->grad[i] * an->data[i];
            }
        });
    }
    return y;
}

Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * c;
    bool rg = grad_needed({&x});
    Tensor y = make_output(x.shape(), std::move(out), rg);
    if (rg) {
        auto xn = x.shared(), yn = y.shared();
        active_tape()->record([xn, yn, c]() {
            if (yn->grad.empty() || !xn->requires_grad) return;
            auto& gx = grad_buf(xn);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += yn->grad[i] * c;
        });
    }
    return y;
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
    bool rg = grad_needed({&x});
    Tensor y = make_output(x.shape(), std::move(out), rg);
    if (rg) {
        auto xn = x.shared(), yn = y.shared();
        active_tape()->record([xn, yn]() {
            if (yn->grad.empty() || !xn->requires_grad) return;
            auto& gx = grad_buf(xn);
            // subgradient at 0 is 0
            for (std::size_t i = 0; i < gx.size(); ++i)
                if (xn->data[i] > 0.0) gx[i] += yn->grad[i];
        });
    }
    return y;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.ndim()) {
        throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                             shape_str(x.shape()));
    }
    const std::size_t len = x.shape()[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
    for (std::size_t i = axis + 1; i < x.ndim(); ++i) inner *= x.shape()[i];

    std::vector<double> out(x.size());
    const auto& xv = x.values();
    const double neg_inf = -std::numeric_limits<double>::infinity();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double mx = neg_inf;
            for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, xv[base + i * inner]);
            if (mx == neg_inf) {
                throw NumericError("softmax: degenerate slice, all entries are -inf");
            }
            double denom = 0.0;
            for (std::size_t i = 0; i < len; ++i) {
                double e = std::exp(xv[base + i * inner] - mx);
                out[base + i * inner] = e;
                denom += e;
            }
            for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= denom;
        }
    }
    bool rg = grad_needed({&x});
    Tensor y = make_output(x.shape(), std::move(out), rg);
    if (rg) {
        auto xn = x.shared(), yn = y.shared();
        active_tape()->record([xn, yn, outer, inner, len]() {
            if (yn->grad.empty() || !xn->requires_grad) return;
            auto& gx = grad_buf(xn);
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * len * inner + in;
                    double dot = 0.0;
                    for (std::size_t i = 0; i < len; ++i)
                        dot += yn->grad[base + i * inner] * yn->data[base + i * inner];
                    for (std::size_t i = 0; i < len; ++i) {
                        const std::size_t k = base + i * inner;
                        gx[k] += yn->data[k] * (yn->grad[k] - dot);
                    }
                }
            }
        });
    }
    return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (eps < 0.0) throw ContractError("layer_norm: eps must be >= 0");
    const std::size_t d = x.shape().back();
    if (gain.ndim() != 1 || gain.size() != d || bias.ndim() != 1 || bias.size() != d) {
        throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                             " do not match last extent of " + shape_str(x.shape()));
    }
    const std::size_t nrows = x.size() / d;
    std::vector<double> out(x.size());
    std::vector<double> mean(nrows), inv_std(nrows);
    const auto& xv = x.values();
    for (std::size_t r = 0; r < nrows; ++r) {
        double m = 0.0;
        for (std::size_t j = 0; j < d; ++j) m += xv[r * d + j];
        m /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            double c = xv[r * d + j] - m;
            var += c * c;
        }
        var /= static_cast<double>(d);  // population variance
        mean[r] = m;
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            out[r * d + j] = (xv[r * d + j] - m) * inv_std[r] * gain.values()[j] + bias.values()[j];
        }
    }
    bool rg = grad_needed({&x, &gain, &bias});
    Tensor y = make_output(x.shape(), std::move(out), rg);
    if (rg) {
        auto xn = x.shared(), gn = gain.shared(), bn = bias.shared(), yn = y.shared();
        active_tape()->record([xn, gn, bn, yn, nrows, d, mean, inv_std]() {
            if (yn->grad.empty()) return;
            const double dd = static_cast<double>(d);
            for (std::size_t r = 0; r < nrows; ++r) {
                const double is = inv_std[r];
                // xhat_j = (x_j - mean) * inv_std
                std::vector<double> xhat(d), gh(d);
                for (std::size_t j = 0; j < d; ++j) {
                    xhat[j] = (xn->data[r * d + j] - mean[r]) * is;
                    gh[j] = yn->grad[r * d + j] * gn->data[j];  // dL/dxhat
                }
                if (bn->requires_grad) {
                    auto& gb = grad_buf(bn);
                    for (std::size_t j = 0; j < d; ++j) gb[j] += yn->grad[r * d + j];
                }
                if (gn->requires_grad) {
                    auto& gg = grad_buf(gn);
                    for (std::size_t j = 0; j < d; ++j) gg[j] += yn->grad[r * d + j] * xhat[j];
                }
                if (xn->requires_grad) {
                    double sum_gh = 0.0, sum_gh_xhat = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        sum_gh += gh[j];
                        sum_gh_xhat += gh[j] * xhat[j];
                    }
                    auto& gx = grad_buf(xn);
                    for (std::size_t j = 0; j < d; ++j) {
                        gx[r * d + j] += is * (gh[j] - sum_gh / dd - xhat[j] * sum_gh_xhat / dd);
                    }
                }
            }
        });
    }
    return y;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat: no tensors given");
    if (axis > 1) throw DimensionError("concat: only 2-d tensors are supported");
    for (const Tensor& p : parts) require_2d(p, "concat");

    std::size_t rows0 = parts[0].rows(), cols0 = parts[0].cols();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        if (axis == 0 && p.cols() != cols0)
            throw DimensionError("concat: column mismatch " + shape_str(p.shape()) + " vs " +
                                 shape_str(parts[0].shape()));
        if (axis == 1 && p.rows() != rows0)
            throw DimensionError("concat: row mismatch " + shape_str(p.shape()) + " vs " +
                                 shape_str(parts[0].shape()));
        total += (axis == 0) ? p.rows() : p.cols();
    }
    const std::size_t out_rows = (axis == 0) ? total : rows0;
    const std::size_t out_cols = (axis == 0) ? cols0 : total;
    std::vector<double> out(out_rows * out_cols);
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        if (axis == 0) {
            std::copy(p.values().begin(), p.values().end(), out.begin() + off * out_cols);
            off += p.rows();
        } else {
            for (std::size_t r = 0; r < rows0; ++r)
                std::copy(p.values().begin() + r * p.cols(), p.values().begin() + (r + 1) * p.cols(),
                          out.begin() + r * out_cols + off);
            off += p.cols();
        }
    }
    bool rg = false;
    if (g_active_tape != nullptr) {
        for (const Tensor& p : parts)
            if (p.requires_grad()) { rg = true; break; }
    }
    Tensor y = make_output({out_rows, out_cols}, std::move(out), rg);
    if (rg) {
        std::vector<std::shared_ptr<TensorData>> ns;
        ns.reserve(parts.size());
        for (const Tensor& p : parts) ns.push_back(p.shared());
        auto yn = y.shared();
        active_tape()->record([ns, yn, axis, out_cols]() {
            if (yn->grad.empty()) return;
            std::size_t off = 0;
            for (const auto& n : ns) {
                const std::size_t pr = n->shape[0], pc = n->shape[1];
                if (n->requires_grad) {
                    auto& g = grad_buf(n);
                    if (axis == 0) {
                        for (std::size_t i = 0; i < pr * pc; ++i) g[i] += yn->grad[off * pc + i];
                    } else {
                        for (std::size_t r = 0; r < pr; ++r)
                            for (std::size_t c = 0; c < pc; ++c)
                                g[r * pc + c] += yn->grad[r * out_cols + off + c];
                    }
                }
                off += (axis == 0) ? pr : pc;
            }
        });
    }
    return y;
}

Tensor slice_rows(const Tensor& x, std::size_t row0, std::size_t count) {
    require_2d(x, "slice_rows");
    if (row0 + count > x.rows()) {
        throw IndexError("slice_rows: [" + std::to_string(row0) + ", " + std::to_string(row0 + count) +
                         ") exceeds " + shape_str(x.shape()));
    }
    const std::size_t n = x.cols();
    std::vector<double> out(x.values().begin() + row0 * n, x.values().begin() + (row0 + count) * n);
    bool rg = grad_needed({&x});
    Tensor y = make_output({count, n}, std::move(out), rg);
    if (rg) {
        auto xn = x.shared(), yn = y.shared();
        active_tape()->record([xn, yn, row0, count, n]() {
            if (yn->grad.empty() || !xn->requires_grad) return;
            auto& gx = grad_buf(xn);
            for (std::size_t i = 0; i < count * n; ++i) gx[row0 * n + i] += yn->grad[i];
        });
    }
    return y;
}

Tensor slice_cols(const Tensor& x, std::size_t col0, std::size_t count) {
    require_2d(x, "slice_cols");
    if (col0 + count > x.cols()) {
        throw IndexError("slice_cols: [" + std::to_string(col0) + ", " + std::to_string(col0 + count) +
                         ") exceeds " + shape_str(x.shape()));
    }
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * count);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < count; ++c) out[r * count + c] = x.values()[r * n + col0 + c];
    bool rg = grad_needed({&x});
    Tensor y = make_output({m, count}, std::move(out), rg);
    if (rg) {
        auto xn = x.shared(), yn = y.shared();
        active_tape()->record([xn, yn, col0, count, m, n]() {
            if (yn->grad.empty() || !xn->requires_grad) return;
            auto& gx = grad_buf(xn);
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < count; ++c) gx[r * n + col0 + c] += yn->grad[r * count + c];
        });
    }
    return y;
}

Tensor embedding_gather(const Tensor& table, std::span<const int> ids) {
    require_2d(table, "embedding_gather");
    const std::size_t v = table.rows(), d = table.cols();
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= v) {
            throw IndexError("embedding_gather: id " + std::to_string(id) + " out of range for table " +
                             shape_str(table.shape()));
        }
    }
    std::vector<double> out(ids.size() * d);
    for (std::size_t t = 0; t < ids.size(); ++t)
        std::copy(table.values().begin() + ids[t] * d, table.values().begin() + (ids[t] + 1) * d,
                  out.begin() + t * d);
    bool rg = grad_needed({&table});
    Tensor y = make_output({ids.size(), d}, std::move(out), rg);
    if (rg) {
        auto tn = table.shared(), yn = y.shared();
        std::vector<int> idv(ids.begin(), ids.end());
        active_tape()->record([tn, yn, idv, d]() {
            if (yn->grad.empty() || !tn->requires_grad) return;
            auto& gt = grad_buf(tn);
            for (std::size_t t = 0; t < idv.size(); ++t)
                for (std::size_t j = 0; j < d; ++j)
                    gt[static_cast<std::size_t>(idv[t]) * d + j] += yn->grad[t * d + j];
        });
    }
    return y;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape) +
                             " changes element count");
    }
    bool rg = grad_needed({&x});
    Tensor y = make_output(std::move(shape), x.values(), rg);
    if (rg) {
        auto xn = x.shared(), yn = y.shared();
        active_tape()->record([xn, yn]() {
            if (yn->grad.empty() || !xn->requires_grad) return;
            auto& gx = grad_buf(xn);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += yn->grad[i];
        });
    }
    return y;
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    bool rg = grad_needed({&x});
    Tensor y = make_output({1}, {s}, rg);
    if (rg) {
        auto xn = x.shared(), yn = y.shared();
        active_tape()->record([xn, yn]() {
            if (yn->grad.empty() || !xn->requires_grad) return;
            auto& gx = grad_buf(xn);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += yn->grad[0];
        });
    }
    return y;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
    require_2d(logits, "cross_entropy");
    const std::size_t batch = logits.rows(), classes = logits.cols();
    if (targets.size() != batch) {
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for batch of " +
                             std::to_string(batch));
    }
    for (int t : targets) {
        if (t < 0 || static_cast<std::size_t>(t) >= classes) {
            throw IndexError("cross_entropy: target " + std::to_string(t) + " out of range for " +
                             std::to_string(classes) + " classes");
        }
    }
    // mean over the batch of -log softmax(logits)[target], via log-sum-exp
    double loss = 0.0;
    std::vector<double> probs(batch * classes);
    const auto& lv = logits.values();
    for (std::size_t r = 0; r < batch; ++r) {
        double mx = lv[r * classes];
        for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, lv[r * classes + j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < classes; ++j) denom += std::exp(lv[r * classes + j] - mx);
        const double lse = mx + std::log(denom);
        loss += lse - lv[r * classes + static_cast<std::size_t>(targets[r])];
        for (std::size_t j = 0; j < classes; ++j)
            probs[r * classes + j] = std::exp(lv[r * classes + j] - lse);
    }
    loss /= static_cast<double>(batch);
    bool rg = grad_needed({&logits});
    Tensor y = make_output({1}, {loss}, rg);
    if (rg) {
        auto ln = logits.shared(), yn = y.shared();
        std::vector<int> tv(targets.begin(), targets.end());
        active_tape()->record([ln, yn, tv, batch, classes, probs]() {
            if (yn->grad.empty() || !ln->requires_grad) return;
            const double g = yn->grad[0] / static_cast<double>(batch);
            auto& gl = grad_buf(ln);
            for (std::size_t r = 0; r < batch; ++r)
                for (std::size_t j = 0; j < classes; ++j) {
                    double delta = (j == static_cast<std::size_t>(tv[r])) ? 1.0 : 0.0;
                    gl[r * classes + j] += g * (probs[r * classes + j] - delta);
                }
        });
    }
    return y;
}

}  // namespace heterolora
