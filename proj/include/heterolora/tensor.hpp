#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "heterolora/errors.hpp"

namespace heterolora {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Storage precision for forward values and adjoints. F32 rounds every op
// result through float; all verification runs in F64.
enum class Precision { F64, F32 };
Precision precision_mode();
void set_precision_mode(Precision p);

struct TensorData {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until the first adjoint lands
    bool requires_grad = false;
};

// Value-semantic handle over shared storage. Copying a Tensor aliases the
// same buffer; ops allocate fresh nodes.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, double fill, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor ones(Shape shape, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    std::size_t ndim() const { return d_->shape.size(); }
    std::size_t size() const { return d_->data.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::vector<double>& values() { return d_->data; }
    const std::vector<double>& values() const { return d_->data; }
    double at(std::size_t i) const { return d_->data[i]; }
    double at(std::size_t r, std::size_t c) const;
    double& mut(std::size_t i) { return d_->data[i]; }
    double& mut(std::size_t r, std::size_t c);
    double item() const;

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool rg) { d_->requires_grad = rg; }

    bool has_grad() const { return !d_->grad.empty(); }
    const std::vector<double>& grad() const;
    void zero_grad() { d_->grad.clear(); }
    void accumulate_grad(std::span<const double> g);

    // Node identity; two handles are the same tensor iff nodes match.
    const TensorData* node() const { return d_.get(); }
    std::shared_ptr<TensorData> shared() const { return d_; }

private:
    std::shared_ptr<TensorData> d_;
};

// Ordered record of executed operations. Replaying adjoints in reverse
// recorded order visits every recorded operation exactly once.
class Tape {
public:
    void record(std::function<void()> adjoint) { entries_.push_back(std::move(adjoint)); }
    std::size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }
    void replay_reverse() const;

private:
    std::vector<std::function<void()>> entries_;
};

// RAII activation of a tape on the current thread. Ops record adjoints only
// while a tape is active; with none active they run forward-only.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

Tape* active_tape();

// ---- recorded operations ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor add_bias(const Tensor& x, const Tensor& bias);  // bias over the last dimension
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice_rows(const Tensor& x, std::size_t row0, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t col0, std::size_t count);
Tensor embedding_gather(const Tensor& table, std::span<const int> ids);
Tensor reshape(const Tensor& x, Shape shape);
Tensor sum(const Tensor& x);
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

void backward(Tensor& loss);

}  // namespace heterolora
