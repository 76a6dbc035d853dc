#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pimforce::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;
struct TensorImpl;

// Backward closure of one op. It reads the output gradient from `out` and
// accumulates into the inputs' gradients.
struct Node {
    std::vector<Tensor> inputs;
    std::function<void(TensorImpl& out)> backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::shared_ptr<Node> grad_fn;

    std::span<double> ensure_grad();
};

// Dense row-major double tensor with reverse-mode autograd. Copies share
// storage; use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<double> data() { return impl_->data; }
    std::span<const double> data() const { return impl_->data; }
    double item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }
    bool has_grad() const { return !impl_->grad.empty(); }
    // Gradient buffer, allocated (zeroed) on first access. Copies of a handle
    // share it, so accumulating through a const handle is allowed.
    std::span<double> grad() const { return impl_->ensure_grad(); }
    // Gradient without allocating; empty when nothing was accumulated.
    std::span<const double> grad_view() const { return impl_->grad; }
    void zero_grad();

    // Seeds d(this)/d(this) = 1 for a one-element tensor and propagates.
    void backward();

    // Same values, no graph linkage.
    Tensor detach() const;
    Tensor clone() const;

    TensorImpl* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl>& shared() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;

    friend Tensor make_result(Shape shape, std::vector<Tensor> inputs,
                              std::function<void(TensorImpl&)> backward);
};

// Creates an op output. The node is attached only when grad mode is on and
// some input requires grad; `backward` is then called once per backward pass.
Tensor make_result(Shape shape, std::vector<Tensor> inputs,
                   std::function<void(TensorImpl&)> backward);

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

}  // namespace pimforce::nn
