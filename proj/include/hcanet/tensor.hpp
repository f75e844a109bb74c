#pragma once

// Dense row-major tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle onto a graph node. Operations executed while
// GradMode is enabled and at least one input requires a gradient record their
// inputs and a backward rule on the output node. backward(loss) orders the
// reachable nodes into a Tape, runs the rules in reverse, keeps gradients on
// leaf parameters only and then releases the recorded graph.
//
// The engine is instantiated for float (training, inference) and double
// (gradient checking).

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hcanet/errors.hpp"

namespace hcanet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Thread-local switch for graph recording.
class GradMode {
public:
    static bool enabled() noexcept;
    static void set_enabled(bool on) noexcept;
};

class NoGradGuard {
public:
    NoGradGuard() noexcept : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until backward touches the node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads self.grad and accumulates into the grads of self.inputs.
    std::function<void(Node& self)> backward;
    const char* op = "leaf";

    bool is_leaf() const noexcept { return inputs.empty(); }

    /// Gradient buffer, zero-initialised on first access.
    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

}  // namespace detail

template <typename T>
class Tensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() = default;
    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    /// Output of a recorded operation. Drops inputs and the rule when grad
    /// recording is off or no input needs a gradient.
    static Tensor from_op(Shape shape, std::vector<T> data, std::vector<Tensor> inputs,
                          std::function<void(detail::Node<T>&)> backward, const char* op);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim() const { return node_->shape.size(); }
    std::size_t size(std::size_t axis) const;
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    /// In-place access for optimizers and weight surgery. Must not be used on
    /// a tensor whose value was captured by a pending backward rule.
    std::span<T> mutable_data() { return node_->data; }
    T item() const;

    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    bool is_leaf() const noexcept { return node_->is_leaf(); }
    bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad.clear(); }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    /// Value copy with no history.
    Tensor detach() const;

    const NodePtr& node() const noexcept { return node_; }

private:
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}
    NodePtr node_;
};

/// Reverse topological schedule of the graph under a root.
template <typename T>
class Tape {
public:
    static Tape record(const Tensor<T>& root);

    /// Topological order: every node appears after all of its inputs.
    const std::vector<detail::Node<T>*>& nodes() const noexcept { return order_; }

    /// Seeds root grad with 1 and runs each backward rule exactly once.
    void run();
    /// Drops intermediate grads and the recorded edges.
    void release();

private:
    std::vector<detail::Node<T>*> order_;
    std::vector<std::shared_ptr<detail::Node<T>>> keep_;
};

/// Accumulates dLoss/dParam into every reachable leaf that requires grad.
/// Throws ContractError for a non-scalar or untracked loss.
template <typename T>
void backward(const Tensor<T>& loss);

// Elementwise. Shapes must match, or one side is a single-element tensor.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> square(const Tensor<T>& x);
/// Exact GELU, x * Phi(x).
template <typename T> Tensor<T> gelu(const Tensor<T>& x);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

/// [m,k]x[k,n] or batched [b,m,k]x[b,k,n].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);

/// Converts between precisions; the result is a fresh leaf.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x, bool requires_grad = false) {
    std::vector<To> out(x.data().begin(), x.data().end());
    return Tensor<To>(x.shape(), std::move(out), requires_grad);
}

}  // namespace hcanet
