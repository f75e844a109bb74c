#include "hcanet/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace hcanet {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

namespace {
thread_local bool grad_enabled = true;
}

bool GradMode::enabled() noexcept { return grad_enabled; }
void GradMode::set_enabled(bool on) noexcept { grad_enabled = on; }

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " elements");
    }
    for (auto e : shape) {
        if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape));
    }
    node_ = std::make_shared<detail::Node<T>>();
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_op(Shape shape, std::vector<T> data, std::vector<Tensor> inputs,
                             std::function<void(detail::Node<T>&)> backward, const char* op) {
    Tensor out(std::move(shape), std::move(data));
#ifndef NDEBUG
    for (T v : out.node_->data) {
        if (!std::isfinite(v)) {
            bool finite_inputs = true;
            for (const auto& in : inputs) {
                for (T u : in.data()) finite_inputs = finite_inputs && std::isfinite(u);
            }
            if (finite_inputs) throw NumericalError(std::string("non-finite output from ") + op);
            break;
        }
    }
#endif
    out.node_->op = op;
    if (!GradMode::enabled()) return out;
    const bool track = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor& t) { return t.requires_grad(); });
    if (!track) return out;
    out.node_->requires_grad = true;
    out.node_->inputs.reserve(inputs.size());
    for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
    out.node_->backward = std::move(backward);
    return out;
}

template <typename T>
std::size_t Tensor<T>::size(std::size_t axis) const {
    if (axis >= dim()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                                        shape_str(shape()));
    return node_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(node_->shape, node_->data, false);
}

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Tape<T> Tape<T>::record(const Tensor<T>& root) {
    using NodeT = detail::Node<T>;
    Tape tape;
    std::unordered_set<const NodeT*> visited;
    // Iterative post-order DFS; graphs are deep enough to hurt recursion.
    std::vector<std::pair<NodeT*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    tape.keep_.push_back(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            const auto& child = node->inputs[next++];
            if (child->requires_grad && visited.insert(child.get()).second) {
                tape.keep_.push_back(child);
                stack.emplace_back(child.get(), 0);
            }
        } else {
            tape.order_.push_back(node);
            stack.pop_back();
        }
    }
    return tape;
}

template <typename T>
void Tape<T>::run() {
    if (order_.empty()) return;
    auto* root = order_.back();
    root->grad_buffer().assign(root->data.size(), T(1));
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        auto* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
}

template <typename T>
void Tape<T>::release() {
    for (auto* node : order_) {
        if (!node->is_leaf()) {
            node->grad.clear();
            node->grad.shrink_to_fit();
            node->inputs.clear();
            node->backward = nullptr;
        }
    }
    order_.clear();
    keep_.clear();
}

template <typename T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward() on a loss that does not depend on any parameter");
    }
    auto tape = Tape<T>::record(loss);
    tape.run();
    tape.release();
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

enum class Broadcast { none, left_scalar, right_scalar };

template <typename T>
Broadcast check_binary(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::none;
    if (b.numel() == 1) return Broadcast::right_scalar;
    if (a.numel() == 1) return Broadcast::left_scalar;
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <typename T>
T sum_of(std::span<const T> v) {
    T s = 0;
    for (T x : v) s += x;
    return s;
}

// Adds g (or sum(g) when the target is a broadcast scalar) into node's grad.
template <typename T>
void route_grad(detail::Node<T>& target, const std::vector<T>& g, bool scalar_side) {
    if (!target.requires_grad) return;
    auto& dst = target.grad_buffer();
    if (scalar_side && dst.size() == 1 && g.size() != 1) {
        dst[0] += sum_of<T>(g);
        return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    const auto mode = check_binary(a, b, "add");
    const Tensor<T>& big = mode == Broadcast::left_scalar ? b : a;
    std::vector<T> out(big.numel());
    auto da = a.data();
    auto db = b.data();
    switch (mode) {
        case Broadcast::none:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
            break;
        case Broadcast::right_scalar:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[0];
            break;
        case Broadcast::left_scalar:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[0] + db[i];
            break;
    }
    return Tensor<T>::from_op(big.shape(), std::move(out), {a, b},
        [mode](detail::Node<T>& self) {
            route_grad(*self.inputs[0], self.grad, mode == Broadcast::left_scalar);
            route_grad(*self.inputs[1], self.grad, mode == Broadcast::right_scalar);
        }, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    const auto mode = check_binary(a, b, "sub");
    const Tensor<T>& big = mode == Broadcast::left_scalar ? b : a;
    std::vector<T> out(big.numel());
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T x = mode == Broadcast::left_scalar ? da[0] : da[i];
        const T y = mode == Broadcast::right_scalar ? db[0] : db[i];
        out[i] = x - y;
    }
    return Tensor<T>::from_op(big.shape(), std::move(out), {a, b},
        [mode](detail::Node<T>& self) {
            route_grad(*self.inputs[0], self.grad, mode == Broadcast::left_scalar);
            if (self.inputs[1]->requires_grad) {
                std::vector<T> neg(self.grad.size());
                for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -self.grad[i];
                route_grad(*self.inputs[1], neg, mode == Broadcast::right_scalar);
            }
        }, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    const auto mode = check_binary(a, b, "mul_elementwise");
    const Tensor<T>& big = mode == Broadcast::left_scalar ? b : a;
    std::vector<T> out(big.numel());
    auto da = a.data();
    auto db = b.data();
    if (mode == Broadcast::none) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) {
            const T x = mode == Broadcast::left_scalar ? da[0] : da[i];
            const T y = mode == Broadcast::right_scalar ? db[0] : db[i];
            out[i] = x * y;
        }
    }
    return Tensor<T>::from_op(big.shape(), std::move(out), {a, b},
        [mode](detail::Node<T>& self) {
            const auto& va = self.inputs[0]->data;
            const auto& vb = self.inputs[1]->data;
            const auto& g = self.grad;
            if (self.inputs[0]->requires_grad) {
                std::vector<T> ga(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] = g[i] * (mode == Broadcast::right_scalar ? vb[0] : vb[i]);
                }
                route_grad(*self.inputs[0], ga, mode == Broadcast::left_scalar);
            }
            if (self.inputs[1]->requires_grad) {
                std::vector<T> gb(g.size());
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gb[i] = g[i] * (mode == Broadcast::left_scalar ? va[0] : va[i]);
                }
                route_grad(*self.inputs[1], gb, mode == Broadcast::right_scalar);
            }
        }, "mul");
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    const auto mode = check_binary(a, b, "div");
    const Tensor<T>& big = mode == Broadcast::left_scalar ? b : a;
    std::vector<T> out(big.numel());
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T x = mode == Broadcast::left_scalar ? da[0] : da[i];
        const T y = mode == Broadcast::right_scalar ? db[0] : db[i];
        out[i] = x / y;
    }
    return Tensor<T>::from_op(big.shape(), std::move(out), {a, b},
        [mode](detail::Node<T>& self) {
            const auto& va = self.inputs[0]->data;
            const auto& vb = self.inputs[1]->data;
            const auto& g = self.grad;
            const std::size_t n = g.size();
            if (self.inputs[0]->requires_grad) {
                std::vector<T> ga(n);
                for (std::size_t i = 0; i < n; ++i) {
                    ga[i] = g[i] / (mode == Broadcast::right_scalar ? vb[0] : vb[i]);
                }
                route_grad(*self.inputs[0], ga, mode == Broadcast::left_scalar);
            }
            if (self.inputs[1]->requires_grad) {
                std::vector<T> gb(n);
                for (std::size_t i = 0; i < n; ++i) {
                    const T x = mode == Broadcast::left_scalar ? va[0] : va[i];
                    const T y = mode == Broadcast::right_scalar ? vb[0] : vb[i];
                    gb[i] = -g[i] * x / (y * y);
                }
                route_grad(*self.inputs[1], gb, mode == Broadcast::right_scalar);
            }
        }, "div");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    std::vector<T> out(x.numel());
    auto dx = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] * factor;
    return Tensor<T>::from_op(x.shape(), std::move(out), {x},
        [factor](detail::Node<T>& self) {
            auto& dst = self.inputs[0]->grad_buffer();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += self.grad[i] * factor;
        }, "scale");
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
    std::vector<T> out(x.numel());
    auto dx = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(dx[i]);
    return Tensor<T>::from_op(x.shape(), std::move(out), {x},
        [](detail::Node<T>& self) {
            const auto& v = self.inputs[0]->data;
            auto& dst = self.inputs[0]->grad_buffer();
            for (std::size_t i = 0; i < dst.size(); ++i) {
                const T s = v[i] > T(0) ? T(1) : (v[i] < T(0) ? T(-1) : T(0));
                dst[i] += self.grad[i] * s;
            }
        }, "abs");
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
    std::vector<T> out(x.numel());
    auto dx = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] * dx[i];
    return Tensor<T>::from_op(x.shape(), std::move(out), {x},
        [](detail::Node<T>& self) {
            const auto& v = self.inputs[0]->data;
            auto& dst = self.inputs[0]->grad_buffer();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += self.grad[i] * T(2) * v[i];
        }, "square");
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    std::vector<T> out(x.numel());
    auto dx = x.data();
    const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = dx[i] * T(0.5) * (T(1) + std::erf(dx[i] * inv_sqrt2));
    }
    return Tensor<T>::from_op(x.shape(), std::move(out), {x},
        [inv_sqrt2](detail::Node<T>& self) {
            const auto& v = self.inputs[0]->data;
            auto& dst = self.inputs[0]->grad_buffer();
            const T inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<T>;
            for (std::size_t i = 0; i < dst.size(); ++i) {
                const T cdf = T(0.5) * (T(1) + std::erf(v[i] * inv_sqrt2));
                const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v[i] * v[i]);
                dst[i] += self.grad[i] * (cdf + v[i] * pdf);
            }
        }, "gelu");
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    // double accumulator: float losses over ~1e5 voxels otherwise drift
    double s = 0.0;
    for (T v : x.data()) s += static_cast<double>(v);
    return Tensor<T>::from_op(Shape{1}, std::vector<T>{static_cast<T>(s)}, {x},
        [](detail::Node<T>& self) {
            auto& dst = self.inputs[0]->grad_buffer();
            const T g = self.grad[0];
            for (auto& d : dst) d += g;
        }, "sum");
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    double s = 0.0;
    for (T v : x.data()) s += static_cast<double>(v);
    const double n = static_cast<double>(x.numel());
    return Tensor<T>::from_op(Shape{1}, std::vector<T>{static_cast<T>(s / n)}, {x},
        [n](detail::Node<T>& self) {
            auto& dst = self.inputs[0]->grad_buffer();
            const T g = static_cast<T>(self.grad[0] / n);
            for (auto& d : dst) d += g;
        }, "mean");
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const bool batched = a.dim() == 3;
    if (!((a.dim() == 2 && b.dim() == 2) || (a.dim() == 3 && b.dim() == 3))) {
        throw ShapeError("matmul expects two 2-D or two 3-D tensors, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    const std::size_t batch = batched ? a.size(0) : 1;
    const std::size_t off = batched ? 1 : 0;
    const std::size_t m = a.size(off), k = a.size(off + 1);
    const std::size_t k2 = b.size(off), n = b.size(off + 1);
    if (k != k2 || (batched && b.size(0) != batch)) {
        throw ShapeError("matmul inner extents disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    std::vector<T> out(batch * m * n);
    for (std::size_t i = 0; i < batch; ++i) {
        MapC<T> A(a.data().data() + i * m * k, m, k);
        MapC<T> B(b.data().data() + i * k * n, k, n);
        MapM<T> C(out.data() + i * m * n, m, n);
        C.noalias() = A * B;
    }
    Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
    return Tensor<T>::from_op(std::move(shape), std::move(out), {a, b},
        [batch, m, k, n](detail::Node<T>& self) {
            auto& na = *self.inputs[0];
            auto& nb = *self.inputs[1];
            for (std::size_t i = 0; i < batch; ++i) {
                MapC<T> G(self.grad.data() + i * m * n, m, n);
                if (na.requires_grad) {
                    MapM<T> dA(na.grad_buffer().data() + i * m * k, m, k);
                    MapC<T> B(nb.data.data() + i * k * n, k, n);
                    dA.noalias() += G * B.transpose();
                }
                if (nb.requires_grad) {
                    MapM<T> dB(nb.grad_buffer().data() + i * k * n, k, n);
                    MapC<T> A(na.data.data() + i * m * k, m, k);
                    dB.noalias() += A.transpose() * G;
                }
            }
        }, "matmul");
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.dim()) {
        throw ShapeError("softmax axis " + std::to_string(axis) + " invalid for " +
                         shape_str(x.shape()));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.size(i);
    for (std::size_t i = axis + 1; i < x.dim(); ++i) inner *= x.size(i);
    const std::size_t len = x.size(axis);
    auto in = x.data();
    std::vector<T> out(x.numel());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < inner; ++j) {
            const std::size_t base = o * len * inner + j;
            T mx = in[base];
            for (std::size_t t = 1; t < len; ++t) mx = std::max(mx, in[base + t * inner]);
            T total = 0;
            for (std::size_t t = 0; t < len; ++t) {
                const T e = std::exp(in[base + t * inner] - mx);
                out[base + t * inner] = e;
                total += e;
            }
            for (std::size_t t = 0; t < len; ++t) out[base + t * inner] /= total;
        }
    }
    return Tensor<T>::from_op(x.shape(), std::move(out), {x},
        [outer, inner, len](detail::Node<T>& self) {
            const auto& y = self.data;
            const auto& g = self.grad;
            auto& dst = self.inputs[0]->grad_buffer();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t j = 0; j < inner; ++j) {
                    const std::size_t base = o * len * inner + j;
                    T dot = 0;
                    for (std::size_t t = 0; t < len; ++t) {
                        dot += g[base + t * inner] * y[base + t * inner];
                    }
                    for (std::size_t t = 0; t < len; ++t) {
                        const std::size_t idx = base + t * inner;
                        dst[idx] += y[idx] * (g[idx] - dot);
                    }
                }
            }
        }, "softmax");
}

// ---------------------------------------------------------------------------
// Rearrangement

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                         " changes the element count");
    }
    std::vector<T> out(x.data().begin(), x.data().end());
    return Tensor<T>::from_op(std::move(shape), std::move(out), {x},
        [](detail::Node<T>& self) {
            auto& dst = self.inputs[0]->grad_buffer();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += self.grad[i];
        }, "reshape");
}

namespace {

// out[i] = in[src(i)] for the axis permutation `axes`.
std::vector<std::size_t> permute_gather_index(const Shape& in_shape,
                                              const std::vector<std::size_t>& axes) {
    const std::size_t nd = in_shape.size();
    std::vector<std::size_t> in_stride(nd, 1);
    for (std::size_t i = nd; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
    Shape out_shape(nd);
    std::vector<std::size_t> step(nd);
    for (std::size_t i = 0; i < nd; ++i) {
        out_shape[i] = in_shape[axes[i]];
        step[i] = in_stride[axes[i]];
    }
    const std::size_t n = shape_numel(in_shape);
    std::vector<std::size_t> index(n);
    std::vector<std::size_t> counter(nd, 0);
    std::size_t src = 0;
    for (std::size_t i = 0; i < n; ++i) {
        index[i] = src;
        for (std::size_t d = nd; d-- > 0;) {
            ++counter[d];
            src += step[d];
            if (counter[d] < out_shape[d]) break;
            src -= step[d] * out_shape[d];
            counter[d] = 0;
        }
    }
    return index;
}

}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
    const std::size_t nd = x.dim();
    if (axes.size() != nd) throw ShapeError("permute: axis list length differs from rank");
    std::vector<bool> seen(nd, false);
    for (auto a : axes) {
        if (a >= nd || seen[a]) throw ShapeError("permute: invalid axis permutation");
        seen[a] = true;
    }
    Shape out_shape(nd);
    for (std::size_t i = 0; i < nd; ++i) out_shape[i] = x.size(axes[i]);
    auto index = permute_gather_index(x.shape(), axes);
    auto in = x.data();
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[index[i]];
    return Tensor<T>::from_op(std::move(out_shape), std::move(out), {x},
        [index = std::move(index)](detail::Node<T>& self) {
            auto& dst = self.inputs[0]->grad_buffer();
            for (std::size_t i = 0; i < index.size(); ++i) dst[index[i]] += self.grad[i];
        }, "permute");
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const Shape& ref = parts.front().shape();
    if (axis >= ref.size()) throw ShapeError("concat axis out of range for " + shape_str(ref));
    Shape out_shape = ref;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == ref.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == ref[i];
        if (!ok) {
            throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(ref) +
                             " on axis " + std::to_string(axis));
        }
        out_shape[axis] += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
    for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
    const std::size_t out_row = out_shape[axis] * inner;
    std::vector<T> out(shape_numel(out_shape));
    std::vector<std::size_t> widths;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.size(axis) * inner;
        auto src = p.data();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(src.begin() + o * w, w, out.begin() + o * out_row + offset);
        }
        widths.push_back(w);
        offset += w;
    }
    return Tensor<T>::from_op(std::move(out_shape), std::move(out), parts,
        [widths, outer, out_row](detail::Node<T>& self) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < widths.size(); ++k) {
                auto& in = *self.inputs[k];
                const std::size_t w = widths[k];
                if (in.requires_grad) {
                    auto& dst = in.grad_buffer();
                    for (std::size_t o = 0; o < outer; ++o) {
                        for (std::size_t t = 0; t < w; ++t) {
                            dst[o * w + t] += self.grad[o * out_row + off + t];
                        }
                    }
                }
                off += w;
            }
        }, "concat");
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
    if (axis >= x.dim() || length == 0 || start + length > x.size(axis)) {
        throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                         ") on axis " + std::to_string(axis) + " invalid for " +
                         shape_str(x.shape()));
    }
    Shape out_shape = x.shape();
    out_shape[axis] = length;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.size(i);
    for (std::size_t i = axis + 1; i < x.dim(); ++i) inner *= x.size(i);
    const std::size_t in_row = x.size(axis) * inner;
    const std::size_t w = length * inner;
    const std::size_t off = start * inner;
    auto src = x.data();
    std::vector<T> out(outer * w);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(src.begin() + o * in_row + off, w, out.begin() + o * w);
    }
    return Tensor<T>::from_op(std::move(out_shape), std::move(out), {x},
        [outer, in_row, w, off](detail::Node<T>& self) {
            auto& dst = self.inputs[0]->grad_buffer();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t t = 0; t < w; ++t) dst[o * in_row + off + t] += self.grad[o * w + t];
            }
        }, "slice");
}

// ---------------------------------------------------------------------------

#define HCANET_INSTANTIATE_TENSOR(T)                                                    \
    template class Tensor<T>;                                                           \
    template class Tape<T>;                                                             \
    template void backward<T>(const Tensor<T>&);                                        \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                      \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                      \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                      \
    template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                      \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                   \
    template Tensor<T> abs<T>(const Tensor<T>&);                                        \
    template Tensor<T> square<T>(const Tensor<T>&);                                     \
    template Tensor<T> gelu<T>(const Tensor<T>&);                                       \
    template Tensor<T> sum<T>(const Tensor<T>&);                                        \
    template Tensor<T> mean<T>(const Tensor<T>&);                                       \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> softmax<T>(const Tensor<T>&, std::size_t);                       \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                             \
    template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<std::size_t>&);   \
    template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::size_t);           \
    template Tensor<T> slice<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);

HCANET_INSTANTIATE_TENSOR(float)
HCANET_INSTANTIATE_TENSOR(double)

}  // namespace hcanet
