#include "hcanet/loss.hpp"

#include "hcanet/errors.hpp"
#include "hcanet/log.hpp"

namespace hcanet {

namespace {

template <typename T>
void check_pair(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("loss operands differ in shape: " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
    }
    if (pred.dim() != 4) throw ShapeError("loss expects N x B x H x W, got " + shape_str(pred.shape()));
}

template <typename T>
Tensor<T> forward_difference(const Tensor<T>& x, std::size_t axis) {
    const std::size_t n = x.size(axis) - 1;
    return sub(slice(x, axis, 1, n), slice(x, axis, 0, n));
}

Tensor<double> cube_tensor(const Cube& c) {
    return cast<double>(cube_to_tensor(c));
}

}  // namespace

template <typename T>
Tensor<T> l1_rec(const Tensor<T>& pred, const Tensor<T>& target) {
    check_pair(pred, target);
    return mean(abs(sub(pred, target)));
}

template <typename T>
Tensor<T> grad_reg(const Tensor<T>& pred, const Tensor<T>& target) {
    check_pair(pred, target);
    // D is linear, so D pred - D target = D (pred - target).
    const auto err = sub(pred, target);
    static const char* names[] = {"", "spectral", "vertical", "horizontal"};
    Tensor<T> total;
    for (std::size_t axis : {3u, 2u, 1u}) {
        if (err.size(axis) < 2) {
            log_warning(std::string("grad_reg: ") + names[axis] + " extent is 1, term is 0");
            continue;
        }
        auto term = mean(square(forward_difference(err, axis)));
        total = total.defined() ? add(total, term) : term;
    }
    if (!total.defined()) return mul(sum(err), Tensor<T>::scalar(T(0)));
    return total;
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossConfig& cfg) {
    if (!(cfg.lambda >= 0)) throw ConfigError("loss lambda must be nonnegative");
    auto rec = l1_rec(pred, target);
    if (cfg.lambda == 0) return rec;
    return add(rec, scale(grad_reg(pred, target), static_cast<T>(cfg.lambda)));
}

double l1_rec(const Cube& pred, const Cube& target) {
    return l1_rec(cube_tensor(pred), cube_tensor(target)).item();
}

double grad_reg(const Cube& pred, const Cube& target) {
    return grad_reg(cube_tensor(pred), cube_tensor(target)).item();
}

double total_loss(const Cube& pred, const Cube& target, const LossConfig& cfg) {
    return total_loss(cube_tensor(pred), cube_tensor(target), cfg).item();
}

template Tensor<float> l1_rec<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> l1_rec<double>(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> grad_reg<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> grad_reg<double>(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> total_loss<float>(const Tensor<float>&, const Tensor<float>&, const LossConfig&);
template Tensor<double> total_loss<double>(const Tensor<double>&, const Tensor<double>&, const LossConfig&);

}  // namespace hcanet
