#pragma once

// L = L_rec + lambda * L_grad, both mean-reduced.
//   L_rec  = mean |pred - target|
//   L_grad = sum over (horizontal, vertical, spectral) of
//            mean (D pred - D target)^2, D the forward difference x[i+1] - x[i]
// Tensors are N x B x H x W; an axis of extent 1 contributes 0 with a warning.

#include "hcanet/cube.hpp"
#include "hcanet/tensor.hpp"

namespace hcanet {

struct LossConfig {
    double lambda = 0.01;
};

template <typename T>
Tensor<T> l1_rec(const Tensor<T>& pred, const Tensor<T>& target);

template <typename T>
Tensor<T> grad_reg(const Tensor<T>& pred, const Tensor<T>& target);

template <typename T>
Tensor<T> total_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossConfig& cfg = {});

double l1_rec(const Cube& pred, const Cube& target);
double grad_reg(const Cube& pred, const Cube& target);
double total_loss(const Cube& pred, const Cube& target, const LossConfig& cfg = {});

}  // namespace hcanet
