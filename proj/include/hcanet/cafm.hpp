#pragma once

// Convolution and attention fusion module.
//
//   local:   F_conv = conv3x3x3( shuffle( conv1x1(Y) ) )
//   global:  Q,K,V  = dwconv3x3( conv1x1(Y) ) split along channels
//            A      = softmax_rows( K^ Q^ / alpha )            C x C
//            F_att  = conv1x1( A V ) + Y
//   output:  F_out  = F_att + F_conv
//
// The channel map A is C x C regardless of the spatial extent; Q^ is the
// (HW x C) view of Q and K^ the (C x HW) view of K. Each row of A is a
// probability vector over value channels, so every output channel of A V is
// a convex combination of the value channels.

#include <cstddef>
#include <string>

#include "hcanet/nn_ops.hpp"

namespace hcanet {

struct CafmOptions {
    std::size_t shuffle_groups = 4;
    bool local_branch = true;
    /// false swaps the 3x3x3 spectral kernel for a spatial-only 1x3x3 one.
    bool spectral_conv3d = true;
    bool bias = true;
};

template <typename T>
struct CafmWeights {
    nn::Conv2dWeights<T> local_pointwise;  // C -> C, 1x1
    nn::Conv3dWeights<T> local_spectral;   // one feature, 3x3x3 over (channel, H, W)
    nn::Conv2dWeights<T> qkv_pointwise;    // C -> 3C, 1x1
    nn::Conv2dWeights<T> qkv_depthwise;    // 3C, 3x3 depthwise
    nn::Conv2dWeights<T> out_pointwise;    // C -> C, 1x1
    Tensor<T> alpha;                       // learnable temperature, init 1
    std::size_t shuffle_groups = 4;
    bool local_enabled = true;

    std::size_t channels() const { return out_pointwise.out_channels(); }
    void collect(nn::NamedParams<T>& out, const std::string& prefix) const;
};

template <typename T>
CafmWeights<T> make_cafm(std::size_t channels, const CafmOptions& options, Rng& rng);

/// F_conv for an N x C x H x W input.
template <typename T>
Tensor<T> local_branch(const Tensor<T>& y, const CafmWeights<T>& w);

/// Row-softmax of (k_hat . q_hat) / alpha with q_hat N x HW x C and k_hat N x C x HW.
template <typename T>
Tensor<T> attention_map(const Tensor<T>& q_hat, const Tensor<T>& k_hat, const Tensor<T>& alpha);

/// The N x C x C map A computed from input y.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& y, const CafmWeights<T>& w);

/// conv1x1(A V): the global branch without its +Y skip term.
template <typename T>
Tensor<T> attention_output(const Tensor<T>& y, const CafmWeights<T>& w);

/// F_att = attention_output(y) + y.
template <typename T>
Tensor<T> global_branch(const Tensor<T>& y, const CafmWeights<T>& w);

/// F_att + F_conv, or F_att alone when the local branch is disabled.
template <typename T>
Tensor<T> cafm_forward(const Tensor<T>& y, const CafmWeights<T>& w);

}  // namespace hcanet
