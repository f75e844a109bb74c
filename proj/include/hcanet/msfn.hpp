#pragma once

// Multi-scale feed-forward network.
//
//   Gating(X) = gelu( conv3x3x3( conv1x1_a(X) ) )
//               * ( dil2( conv1x1_b(X) ) + dil3( conv1x1_b(X) ) )
//   X_out     = conv1x1( Gating(X) )
//
// The dilated 3x3 convolutions are depthwise over the gamma*C expanded
// channels, padded by their dilation rate. Both dilated branches read the same
// expand_b output; with single_expansion, expand_a feeds all three paths.

#include <cstddef>
#include <string>

#include "hcanet/nn_ops.hpp"

namespace hcanet {

struct MsfnOptions {
    std::size_t gamma = 2;
    /// false swaps the 3x3x3 gating kernel for a spatial-only 1x3x3 one.
    bool spectral_conv3d = true;
    bool single_expansion = false;
    bool bias = true;
};

template <typename T>
struct MsfnWeights {
    nn::Conv2dWeights<T> expand_a;  // C -> gC, GELU path
    nn::Conv2dWeights<T> expand_b;  // C -> gC, dilated paths; undefined when single
    nn::Conv3dWeights<T> spectral;  // one feature over (channel, H, W)
    nn::Conv2dWeights<T> dil2;      // gC depthwise 3x3, dilation 2
    nn::Conv2dWeights<T> dil3;      // gC depthwise 3x3, dilation 3
    nn::Conv2dWeights<T> project;   // gC -> C
    std::size_t gamma = 2;

    std::size_t channels() const { return project.out_channels(); }
    void collect(nn::NamedParams<T>& out, const std::string& prefix) const;
};

template <typename T>
MsfnWeights<T> make_msfn(std::size_t channels, const MsfnOptions& options, Rng& rng);

/// N x C x H x W -> N x gamma*C x H x W.
template <typename T>
Tensor<T> gating(const Tensor<T>& x, const MsfnWeights<T>& w);

template <typename T>
Tensor<T> msfn_forward(const Tensor<T>& x, const MsfnWeights<T>& w);

/// conv1x1(C -> gC), GELU, conv1x1(gC -> C). Stands in for MSFN when it is switched off.
template <typename T>
struct PlainFfnWeights {
    nn::Conv2dWeights<T> expand;
    nn::Conv2dWeights<T> project;

    void collect(nn::NamedParams<T>& out, const std::string& prefix) const;
};

template <typename T>
PlainFfnWeights<T> make_plain_ffn(std::size_t channels, std::size_t gamma, bool bias, Rng& rng);

template <typename T>
Tensor<T> plain_ffn_forward(const Tensor<T>& x, const PlainFfnWeights<T>& w);

}  // namespace hcanet
