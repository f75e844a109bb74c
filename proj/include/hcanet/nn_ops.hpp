#pragma once

// Convolutional building blocks on top of the tensor engine. Feature maps are
// N x C x H x W; the 3-D convolution takes N x F x D x H x W. Zero padding,
// cross-correlation convention, stride 1 unless stated.

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "hcanet/rng.hpp"
#include "hcanet/tensor.hpp"

namespace hcanet::nn {

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t dilation = 1;
    std::size_t groups = 1;
};

template <typename T>
struct Conv2dWeights {
    Tensor<T> kernel;  // out x in/groups x kh x kw
    Tensor<T> bias;    // out, or undefined
    Conv2dOptions options;

    std::size_t out_channels() const { return kernel.size(0); }
    std::size_t in_channels() const { return kernel.size(1) * options.groups; }
};

template <typename T>
struct Conv3dWeights {
    Tensor<T> kernel;  // outF x inF x kd x kh x kw
    Tensor<T> bias;    // outF, or undefined
    std::array<std::size_t, 3> padding{1, 1, 1};
};

/// 2x2 stride-2 transposed convolution, kernel laid out in x out x 2 x 2.
template <typename T>
struct UpsampleWeights {
    Tensor<T> kernel;
    Tensor<T> bias;
};

/// Per-pixel normalisation across channels with per-channel affine terms.
template <typename T>
struct LayerNormWeights {
    Tensor<T> weight;  // C
    Tensor<T> bias;    // C
};

/// Ordered (name, tensor) list of learnable leaves.
template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
void collect(NamedParams<T>& out, const std::string& prefix, const Conv2dWeights<T>& w) {
    out.emplace_back(prefix + ".kernel", w.kernel);
    if (w.bias.defined()) out.emplace_back(prefix + ".bias", w.bias);
}

template <typename T>
void collect(NamedParams<T>& out, const std::string& prefix, const Conv3dWeights<T>& w) {
    out.emplace_back(prefix + ".kernel", w.kernel);
    if (w.bias.defined()) out.emplace_back(prefix + ".bias", w.bias);
}

template <typename T>
void collect(NamedParams<T>& out, const std::string& prefix, const UpsampleWeights<T>& w) {
    out.emplace_back(prefix + ".kernel", w.kernel);
    if (w.bias.defined()) out.emplace_back(prefix + ".bias", w.bias);
}

template <typename T>
void collect(NamedParams<T>& out, const std::string& prefix, const LayerNormWeights<T>& w) {
    out.emplace_back(prefix + ".weight", w.weight);
    out.emplace_back(prefix + ".bias", w.bias);
}

/// Output extent of a strided, dilated, padded window.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t padding, std::size_t dilation);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Conv2dWeights<T>& w);

/// conv2d restricted to groups == C with one input channel per group.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Conv2dWeights<T>& w);

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Conv3dWeights<T>& w);

/// View C as groups x (C/groups), transpose, flatten: channel i*(C/g)+j moves to j*g+i.
template <typename T>
Tensor<T> channel_shuffle(const Tensor<T>& x, std::size_t groups);

/// 3x3 stride-2 convolution doubling the channels; H and W must be even.
template <typename T>
Tensor<T> downsample(const Tensor<T>& x, const Conv2dWeights<T>& w);

/// 2x2 stride-2 transposed convolution halving the channels.
template <typename T>
Tensor<T> upsample(const Tensor<T>& x, const UpsampleWeights<T>& w);

template <typename T>
Tensor<T> layer_norm_channels(const Tensor<T>& x, const LayerNormWeights<T>& w, T eps = T(1e-5));

// Initialisation: uniform(-b, b) with b = 1/sqrt(fan_in) for kernels and biases.

template <typename T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng);

template <typename T>
Conv2dWeights<T> make_conv2d(std::size_t in, std::size_t out, std::size_t kernel,
                             Conv2dOptions options, bool bias, Rng& rng);

/// Cubic kernel kd x kh x kw with "same" padding.
template <typename T>
Conv3dWeights<T> make_conv3d(std::size_t in_features, std::size_t out_features,
                             std::array<std::size_t, 3> kernel, bool bias, Rng& rng);

template <typename T>
Conv2dWeights<T> make_downsample(std::size_t channels, bool bias, Rng& rng);

template <typename T>
UpsampleWeights<T> make_upsample(std::size_t channels, bool bias, Rng& rng);

template <typename T>
LayerNormWeights<T> make_layer_norm(std::size_t channels);

}  // namespace hcanet::nn
