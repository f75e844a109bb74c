#include "hcanet/msfn.hpp"

namespace hcanet {

template <typename T>
void MsfnWeights<T>::collect(nn::NamedParams<T>& out, const std::string& prefix) const {
    nn::collect(out, prefix + ".expand_a", expand_a);
    if (expand_b.kernel.defined()) nn::collect(out, prefix + ".expand_b", expand_b);
    nn::collect(out, prefix + ".spectral", spectral);
    nn::collect(out, prefix + ".dil2", dil2);
    nn::collect(out, prefix + ".dil3", dil3);
    nn::collect(out, prefix + ".project", project);
}

template <typename T>
MsfnWeights<T> make_msfn(std::size_t channels, const MsfnOptions& options, Rng& rng) {
    if (options.gamma == 0) throw ConfigError("MSFN expansion ratio must be positive");
    const std::size_t c = channels;
    const std::size_t g = options.gamma * c;
    MsfnWeights<T> w;
    w.gamma = options.gamma;
    w.expand_a = nn::make_conv2d<T>(c, g, 1, {}, options.bias, rng);
    if (!options.single_expansion) w.expand_b = nn::make_conv2d<T>(c, g, 1, {}, options.bias, rng);
    const std::size_t depth = options.spectral_conv3d ? 3 : 1;
    w.spectral = nn::make_conv3d<T>(1, 1, {depth, 3, 3}, options.bias, rng);
    w.dil2 = nn::make_conv2d<T>(g, g, 3, {1, 2, 2, g}, options.bias, rng);
    w.dil3 = nn::make_conv2d<T>(g, g, 3, {1, 3, 3, g}, options.bias, rng);
    w.project = nn::make_conv2d<T>(g, c, 1, {}, options.bias, rng);
    return w;
}

template <typename T>
Tensor<T> gating(const Tensor<T>& x, const MsfnWeights<T>& w) {
    if (x.dim() != 4) throw ShapeError("MSFN expects N x C x H x W, got " + shape_str(x.shape()));
    if (x.size(1) != w.channels()) {
        throw ShapeError("MSFN weights are for " + std::to_string(w.channels()) +
                         " channels, input has " + std::to_string(x.size(1)));
    }
    const std::size_t n = x.size(0), h = x.size(2), wd = x.size(3);
    const std::size_t g = w.expand_a.out_channels();
    auto a = nn::conv2d(x, w.expand_a);
    auto b = w.expand_b.kernel.defined() ? nn::conv2d(x, w.expand_b) : a;
    auto volume = reshape(a, Shape{n, 1, g, h, wd});
    auto gate = gelu(reshape(nn::conv3d(volume, w.spectral), Shape{n, g, h, wd}));
    auto scales = add(nn::depthwise_conv2d(b, w.dil2), nn::depthwise_conv2d(b, w.dil3));
    return mul(gate, scales);
}

template <typename T>
Tensor<T> msfn_forward(const Tensor<T>& x, const MsfnWeights<T>& w) {
    return nn::conv2d(gating(x, w), w.project);
}

template <typename T>
void PlainFfnWeights<T>::collect(nn::NamedParams<T>& out, const std::string& prefix) const {
    nn::collect(out, prefix + ".expand", expand);
    nn::collect(out, prefix + ".project", project);
}

template <typename T>
PlainFfnWeights<T> make_plain_ffn(std::size_t channels, std::size_t gamma, bool bias, Rng& rng) {
    if (gamma == 0) throw ConfigError("FFN expansion ratio must be positive");
    PlainFfnWeights<T> w;
    w.expand = nn::make_conv2d<T>(channels, gamma * channels, 1, {}, bias, rng);
    w.project = nn::make_conv2d<T>(gamma * channels, channels, 1, {}, bias, rng);
    return w;
}

template <typename T>
Tensor<T> plain_ffn_forward(const Tensor<T>& x, const PlainFfnWeights<T>& w) {
    return nn::conv2d(gelu(nn::conv2d(x, w.expand)), w.project);
}

#define HCANET_INSTANTIATE_MSFN(T)                                                         \
    template struct MsfnWeights<T>;                                                        \
    template MsfnWeights<T> make_msfn<T>(std::size_t, const MsfnOptions&, Rng&);           \
    template Tensor<T> gating<T>(const Tensor<T>&, const MsfnWeights<T>&);                 \
    template Tensor<T> msfn_forward<T>(const Tensor<T>&, const MsfnWeights<T>&);           \
    template struct PlainFfnWeights<T>;                                                    \
    template PlainFfnWeights<T> make_plain_ffn<T>(std::size_t, std::size_t, bool, Rng&);   \
    template Tensor<T> plain_ffn_forward<T>(const Tensor<T>&, const PlainFfnWeights<T>&);

HCANET_INSTANTIATE_MSFN(float)
HCANET_INSTANTIATE_MSFN(double)

}  // namespace hcanet
