#include "hcanet/cafm.hpp"

namespace hcanet {

template <typename T>
void CafmWeights<T>::collect(nn::NamedParams<T>& out, const std::string& prefix) const {
    if (local_enabled) {
        nn::collect(out, prefix + ".local_pointwise", local_pointwise);
        nn::collect(out, prefix + ".local_spectral", local_spectral);
    }
    nn::collect(out, prefix + ".qkv_pointwise", qkv_pointwise);
    nn::collect(out, prefix + ".qkv_depthwise", qkv_depthwise);
    nn::collect(out, prefix + ".out_pointwise", out_pointwise);
    out.emplace_back(prefix + ".alpha", alpha);
}

template <typename T>
CafmWeights<T> make_cafm(std::size_t channels, const CafmOptions& options, Rng& rng) {
    if (options.shuffle_groups == 0 || channels % options.shuffle_groups != 0) {
        throw ShapeError("CAFM width " + std::to_string(channels) +
                         " is not divisible by the shuffle group count " +
                         std::to_string(options.shuffle_groups));
    }
    const std::size_t c = channels;
    CafmWeights<T> w;
    w.shuffle_groups = options.shuffle_groups;
    w.local_enabled = options.local_branch;
    if (options.local_branch) {
        w.local_pointwise = nn::make_conv2d<T>(c, c, 1, {}, options.bias, rng);
        const std::size_t depth = options.spectral_conv3d ? 3 : 1;
        w.local_spectral = nn::make_conv3d<T>(1, 1, {depth, 3, 3}, options.bias, rng);
    }
    w.qkv_pointwise = nn::make_conv2d<T>(c, 3 * c, 1, {}, options.bias, rng);
    w.qkv_depthwise = nn::make_conv2d<T>(3 * c, 3 * c, 3, {1, 1, 1, 3 * c}, options.bias, rng);
    w.out_pointwise = nn::make_conv2d<T>(c, c, 1, {}, options.bias, rng);
    w.alpha = Tensor<T>::scalar(T(1), true);
    return w;
}

template <typename T>
Tensor<T> local_branch(const Tensor<T>& y, const CafmWeights<T>& w) {
    if (y.dim() != 4) throw ShapeError("CAFM expects N x C x H x W, got " + shape_str(y.shape()));
    const std::size_t n = y.size(0), c = y.size(1), h = y.size(2), wd = y.size(3);
    auto mixed = nn::channel_shuffle(nn::conv2d(y, w.local_pointwise), w.shuffle_groups);
    // Channels double as the spectral depth of a single-feature volume.
    auto volume = reshape(mixed, Shape{n, 1, c, h, wd});
    return reshape(nn::conv3d(volume, w.local_spectral), Shape{n, c, h, wd});
}

template <typename T>
Tensor<T> attention_map(const Tensor<T>& q_hat, const Tensor<T>& k_hat, const Tensor<T>& alpha) {
    if (q_hat.dim() != 3 || k_hat.dim() != 3 || q_hat.size(0) != k_hat.size(0) ||
        q_hat.size(1) != k_hat.size(2) || q_hat.size(2) != k_hat.size(1)) {
        throw ShapeError("attention_map expects q_hat N x HW x C and k_hat N x C x HW, got " +
                         shape_str(q_hat.shape()) + " and " + shape_str(k_hat.shape()));
    }
    if (alpha.numel() != 1) throw ShapeError("attention temperature must be a scalar");
    auto logits = div(matmul(k_hat, q_hat), alpha);
    return softmax(logits, 2);
}

namespace {

template <typename T>
struct Projected {
    Tensor<T> attn, v;
};

template <typename T>
Projected<T> project(const Tensor<T>& y, const CafmWeights<T>& w) {
    if (y.dim() != 4) throw ShapeError("CAFM expects N x C x H x W, got " + shape_str(y.shape()));
    const std::size_t n = y.size(0), c = y.size(1), hw = y.size(2) * y.size(3);
    if (c != w.channels()) {
        throw ShapeError("CAFM weights are for " + std::to_string(w.channels()) +
                         " channels, input has " + std::to_string(c));
    }
    auto qkv = nn::depthwise_conv2d(nn::conv2d(y, w.qkv_pointwise), w.qkv_depthwise);
    auto q = reshape(slice(qkv, 1, 0, c), Shape{n, c, hw});
    auto k = reshape(slice(qkv, 1, c, c), Shape{n, c, hw});
    auto v = reshape(slice(qkv, 1, 2 * c, c), Shape{n, c, hw});
    auto q_hat = permute(q, {0, 2, 1});
    return {attention_map(q_hat, k, w.alpha), v};
}

}  // namespace

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& y, const CafmWeights<T>& w) {
    return project(y, w).attn;
}

template <typename T>
Tensor<T> attention_output(const Tensor<T>& y, const CafmWeights<T>& w) {
    auto p = project(y, w);
    auto mixed = reshape(matmul(p.attn, p.v), y.shape());
    return nn::conv2d(mixed, w.out_pointwise);
}

template <typename T>
Tensor<T> global_branch(const Tensor<T>& y, const CafmWeights<T>& w) {
    return add(attention_output(y, w), y);
}

template <typename T>
Tensor<T> cafm_forward(const Tensor<T>& y, const CafmWeights<T>& w) {
    auto out = global_branch(y, w);
    if (!w.local_enabled) return out;
    return add(out, local_branch(y, w));
}

#define HCANET_INSTANTIATE_CAFM(T)                                                        \
    template struct CafmWeights<T>;                                                       \
    template CafmWeights<T> make_cafm<T>(std::size_t, const CafmOptions&, Rng&);          \
    template Tensor<T> local_branch<T>(const Tensor<T>&, const CafmWeights<T>&);          \
    template Tensor<T> attention_map<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> attention_weights<T>(const Tensor<T>&, const CafmWeights<T>&);     \
    template Tensor<T> attention_output<T>(const Tensor<T>&, const CafmWeights<T>&);      \
    template Tensor<T> global_branch<T>(const Tensor<T>&, const CafmWeights<T>&);         \
    template Tensor<T> cafm_forward<T>(const Tensor<T>&, const CafmWeights<T>&);

HCANET_INSTANTIATE_CAFM(float)
HCANET_INSTANTIATE_CAFM(double)

}  // namespace hcanet
