#include "hcanet/nn_ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

namespace hcanet::nn {

namespace {

using std::ptrdiff_t;
using std::size_t;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;

struct Range {
    size_t lo = 0;
    size_t hi = 0;  // exclusive
};

// Output positions o in [0, n_out) with 0 <= o*stride + offset < n_in.
Range valid_outputs(size_t n_out, ptrdiff_t offset, size_t stride, size_t n_in) {
    const auto s = static_cast<ptrdiff_t>(stride);
    ptrdiff_t lo = 0;
    if (offset < 0) lo = (-offset + s - 1) / s;
    const ptrdiff_t last_in = static_cast<ptrdiff_t>(n_in) - 1 - offset;
    if (last_in < 0) return {};
    ptrdiff_t hi = last_in / s + 1;
    hi = std::min<ptrdiff_t>(hi, static_cast<ptrdiff_t>(n_out));
    if (hi <= lo) return {};
    return {static_cast<size_t>(lo), static_cast<size_t>(hi)};
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

struct Conv2dGeometry {
    size_t n, c, h, w;        // input
    size_t o, cg, og, groups;  // channels
    size_t kh, kw, stride, pad, dil;
    size_t ho, wo;

    size_t k() const { return cg * kh * kw; }
    size_t hw() const { return h * w; }
    size_t howo() const { return ho * wo; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
    bool depthwise() const { return cg == 1 && og == 1 && groups == c; }
};

template <typename T>
Conv2dGeometry conv2d_geometry(const Tensor<T>& x, const Conv2dWeights<T>& w) {
    require(x.dim() == 4, "conv2d expects N x C x H x W input, got " + shape_str(x.shape()));
    require(w.kernel.defined() && w.kernel.dim() == 4, "conv2d kernel must be 4-D");
    const auto& opt = w.options;
    require(opt.groups >= 1 && opt.dilation >= 1 && opt.stride >= 1,
            "conv2d: groups, dilation and stride must be positive");
    Conv2dGeometry g{};
    g.n = x.size(0);
    g.c = x.size(1);
    g.h = x.size(2);
    g.w = x.size(3);
    g.o = w.kernel.size(0);
    g.cg = w.kernel.size(1);
    g.kh = w.kernel.size(2);
    g.kw = w.kernel.size(3);
    g.groups = opt.groups;
    g.stride = opt.stride;
    g.pad = opt.padding;
    g.dil = opt.dilation;
    require(g.c % g.groups == 0 && g.o % g.groups == 0,
            "conv2d: channels " + std::to_string(g.c) + "->" + std::to_string(g.o) +
                " not divisible by groups " + std::to_string(g.groups));
    require(g.cg * g.groups == g.c, "conv2d: input has " + std::to_string(g.c) +
                                        " channels, kernel expects " +
                                        std::to_string(g.cg * g.groups));
    g.og = g.o / g.groups;
    if (w.bias.defined()) {
        require(w.bias.numel() == g.o, "conv2d: bias length differs from output channels");
    }
    g.ho = conv_out_extent(g.h, g.kh, g.stride, g.pad, g.dil);
    g.wo = conv_out_extent(g.w, g.kw, g.stride, g.pad, g.dil);
    return g;
}

// cols[(c*kh + i)*kw + j][oy*wo + ox] = x[c][oy*s - p + i*d][ox*s - p + j*d]
template <typename T>
void im2col(const T* x, const Conv2dGeometry& g, T* cols) {
    const size_t howo = g.howo();
    for (size_t c = 0; c < g.cg; ++c) {
        const T* xc = x + c * g.hw();
        for (size_t ki = 0; ki < g.kh; ++ki) {
            for (size_t kj = 0; kj < g.kw; ++kj) {
                T* row = cols + ((c * g.kh + ki) * g.kw + kj) * howo;
                std::fill_n(row, howo, T(0));
                const auto off_i = static_cast<ptrdiff_t>(ki * g.dil) - static_cast<ptrdiff_t>(g.pad);
                const auto off_j = static_cast<ptrdiff_t>(kj * g.dil) - static_cast<ptrdiff_t>(g.pad);
                const Range ry = valid_outputs(g.ho, off_i, g.stride, g.h);
                const Range rx = valid_outputs(g.wo, off_j, g.stride, g.w);
                for (size_t oy = ry.lo; oy < ry.hi; ++oy) {
                    const T* src = xc + static_cast<size_t>(static_cast<ptrdiff_t>(oy * g.stride) + off_i) * g.w;
                    T* dst = row + oy * g.wo;
                    for (size_t ox = rx.lo; ox < rx.hi; ++ox) {
                        dst[ox] = src[static_cast<ptrdiff_t>(ox * g.stride) + off_j];
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatters column gradients back onto the image.
template <typename T>
void col2im_add(const T* cols, const Conv2dGeometry& g, T* dx) {
    const size_t howo = g.howo();
    for (size_t c = 0; c < g.cg; ++c) {
        T* dxc = dx + c * g.hw();
        for (size_t ki = 0; ki < g.kh; ++ki) {
            for (size_t kj = 0; kj < g.kw; ++kj) {
                const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * howo;
                const auto off_i = static_cast<ptrdiff_t>(ki * g.dil) - static_cast<ptrdiff_t>(g.pad);
                const auto off_j = static_cast<ptrdiff_t>(kj * g.dil) - static_cast<ptrdiff_t>(g.pad);
                const Range ry = valid_outputs(g.ho, off_i, g.stride, g.h);
                const Range rx = valid_outputs(g.wo, off_j, g.stride, g.w);
                for (size_t oy = ry.lo; oy < ry.hi; ++oy) {
                    T* dst = dxc + static_cast<size_t>(static_cast<ptrdiff_t>(oy * g.stride) + off_i) * g.w;
                    const T* src = row + oy * g.wo;
                    for (size_t ox = rx.lo; ox < rx.hi; ++ox) {
                        dst[static_cast<ptrdiff_t>(ox * g.stride) + off_j] += src[ox];
                    }
                }
            }
        }
    }
}

template <typename T>
void add_bias(T* out, const T* bias, size_t n, size_t channels, size_t plane) {
    for (size_t b = 0; b < n; ++b) {
        for (size_t c = 0; c < channels; ++c) {
            T* p = out + (b * channels + c) * plane;
            const T v = bias[c];
            for (size_t i = 0; i < plane; ++i) p[i] += v;
        }
    }
}

template <typename T>
void bias_grad(const T* g, T* db, size_t n, size_t channels, size_t plane) {
    for (size_t b = 0; b < n; ++b) {
        for (size_t c = 0; c < channels; ++c) {
            const T* p = g + (b * channels + c) * plane;
            T s = 0;
            for (size_t i = 0; i < plane; ++i) s += p[i];
            db[c] += s;
        }
    }
}

template <typename T>
Tensor<T> conv2d_general(const Tensor<T>& x, const Conv2dWeights<T>& w, const Conv2dGeometry& g) {
    const size_t howo = g.howo();
    std::vector<T> out(g.n * g.o * howo);
    std::vector<T> cols(g.pointwise() ? 0 : g.k() * howo);
    const T* xd = x.data().data();
    const T* kd = w.kernel.data().data();
    for (size_t b = 0; b < g.n; ++b) {
        for (size_t grp = 0; grp < g.groups; ++grp) {
            const T* xg = xd + (b * g.c + grp * g.cg) * g.hw();
            const T* colp = xg;
            if (!g.pointwise()) {
                im2col(xg, g, cols.data());
                colp = cols.data();
            }
            MapC<T> K(kd + grp * g.og * g.k(), g.og, g.k());
            MapC<T> C(colp, g.k(), howo);
            MapM<T> Y(out.data() + (b * g.o + grp * g.og) * howo, g.og, howo);
            Y.noalias() = K * C;
        }
    }
    if (w.bias.defined()) add_bias(out.data(), w.bias.data().data(), g.n, g.o, howo);

    std::vector<Tensor<T>> inputs{x, w.kernel};
    if (w.bias.defined()) inputs.push_back(w.bias);
    return Tensor<T>::from_op(Shape{g.n, g.o, g.ho, g.wo}, std::move(out), std::move(inputs),
        [g](detail::Node<T>& self) {
            auto& nx = *self.inputs[0];
            auto& nk = *self.inputs[1];
            const size_t howo = g.howo();
            std::vector<T> cols(g.pointwise() ? 0 : g.k() * howo);
            std::vector<T> dcols(g.pointwise() ? 0 : g.k() * howo);
            for (size_t b = 0; b < g.n; ++b) {
                for (size_t grp = 0; grp < g.groups; ++grp) {
                    MapC<T> G(self.grad.data() + (b * g.o + grp * g.og) * howo, g.og, howo);
                    MapC<T> K(nk.data.data() + grp * g.og * g.k(), g.og, g.k());
                    const T* xg = nx.data.data() + (b * g.c + grp * g.cg) * g.hw();
                    if (nk.requires_grad) {
                        const T* colp = xg;
                        if (!g.pointwise()) {
                            im2col(xg, g, cols.data());
                            colp = cols.data();
                        }
                        MapC<T> C(colp, g.k(), howo);
                        MapM<T> dK(nk.grad_buffer().data() + grp * g.og * g.k(), g.og, g.k());
                        dK.noalias() += G * C.transpose();
                    }
                    if (nx.requires_grad) {
                        T* dxg = nx.grad_buffer().data() + (b * g.c + grp * g.cg) * g.hw();
                        if (g.pointwise()) {
                            MapM<T> dX(dxg, g.cg, g.hw());
                            dX.noalias() += K.transpose() * G;
                        } else {
                            MapM<T> dC(dcols.data(), g.k(), howo);
                            dC.noalias() = K.transpose() * G;
                            col2im_add(dcols.data(), g, dxg);
                        }
                    }
                }
            }
            if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
                bias_grad(self.grad.data(), self.inputs[2]->grad_buffer().data(), g.n, g.o, howo);
            }
        }, "conv2d");
}

template <typename T>
Tensor<T> conv2d_depthwise_direct(const Tensor<T>& x, const Conv2dWeights<T>& w,
                                  const Conv2dGeometry& g) {
    const size_t howo = g.howo();
    const size_t taps = g.kh * g.kw;
    std::vector<T> out(g.n * g.c * howo, T(0));
    const T* xd = x.data().data();
    const T* kd = w.kernel.data().data();
    for (size_t b = 0; b < g.n; ++b) {
        for (size_t c = 0; c < g.c; ++c) {
            const T* xc = xd + (b * g.c + c) * g.hw();
            T* yc = out.data() + (b * g.c + c) * howo;
            for (size_t ki = 0; ki < g.kh; ++ki) {
                const auto off_i = static_cast<ptrdiff_t>(ki * g.dil) - static_cast<ptrdiff_t>(g.pad);
                const Range ry = valid_outputs(g.ho, off_i, g.stride, g.h);
                for (size_t kj = 0; kj < g.kw; ++kj) {
                    const T wt = kd[c * taps + ki * g.kw + kj];
                    const auto off_j = static_cast<ptrdiff_t>(kj * g.dil) - static_cast<ptrdiff_t>(g.pad);
                    const Range rx = valid_outputs(g.wo, off_j, g.stride, g.w);
                    for (size_t oy = ry.lo; oy < ry.hi; ++oy) {
                        const T* src = xc + static_cast<size_t>(static_cast<ptrdiff_t>(oy * g.stride) + off_i) * g.w;
                        T* dst = yc + oy * g.wo;
                        if (g.stride == 1) {
                            for (size_t ox = rx.lo; ox < rx.hi; ++ox) {
                                dst[ox] += wt * src[static_cast<ptrdiff_t>(ox) + off_j];
                            }
                        } else {
                            for (size_t ox = rx.lo; ox < rx.hi; ++ox) {
                                dst[ox] += wt * src[static_cast<ptrdiff_t>(ox * g.stride) + off_j];
                            }
                        }
                    }
                }
            }
        }
    }
    if (w.bias.defined()) add_bias(out.data(), w.bias.data().data(), g.n, g.c, howo);

    std::vector<Tensor<T>> inputs{x, w.kernel};
    if (w.bias.defined()) inputs.push_back(w.bias);
    return Tensor<T>::from_op(Shape{g.n, g.c, g.ho, g.wo}, std::move(out), std::move(inputs),
        [g](detail::Node<T>& self) {
            auto& nx = *self.inputs[0];
            auto& nk = *self.inputs[1];
            const size_t howo = g.howo();
            const size_t taps = g.kh * g.kw;
            T* dx = nx.requires_grad ? nx.grad_buffer().data() : nullptr;
            T* dk = nk.requires_grad ? nk.grad_buffer().data() : nullptr;
            for (size_t b = 0; b < g.n; ++b) {
                for (size_t c = 0; c < g.c; ++c) {
                    const size_t xoff = (b * g.c + c) * g.hw();
                    const T* xc = nx.data.data() + xoff;
                    const T* gc = self.grad.data() + (b * g.c + c) * howo;
                    for (size_t ki = 0; ki < g.kh; ++ki) {
                        const auto off_i = static_cast<ptrdiff_t>(ki * g.dil) - static_cast<ptrdiff_t>(g.pad);
                        const Range ry = valid_outputs(g.ho, off_i, g.stride, g.h);
                        for (size_t kj = 0; kj < g.kw; ++kj) {
                            const size_t tap = c * taps + ki * g.kw + kj;
                            const T wt = nk.data[tap];
                            const auto off_j = static_cast<ptrdiff_t>(kj * g.dil) - static_cast<ptrdiff_t>(g.pad);
                            const Range rx = valid_outputs(g.wo, off_j, g.stride, g.w);
                            T acc = 0;
                            for (size_t oy = ry.lo; oy < ry.hi; ++oy) {
                                const size_t row = static_cast<size_t>(static_cast<ptrdiff_t>(oy * g.stride) + off_i) * g.w;
                                const T* grow = gc + oy * g.wo;
                                for (size_t ox = rx.lo; ox < rx.hi; ++ox) {
                                    const size_t col = static_cast<size_t>(static_cast<ptrdiff_t>(ox * g.stride) + off_j);
                                    acc += grow[ox] * xc[row + col];
                                    if (dx) dx[xoff + row + col] += wt * grow[ox];
                                }
                            }
                            if (dk) dk[tap] += acc;
                        }
                    }
                }
            }
            if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
                bias_grad(self.grad.data(), self.inputs[2]->grad_buffer().data(), g.n, g.c, howo);
            }
        }, "depthwise_conv2d");
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t padding, std::size_t dilation) {
    const std::size_t span = dilation * (kernel - 1) + 1;
    if (in + 2 * padding < span) {
        throw ShapeError("convolution window of span " + std::to_string(span) +
                         " exceeds padded extent " + std::to_string(in + 2 * padding));
    }
    return (in + 2 * padding - span) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Conv2dWeights<T>& w) {
    const auto g = conv2d_geometry(x, w);
    if (g.depthwise()) return conv2d_depthwise_direct(x, w, g);
    return conv2d_general(x, w, g);
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Conv2dWeights<T>& w) {
    const auto g = conv2d_geometry(x, w);
    require(g.depthwise(), "depthwise_conv2d requires groups == channels and one input "
                           "channel per group");
    return conv2d_depthwise_direct(x, w, g);
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Conv3dWeights<T>& w) {
    require(x.dim() == 5, "conv3d expects N x F x D x H x W input, got " + shape_str(x.shape()));
    require(w.kernel.defined() && w.kernel.dim() == 5, "conv3d kernel must be 5-D");
    const size_t n = x.size(0), f = x.size(1), d = x.size(2), h = x.size(3), wd = x.size(4);
    const size_t o = w.kernel.size(0);
    const size_t kd = w.kernel.size(2), kh = w.kernel.size(3), kw = w.kernel.size(4);
    require(w.kernel.size(1) == f, "conv3d: input has " + std::to_string(f) +
                                       " features, kernel expects " +
                                       std::to_string(w.kernel.size(1)));
    if (w.bias.defined()) require(w.bias.numel() == o, "conv3d: bias length mismatch");
    const auto [pd, ph, pw] = w.padding;
    const size_t od = conv_out_extent(d, kd, 1, pd, 1);
    const size_t oh = conv_out_extent(h, kh, 1, ph, 1);
    const size_t ow = conv_out_extent(wd, kw, 1, pw, 1);
    const size_t in_vol = d * h * wd;
    const size_t out_vol = od * oh * ow;
    const size_t taps = kd * kh * kw;

    struct Geo {
        size_t n, f, d, h, w, o, kd, kh, kw, pd, ph, pw, od, oh, ow;
    };
    const Geo geo{n, f, d, h, wd, o, kd, kh, kw, pd, ph, pw, od, oh, ow};

    // Runs fn(x_row, y_row, lo, hi, tap) for every valid (output row, tap) pair.
    auto sweep = [](const Geo& g, auto&& fn) {
        for (size_t a = 0; a < g.kd; ++a) {
            const Range rd = valid_outputs(g.od, static_cast<ptrdiff_t>(a) - static_cast<ptrdiff_t>(g.pd), 1, g.d);
            for (size_t b = 0; b < g.kh; ++b) {
                const Range rh = valid_outputs(g.oh, static_cast<ptrdiff_t>(b) - static_cast<ptrdiff_t>(g.ph), 1, g.h);
                for (size_t c = 0; c < g.kw; ++c) {
                    const auto off_w = static_cast<ptrdiff_t>(c) - static_cast<ptrdiff_t>(g.pw);
                    const Range rw = valid_outputs(g.ow, off_w, 1, g.w);
                    const size_t tap = (a * g.kh + b) * g.kw + c;
                    for (size_t zd = rd.lo; zd < rd.hi; ++zd) {
                        const size_t id = zd + a - g.pd;
                        for (size_t zh = rh.lo; zh < rh.hi; ++zh) {
                            const size_t ih = zh + b - g.ph;
                            const size_t in_row = (id * g.h + ih) * g.w;
                            const size_t out_row = (zd * g.oh + zh) * g.ow;
                            fn(in_row, out_row, rw, off_w, tap);
                        }
                    }
                }
            }
        }
    };

    std::vector<T> out(n * o * out_vol, T(0));
    const T* xd = x.data().data();
    const T* k = w.kernel.data().data();
    for (size_t b = 0; b < n; ++b) {
        for (size_t oc = 0; oc < o; ++oc) {
            T* y = out.data() + (b * o + oc) * out_vol;
            for (size_t fc = 0; fc < f; ++fc) {
                const T* xs = xd + (b * f + fc) * in_vol;
                const T* kk = k + (oc * f + fc) * taps;
                sweep(geo, [&](size_t in_row, size_t out_row, Range rw, ptrdiff_t off_w, size_t tap) {
                    const T wt = kk[tap];
                    const T* src = xs + in_row;
                    T* dst = y + out_row;
                    for (size_t zw = rw.lo; zw < rw.hi; ++zw) {
                        dst[zw] += wt * src[static_cast<ptrdiff_t>(zw) + off_w];
                    }
                });
            }
        }
    }
    if (w.bias.defined()) add_bias(out.data(), w.bias.data().data(), n, o, out_vol);

    std::vector<Tensor<T>> inputs{x, w.kernel};
    if (w.bias.defined()) inputs.push_back(w.bias);
    return Tensor<T>::from_op(Shape{n, o, od, oh, ow}, std::move(out), std::move(inputs),
        [geo, sweep, in_vol, out_vol, taps](detail::Node<T>& self) {
            auto& nx = *self.inputs[0];
            auto& nk = *self.inputs[1];
            T* dx = nx.requires_grad ? nx.grad_buffer().data() : nullptr;
            T* dk = nk.requires_grad ? nk.grad_buffer().data() : nullptr;
            for (size_t b = 0; b < geo.n; ++b) {
                for (size_t oc = 0; oc < geo.o; ++oc) {
                    const T* gy = self.grad.data() + (b * geo.o + oc) * out_vol;
                    for (size_t fc = 0; fc < geo.f; ++fc) {
                        const size_t xoff = (b * geo.f + fc) * in_vol;
                        const T* xs = nx.data.data() + xoff;
                        const size_t koff = (oc * geo.f + fc) * taps;
                        const T* kk = nk.data.data() + koff;
                        sweep(geo, [&](size_t in_row, size_t out_row, Range rw, ptrdiff_t off_w, size_t tap) {
                            const T* grow = gy + out_row;
                            const T* src = xs + in_row;
                            if (dk) {
                                T acc = 0;
                                for (size_t zw = rw.lo; zw < rw.hi; ++zw) {
                                    acc += grow[zw] * src[static_cast<ptrdiff_t>(zw) + off_w];
                                }
                                dk[koff + tap] += acc;
                            }
                            if (dx) {
                                const T wt = kk[tap];
                                T* dst = dx + xoff + in_row;
                                for (size_t zw = rw.lo; zw < rw.hi; ++zw) {
                                    dst[static_cast<ptrdiff_t>(zw) + off_w] += wt * grow[zw];
                                }
                            }
                        });
                    }
                }
            }
            if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
                bias_grad(self.grad.data(), self.inputs[2]->grad_buffer().data(), geo.n, geo.o, out_vol);
            }
        }, "conv3d");
}

template <typename T>
Tensor<T> channel_shuffle(const Tensor<T>& x, std::size_t groups) {
    require(x.dim() == 4, "channel_shuffle expects N x C x H x W input");
    const size_t n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    require(groups >= 1 && c % groups == 0,
            "channel_shuffle: " + std::to_string(c) + " channels not divisible by " +
                std::to_string(groups) + " groups");
    if (groups == 1) return x;
    auto grouped = reshape(x, Shape{n, groups, c / groups, h * w});
    auto swapped = permute(grouped, {0, 2, 1, 3});
    return reshape(swapped, Shape{n, c, h, w});
}

template <typename T>
Tensor<T> downsample(const Tensor<T>& x, const Conv2dWeights<T>& w) {
    require(x.dim() == 4, "downsample expects N x C x H x W input");
    require(x.size(2) % 2 == 0 && x.size(3) % 2 == 0,
            "downsample needs even spatial extents, got " + shape_str(x.shape()));
    require(w.out_channels() == 2 * x.size(1), "downsample kernel must double the channels");
    require(w.options.stride == 2, "downsample kernel must have stride 2");
    return conv2d(x, w);
}

template <typename T>
Tensor<T> upsample(const Tensor<T>& x, const UpsampleWeights<T>& w) {
    require(x.dim() == 4, "upsample expects N x C x H x W input");
    const size_t n = x.size(0), c = x.size(1), h = x.size(2), wd = x.size(3);
    require(c % 2 == 0, "upsample needs an even channel count, got " + std::to_string(c));
    require(w.kernel.dim() == 4 && w.kernel.size(0) == c && w.kernel.size(1) == c / 2 &&
                w.kernel.size(2) == 2 && w.kernel.size(3) == 2,
            "upsample kernel must be C x C/2 x 2 x 2, got " + shape_str(w.kernel.shape()));
    const size_t o = c / 2;
    const size_t hw = h * wd;
    const size_t o4 = o * 4;
    const size_t out_plane = 4 * hw;
    std::vector<T> out(n * o * out_plane);
    RowMat<T> cols(o4, hw);
    MapC<T> K(w.kernel.data().data(), c, o4);
    for (size_t b = 0; b < n; ++b) {
        MapC<T> X(x.data().data() + b * c * hw, c, hw);
        cols.noalias() = K.transpose() * X;
        for (size_t oc = 0; oc < o; ++oc) {
            const T bias = w.bias.defined() ? w.bias.data()[oc] : T(0);
            T* y = out.data() + (b * o + oc) * out_plane;
            for (size_t p = 0; p < 2; ++p) {
                for (size_t q = 0; q < 2; ++q) {
                    const T* src = cols.data() + (oc * 4 + p * 2 + q) * hw;
                    for (size_t i = 0; i < h; ++i) {
                        T* row = y + (2 * i + p) * 2 * wd + q;
                        for (size_t j = 0; j < wd; ++j) row[2 * j] = src[i * wd + j] + bias;
                    }
                }
            }
        }
    }
    std::vector<Tensor<T>> inputs{x, w.kernel};
    if (w.bias.defined()) inputs.push_back(w.bias);
    return Tensor<T>::from_op(Shape{n, o, 2 * h, 2 * wd}, std::move(out), std::move(inputs),
        [n, c, h, wd, o](detail::Node<T>& self) {
            auto& nx = *self.inputs[0];
            auto& nk = *self.inputs[1];
            const size_t hw = h * wd, o4 = o * 4, out_plane = 4 * hw;
            RowMat<T> gcols(o4, hw);
            MapC<T> K(nk.data.data(), c, o4);
            for (size_t b = 0; b < n; ++b) {
                for (size_t oc = 0; oc < o; ++oc) {
                    const T* gy = self.grad.data() + (b * o + oc) * out_plane;
                    for (size_t p = 0; p < 2; ++p) {
                        for (size_t q = 0; q < 2; ++q) {
                            T* dst = gcols.data() + (oc * 4 + p * 2 + q) * hw;
                            for (size_t i = 0; i < h; ++i) {
                                const T* row = gy + (2 * i + p) * 2 * wd + q;
                                for (size_t j = 0; j < wd; ++j) dst[i * wd + j] = row[2 * j];
                            }
                        }
                    }
                }
                if (nx.requires_grad) {
                    MapM<T> dX(nx.grad_buffer().data() + b * c * hw, c, hw);
                    dX.noalias() += K * gcols;
                }
                if (nk.requires_grad) {
                    MapC<T> X(nx.data.data() + b * c * hw, c, hw);
                    MapM<T> dK(nk.grad_buffer().data(), c, o4);
                    dK.noalias() += X * gcols.transpose();
                }
            }
            if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
                bias_grad(self.grad.data(), self.inputs[2]->grad_buffer().data(), n, o, out_plane);
            }
        }, "upsample");
}

template <typename T>
Tensor<T> layer_norm_channels(const Tensor<T>& x, const LayerNormWeights<T>& w, T eps) {
    require(x.dim() == 4, "layer_norm_channels expects N x C x H x W input");
    const size_t n = x.size(0), c = x.size(1), hw = x.size(2) * x.size(3);
    require(w.weight.numel() == c && w.bias.numel() == c,
            "layer_norm_channels: affine terms must have one entry per channel");
    const T* xd = x.data().data();
    const T* gamma = w.weight.data().data();
    const T* beta = w.bias.data().data();
    std::vector<T> xhat(x.numel());
    std::vector<T> rstd(n * hw);
    std::vector<T> out(x.numel());
    std::vector<T> mu(hw), var(hw);
    const T inv_c = T(1) / static_cast<T>(c);
    for (size_t b = 0; b < n; ++b) {
        const T* xb = xd + b * c * hw;
        std::fill(mu.begin(), mu.end(), T(0));
        std::fill(var.begin(), var.end(), T(0));
        for (size_t ch = 0; ch < c; ++ch) {
            for (size_t p = 0; p < hw; ++p) mu[p] += xb[ch * hw + p];
        }
        for (size_t p = 0; p < hw; ++p) mu[p] *= inv_c;
        for (size_t ch = 0; ch < c; ++ch) {
            for (size_t p = 0; p < hw; ++p) {
                const T dlt = xb[ch * hw + p] - mu[p];
                var[p] += dlt * dlt;
            }
        }
        T* rs = rstd.data() + b * hw;
        for (size_t p = 0; p < hw; ++p) rs[p] = T(1) / std::sqrt(var[p] * inv_c + eps);
        for (size_t ch = 0; ch < c; ++ch) {
            const size_t off = (b * c + ch) * hw;
            for (size_t p = 0; p < hw; ++p) {
                const T xh = (xb[ch * hw + p] - mu[p]) * rs[p];
                xhat[off + p] = xh;
                out[off + p] = xh * gamma[ch] + beta[ch];
            }
        }
    }
    return Tensor<T>::from_op(x.shape(), std::move(out), {x, w.weight, w.bias},
        [n, c, hw, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node<T>& self) {
            auto& nx = *self.inputs[0];
            auto& nw = *self.inputs[1];
            auto& nb = *self.inputs[2];
            const T* g = self.grad.data();
            const T* gamma = nw.data.data();
            if (nw.requires_grad || nb.requires_grad) {
                T* dw = nw.requires_grad ? nw.grad_buffer().data() : nullptr;
                T* db = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
                for (size_t b = 0; b < n; ++b) {
                    for (size_t ch = 0; ch < c; ++ch) {
                        const size_t off = (b * c + ch) * hw;
                        T sw = 0, sb = 0;
                        for (size_t p = 0; p < hw; ++p) {
                            sw += g[off + p] * xhat[off + p];
                            sb += g[off + p];
                        }
                        if (dw) dw[ch] += sw;
                        if (db) db[ch] += sb;
                    }
                }
            }
            if (!nx.requires_grad) return;
            T* dx = nx.grad_buffer().data();
            const T inv_c = T(1) / static_cast<T>(c);
            std::vector<T> m1(hw), m2(hw);
            for (size_t b = 0; b < n; ++b) {
                std::fill(m1.begin(), m1.end(), T(0));
                std::fill(m2.begin(), m2.end(), T(0));
                for (size_t ch = 0; ch < c; ++ch) {
                    const size_t off = (b * c + ch) * hw;
                    for (size_t p = 0; p < hw; ++p) {
                        const T dxh = g[off + p] * gamma[ch];
                        m1[p] += dxh;
                        m2[p] += dxh * xhat[off + p];
                    }
                }
                const T* rs = rstd.data() + b * hw;
                for (size_t ch = 0; ch < c; ++ch) {
                    const size_t off = (b * c + ch) * hw;
                    for (size_t p = 0; p < hw; ++p) {
                        const T dxh = g[off + p] * gamma[ch];
                        dx[off + p] += rs[p] * (dxh - m1[p] * inv_c - xhat[off + p] * m2[p] * inv_c);
                    }
                }
            }
        }, "layer_norm");
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>(std::move(shape), std::move(data), true);
}

template <typename T>
Conv2dWeights<T> make_conv2d(std::size_t in, std::size_t out, std::size_t kernel,
                             Conv2dOptions options, bool bias, Rng& rng) {
    if (options.groups == 0 || in % options.groups != 0 || out % options.groups != 0) {
        throw ShapeError("make_conv2d: channels " + std::to_string(in) + "->" +
                         std::to_string(out) + " not divisible by groups");
    }
    const std::size_t per_group = in / options.groups;
    const std::size_t fan_in = per_group * kernel * kernel;
    Conv2dWeights<T> w;
    w.options = options;
    w.kernel = uniform_fan_in<T>(Shape{out, per_group, kernel, kernel}, fan_in, rng);
    if (bias) w.bias = uniform_fan_in<T>(Shape{out}, fan_in, rng);
    return w;
}

template <typename T>
Conv3dWeights<T> make_conv3d(std::size_t in_features, std::size_t out_features,
                             std::array<std::size_t, 3> kernel, bool bias, Rng& rng) {
    for (auto k : kernel) {
        if (k % 2 == 0) throw ShapeError("conv3d kernel extents must be odd");
    }
    const std::size_t fan_in = in_features * kernel[0] * kernel[1] * kernel[2];
    Conv3dWeights<T> w;
    w.kernel = uniform_fan_in<T>(Shape{out_features, in_features, kernel[0], kernel[1], kernel[2]},
                                 fan_in, rng);
    if (bias) w.bias = uniform_fan_in<T>(Shape{out_features}, fan_in, rng);
    w.padding = {kernel[0] / 2, kernel[1] / 2, kernel[2] / 2};
    return w;
}

template <typename T>
Conv2dWeights<T> make_downsample(std::size_t channels, bool bias, Rng& rng) {
    return make_conv2d<T>(channels, 2 * channels, 3, Conv2dOptions{2, 1, 1, 1}, bias, rng);
}

template <typename T>
UpsampleWeights<T> make_upsample(std::size_t channels, bool bias, Rng& rng) {
    if (channels % 2 != 0) throw ShapeError("make_upsample: channel count must be even");
    // torch's ConvTranspose2d fan-in convention: weight.size(1) * kh * kw
    const std::size_t fan_in = channels / 2 * 4;
    UpsampleWeights<T> w;
    w.kernel = uniform_fan_in<T>(Shape{channels, channels / 2, 2, 2}, fan_in, rng);
    if (bias) w.bias = uniform_fan_in<T>(Shape{channels / 2}, fan_in, rng);
    return w;
}

template <typename T>
LayerNormWeights<T> make_layer_norm(std::size_t channels) {
    return {Tensor<T>::full(Shape{channels}, T(1), true), Tensor<T>::zeros(Shape{channels}, true)};
}

#define HCANET_INSTANTIATE_NN(T)                                                                  \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Conv2dWeights<T>&);                       \
    template Tensor<T> depthwise_conv2d<T>(const Tensor<T>&, const Conv2dWeights<T>&);             \
    template Tensor<T> conv3d<T>(const Tensor<T>&, const Conv3dWeights<T>&);                       \
    template Tensor<T> channel_shuffle<T>(const Tensor<T>&, std::size_t);                          \
    template Tensor<T> downsample<T>(const Tensor<T>&, const Conv2dWeights<T>&);                   \
    template Tensor<T> upsample<T>(const Tensor<T>&, const UpsampleWeights<T>&);                   \
    template Tensor<T> layer_norm_channels<T>(const Tensor<T>&, const LayerNormWeights<T>&, T);    \
    template Tensor<T> uniform_fan_in<T>(Shape, std::size_t, Rng&);                                \
    template Conv2dWeights<T> make_conv2d<T>(std::size_t, std::size_t, std::size_t, Conv2dOptions, \
                                             bool, Rng&);                                          \
    template Conv3dWeights<T> make_conv3d<T>(std::size_t, std::size_t, std::array<std::size_t, 3>, \
                                             bool, Rng&);                                          \
    template Conv2dWeights<T> make_downsample<T>(std::size_t, bool, Rng&);                         \
    template UpsampleWeights<T> make_upsample<T>(std::size_t, bool, Rng&);                         \
    template LayerNormWeights<T> make_layer_norm<T>(std::size_t);

HCANET_INSTANTIATE_NN(float)
HCANET_INSTANTIATE_NN(double)

}  // namespace hcanet::nn
