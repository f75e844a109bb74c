#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "finite_diff.hpp"
#include "hcanet/nn_ops.hpp"

using namespace hcanet;
using namespace hcanet::nn;

namespace {

template <typename T>
Conv2dWeights<T> fixed_conv(Shape kshape, std::vector<T> k, Conv2dOptions opt = {}) {
    return Conv2dWeights<T>{Tensor<T>(std::move(kshape), std::move(k), true), {}, opt};
}

template <typename T>
T at4(const Tensor<T>& t, std::size_t n, std::size_t c, std::size_t i, std::size_t j) {
    const auto& s = t.shape();
    return t.data()[((n * s[1] + c) * s[2] + i) * s[3] + j];
}

}  // namespace

TEST_CASE("conv2d basics") {
    Rng rng(1);
    SUBCASE("identity 1x1 kernel is bit exact") {
        auto x = fd::random_tensor({2, 3, 5, 4}, rng, false);
        std::vector<double> k(9, 0.0);
        for (int c = 0; c < 3; ++c) k[c * 3 + c] = 1.0;
        auto y = conv2d(x, fixed_conv<double>({3, 3, 1, 1}, k));
        CHECK(std::equal(y.data().begin(), y.data().end(), x.data().begin()));
    }
    SUBCASE("averaging kernel keeps constants in the interior") {
        auto x = Tensor<float>::full({1, 1, 7, 7}, 0.37f);
        auto y = conv2d(x, fixed_conv<float>({1, 1, 3, 3}, std::vector<float>(9, 1.0f / 9), {1, 1, 1, 1}));
        CHECK(y.shape() == Shape{1, 1, 7, 7});
        for (std::size_t i = 1; i < 6; ++i) {
            for (std::size_t j = 1; j < 6; ++j) CHECK(at4(y, 0, 0, i, j) == doctest::Approx(0.37f));
        }
    }
    SUBCASE("dilated same padding keeps the spatial shape") {
        auto x = fd::random_tensor({1, 4, 6, 6}, rng, false);
        auto w = make_conv2d<double>(4, 4, 3, {1, 2, 2, 1}, true, rng);
        CHECK(conv2d(x, w).shape() == Shape{1, 4, 6, 6});
    }
    SUBCASE("errors") {
        auto x = fd::random_tensor({1, 4, 6, 6}, rng, false);
        auto w = make_conv2d<double>(3, 4, 1, {}, false, rng);
        CHECK_THROWS_AS(conv2d(x, w), ShapeError);
        CHECK_THROWS_AS(make_conv2d<double>(6, 4, 3, {1, 1, 1, 4}, false, rng), ShapeError);
        Conv2dWeights<double> bad{Tensor<double>::zeros({6, 2, 1, 1}), {}, {1, 0, 1, 3}};
        CHECK_THROWS_AS(conv2d(x, bad), ShapeError);  // 4 channels, 3 groups
    }
}

TEST_CASE("conv2d gradients") {
    Rng rng(2);
    struct Case {
        std::size_t in, out, k;
        Conv2dOptions opt;
        std::size_t h, w;
    };
    const Case cases[] = {
        {3, 4, 1, {}, 5, 5},
        {3, 2, 3, {1, 1, 1, 1}, 5, 6},
        {4, 4, 3, {1, 2, 2, 1}, 6, 6},
        {4, 6, 3, {2, 1, 1, 2}, 6, 4},
        {4, 8, 3, {2, 1, 1, 1}, 4, 4},
    };
    for (const auto& c : cases) {
        auto x = fd::random_tensor({2, c.in, c.h, c.w}, rng);
        auto w = make_conv2d<double>(c.in, c.out, c.k, c.opt, true, rng);
        auto rep = fd::check([&] { return fd::probe(conv2d(x, w)); },
                             {{"x", x}, {"kernel", w.kernel}, {"bias", w.bias}});
        INFO(rep.worst);
        CHECK(rep.max_rel_err < 1e-3);
    }
}

TEST_CASE("depthwise_conv2d") {
    Rng rng(3);
    auto x = fd::random_tensor({1, 2, 5, 5}, rng, false);
    std::vector<double> delta(18, 0.0);
    delta[4] = delta[13] = 1.0;
    auto ident = fixed_conv<double>({2, 1, 3, 3}, delta, {1, 1, 1, 2});
    auto y = depthwise_conv2d(x, ident);
    CHECK(std::equal(y.data().begin(), y.data().end(), x.data().begin()));

    auto k = delta;
    k[4] = 0.0;
    auto y0 = depthwise_conv2d(x, fixed_conv<double>({2, 1, 3, 3}, k, {1, 1, 1, 2}));
    for (std::size_t i = 0; i < 25; ++i) {
        CHECK(y0.data()[i] == 0.0);
        CHECK(y0.data()[25 + i] == x.data()[25 + i]);
    }

    auto full = make_conv2d<double>(2, 2, 3, {1, 1, 1, 1}, false, rng);
    CHECK_THROWS_AS(depthwise_conv2d(x, full), ShapeError);

    for (std::size_t dil : {1, 2, 3}) {
        auto xg = fd::random_tensor({2, 3, 7, 7}, rng);
        auto w = make_conv2d<double>(3, 3, 3, {1, dil, dil, 3}, true, rng);
        auto rep = fd::check([&] { return fd::probe(depthwise_conv2d(xg, w)); },
                             {{"x", xg}, {"kernel", w.kernel}, {"bias", w.bias}});
        INFO(rep.worst);
        CHECK(rep.max_rel_err < 1e-3);
    }
}

TEST_CASE("dilated footprint of a delta") {
    auto x = Tensor<double>::zeros({1, 1, 9, 9});
    x.mutable_data()[4 * 9 + 4] = 1.0;
    auto w = fixed_conv<double>({1, 1, 3, 3}, std::vector<double>(9, 1.0), {1, 2, 2, 1});
    auto y = conv2d(x, w);
    for (std::size_t i = 0; i < 9; ++i) {
        for (std::size_t j = 0; j < 9; ++j) {
            const int di = static_cast<int>(i) - 4, dj = static_cast<int>(j) - 4;
            const bool tap = (di == -2 || di == 0 || di == 2) && (dj == -2 || dj == 0 || dj == 2);
            CHECK(at4(y, 0, 0, i, j) == (tap ? 1.0 : 0.0));
        }
    }
}

TEST_CASE("conv3d") {
    Rng rng(4);
    auto x = fd::random_tensor({1, 1, 4, 5, 5}, rng, false);
    std::vector<double> delta(27, 0.0);
    delta[13] = 1.0;
    Conv3dWeights<double> id{Tensor<double>({1, 1, 3, 3, 3}, delta), {}, {1, 1, 1}};
    auto y = conv3d(x, id);
    CHECK(y.shape() == x.shape());
    CHECK(std::equal(y.data().begin(), y.data().end(), x.data().begin()));

    auto c = Tensor<double>::full({1, 1, 5, 5, 5}, 0.25);
    Conv3dWeights<double> ones{Tensor<double>::full({1, 1, 3, 3, 3}, 1.0), {}, {1, 1, 1}};
    auto s = conv3d(c, ones);
    CHECK(s.data()[(2 * 5 + 2) * 5 + 2] == doctest::Approx(27 * 0.25));
    CHECK(s.data()[0] == doctest::Approx(8 * 0.25));  // corner sees 2x2x2

    auto xg = fd::random_tensor({1, 1, 4, 5, 5}, rng);
    auto w = make_conv3d<double>(1, 1, {3, 3, 3}, true, rng);
    auto rep = fd::check([&] { return fd::probe(conv3d(xg, w)); },
                         {{"x", xg}, {"kernel", w.kernel}, {"bias", w.bias}});
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-3);

    auto xm = fd::random_tensor({2, 2, 3, 4, 4}, rng);
    auto wm = make_conv3d<double>(2, 3, {3, 3, 3}, true, rng);
    rep = fd::check([&] { return fd::probe(conv3d(xm, wm)); },
                    {{"x", xm}, {"kernel", wm.kernel}, {"bias", wm.bias}});
    CHECK(rep.max_rel_err < 1e-3);

    CHECK_THROWS_AS(conv3d(fd::random_tensor({1, 2, 3, 4, 4}, rng), w), ShapeError);
    CHECK_THROWS_AS(make_conv3d<double>(1, 1, {2, 3, 3}, false, rng), ShapeError);
}

TEST_CASE("channel_shuffle") {
    const std::size_t hw = 3;
    std::vector<float> v;
    for (int c = 0; c < 4; ++c) {
        for (std::size_t p = 0; p < hw; ++p) v.push_back(static_cast<float>(c));
    }
    Tensor<float> x({1, 4, 1, hw}, v);
    auto y = channel_shuffle(x, 2);
    const float expected[] = {0, 2, 1, 3};
    for (int c = 0; c < 4; ++c) CHECK(y.data()[c * hw] == expected[c]);

    auto id = channel_shuffle(x, 1);
    CHECK(std::equal(id.data().begin(), id.data().end(), x.data().begin()));
    CHECK_THROWS_AS(channel_shuffle(x, 3), ShapeError);

    Rng rng(5);
    for (std::size_t c : {4, 8, 12, 16}) {
        for (std::size_t g : {1, 2, 4}) {
            if (c % g) continue;
            auto r = fd::random_tensor({2, c, 3, 2}, rng, false);
            auto back = channel_shuffle(channel_shuffle(r, g), c / g);
            CHECK(std::equal(back.data().begin(), back.data().end(), r.data().begin()));

            // Output is a permutation of channel slices.
            auto s = channel_shuffle(r, g);
            const std::size_t plane = 6;
            for (std::size_t n = 0; n < 2; ++n) {
                std::vector<std::vector<double>> a, b;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    auto off = (n * c + ch) * plane;
                    a.emplace_back(r.data().begin() + off, r.data().begin() + off + plane);
                    b.emplace_back(s.data().begin() + off, s.data().begin() + off + plane);
                }
                std::sort(a.begin(), a.end());
                std::sort(b.begin(), b.end());
                CHECK(a == b);
            }
        }
    }
}

TEST_CASE("down and up sampling") {
    Rng rng(6);
    auto x = fd::random_tensor({1, 4, 8, 8}, rng);
    auto down = make_downsample<double>(4, true, rng);
    auto up = make_upsample<double>(8, true, rng);
    auto d = downsample(x, down);
    CHECK(d.shape() == Shape{1, 8, 4, 4});
    auto u = upsample(d, up);
    CHECK(u.shape() == Shape{1, 4, 8, 8});

    CHECK_THROWS_AS(downsample(fd::random_tensor({1, 4, 7, 8}, rng), down), ShapeError);
    CHECK_THROWS_AS(make_upsample<double>(5, true, rng), ShapeError);
    auto odd = fd::random_tensor({1, 3, 4, 4}, rng);
    CHECK_THROWS_AS(upsample(odd, up), ShapeError);

    auto rep = fd::check([&] { return fd::probe(upsample(downsample(x, down), up)); },
                         {{"x", x},
                          {"down.kernel", down.kernel},
                          {"down.bias", down.bias},
                          {"up.kernel", up.kernel},
                          {"up.bias", up.bias}});
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-3);

    // Non-overlapping transposed conv: each input pixel owns a 2x2 output block.
    Tensor<double> one({1, 2, 1, 1}, {1.0, 0.0});
    UpsampleWeights<double> uw{Tensor<double>({2, 1, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}), {}};
    auto blk = upsample(one, uw);
    CHECK(std::vector<double>(blk.data().begin(), blk.data().end()) ==
          std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("layer_norm_channels") {
    Rng rng(7);
    auto x = fd::random_tensor({2, 5, 3, 3}, rng, true, -2, 2);
    auto ln = make_layer_norm<double>(5);
    {
        NoGradGuard ng;
        auto y = layer_norm_channels(x, ln);
        for (std::size_t n = 0; n < 2; ++n) {
            for (std::size_t p = 0; p < 9; ++p) {
                double m = 0, v = 0;
                for (std::size_t c = 0; c < 5; ++c) m += y.data()[(n * 5 + c) * 9 + p];
                m /= 5;
                for (std::size_t c = 0; c < 5; ++c) {
                    const double d = y.data()[(n * 5 + c) * 9 + p] - m;
                    v += d * d;
                }
                CHECK(std::abs(m) < 1e-12);
                CHECK(v / 5 == doctest::Approx(1.0).epsilon(1e-4));
            }
        }
    }
    for (auto& v : ln.weight.mutable_data()) v = rng.uniform(0.5, 1.5);
    for (auto& v : ln.bias.mutable_data()) v = rng.uniform(-0.5, 0.5);
    auto rep = fd::check([&] { return fd::probe(layer_norm_channels(x, ln)); },
                         {{"x", x}, {"weight", ln.weight}, {"bias", ln.bias}});
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("convolutions are linear") {
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t c = 2 * (1 + rng.below(4));
        const std::size_t h = 2 * (2 + rng.below(5)), w = 2 * (2 + rng.below(5));
        const double alpha = rng.uniform(-2, 2), beta = rng.uniform(-2, 2);
        auto x = fd::random_tensor({1, c, h, w}, rng, false);
        auto y = fd::random_tensor({1, c, h, w}, rng, false);
        auto combo = add(scale(x, alpha), scale(y, beta));
        auto check = [&](auto&& op) {
            auto lhs = op(combo);
            auto rhs = add(scale(op(x), alpha), scale(op(y), beta));
            for (std::size_t i = 0; i < lhs.numel(); ++i) {
                CHECK(std::abs(lhs.data()[i] - rhs.data()[i]) < 1e-5);
            }
        };
        const std::size_t dil = 1 + rng.below(3);
        auto full = make_conv2d<double>(c, c, 3, {1, dil, dil, 1}, false, rng);
        auto grouped = make_conv2d<double>(c, c, 3, {1, 1, 1, 2}, false, rng);
        auto dw = make_conv2d<double>(c, c, 3, {1, dil, dil, c}, false, rng);
        auto c3 = make_conv3d<double>(1, 1, {3, 3, 3}, false, rng);
        auto down = make_downsample<double>(c, false, rng);
        auto up = make_upsample<double>(c, false, rng);
        check([&](const Tensor<double>& t) { return conv2d(t, full); });
        check([&](const Tensor<double>& t) { return conv2d(t, grouped); });
        check([&](const Tensor<double>& t) { return depthwise_conv2d(t, dw); });
        check([&](const Tensor<double>& t) {
            return conv3d(reshape(t, {1, 1, c, h, w}), c3);
        });
        check([&](const Tensor<double>& t) { return downsample(t, down); });
        check([&](const Tensor<double>& t) { return upsample(t, up); });
    }
}

TEST_CASE("shape contracts over random shapes") {
    Rng rng(9);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 1 + rng.below(2);
        const std::size_t c = 4 * (1 + rng.below(4));
        const std::size_t h = 2 * (1 + rng.below(8)), w = 2 * (1 + rng.below(8));
        const std::size_t k = rng.below(2) ? 3 : 1;
        const std::size_t dil = k == 3 ? 1 + rng.below(3) : 1;
        const std::size_t pad = k == 3 ? dil : 0;
        const std::size_t stride = 1 + rng.below(2);
        auto x = fd::random_tensor({n, c, h, w}, rng, false);
        if (h + 2 * pad < dil * (k - 1) + 1 || w + 2 * pad < dil * (k - 1) + 1) continue;
        auto wt = make_conv2d<double>(c, 2 * c, k, {stride, pad, dil, 4}, true, rng);
        auto y = conv2d(x, wt);
        const std::size_t eh = (h + 2 * pad - dil * (k - 1) - 1) / stride + 1;
        const std::size_t ew = (w + 2 * pad - dil * (k - 1) - 1) / stride + 1;
        CHECK(y.shape() == Shape{n, 2 * c, eh, ew});
        if (stride == 1) CHECK(y.size(2) == h);

        CHECK(channel_shuffle(x, 4).shape() == x.shape());
        auto c3 = make_conv3d<double>(1, 1, {3, 3, 3}, false, rng);
        CHECK(conv3d(reshape(x, {n, 1, c, h, w}), c3).shape() == Shape{n, 1, c, h, w});
        auto d = downsample(x, make_downsample<double>(c, false, rng));
        CHECK(d.shape() == Shape{n, 2 * c, h / 2, w / 2});
        CHECK(upsample(d, make_upsample<double>(2 * c, false, rng)).shape() == x.shape());
    }
}
