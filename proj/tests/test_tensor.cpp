#include "doctest.h"

#include <algorithm>
#include <bit>
#include <cmath>

#include "finite_diff.hpp"
#include "hcanet/tensor.hpp"

using namespace hcanet;

namespace {

template <typename T>
std::vector<T> vec(const Tensor<T>& t) {
    return {t.data().begin(), t.data().end()};
}

}  // namespace

TEST_CASE("add and mul_elementwise") {
    Tensor<float> a({2}, {1, 2});
    Tensor<float> b({2}, {3, 4});
    CHECK(vec(add(a, b)) == std::vector<float>{4, 6});

    Rng rng(1);
    auto x = fd::random_tensor({3, 4}, rng);
    auto z = Tensor<double>::zeros({3, 4});
    auto prod = mul(x, z);
    for (double v : prod.data()) CHECK(v == 0.0);

    CHECK_THROWS_AS(add(a, Tensor<float>({3}, {1, 2, 3})), ShapeError);
    CHECK_THROWS_AS(mul(Tensor<float>({2, 2}, {1, 2, 3, 4}), Tensor<float>({4}, {1, 2, 3, 4})),
                    ShapeError);
}

TEST_CASE("product rule") {
    Tensor<double> a({1}, {2.0}, true);
    Tensor<double> b({1}, {5.0}, true);
    backward(sum(mul(a, b)));
    CHECK(a.grad()[0] == 5.0);
    CHECK(b.grad()[0] == 2.0);
}

TEST_CASE("scalar broadcast") {
    Tensor<double> x({2, 2}, {1, 2, 3, 4}, true);
    Tensor<double> s({1}, {3.0}, true);
    auto y = mul(x, s);
    CHECK(vec(y) == std::vector<double>{3, 6, 9, 12});
    backward(sum(y));
    CHECK(s.grad()[0] == doctest::Approx(10.0));
    CHECK(x.grad()[0] == 3.0);

    Rng rng(3);
    auto a = fd::random_tensor({3, 5}, rng);
    auto t = Tensor<double>({1}, {1.7}, true);
    auto rep = fd::check([&] { return fd::probe(div(a, t)); }, {{"a", a}, {"t", t}});
    CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("matmul") {
    Tensor<float> eye({2, 2}, {1, 0, 0, 1});
    Tensor<float> m({2, 2}, {1, 2, 3, 4});
    CHECK(vec(matmul(eye, m)) == vec(m));
    CHECK(vec(matmul(Tensor<float>({1, 2}, {1, 0}), Tensor<float>({2, 1}, {0, 1}))) ==
          std::vector<float>{0});
    CHECK_THROWS_AS(matmul(m, Tensor<float>({3, 1}, {1, 2, 3})), ShapeError);

    Rng rng(11);
    auto a = fd::random_tensor({3, 4}, rng);
    auto b = fd::random_tensor({4, 2}, rng);
    auto rep = fd::check([&] { return fd::probe(matmul(a, b)); }, {{"a", a}, {"b", b}});
    INFO(rep.worst);
    CHECK(rep.max_rel_err < 1e-3);

    auto ba = fd::random_tensor({2, 3, 4}, rng);
    auto bb = fd::random_tensor({2, 4, 5}, rng);
    rep = fd::check([&] { return fd::probe(matmul(ba, bb)); }, {{"ba", ba}, {"bb", bb}});
    CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("softmax") {
    auto s = softmax(Tensor<double>({2}, {0, 0}), 0);
    CHECK(s.data()[0] == doctest::Approx(0.5));
    CHECK(s.data()[1] == doctest::Approx(0.5));

    auto big = softmax(Tensor<float>({2}, {1000.0f, 0.0f}), 0);
    CHECK(big.data()[0] == 1.0f);
    CHECK(big.data()[1] == 0.0f);

    Rng rng(5);
    auto x = fd::random_tensor({5}, rng);
    auto rep = fd::check([&] { return fd::probe(softmax(x, 0)); }, {{"x", x}});
    CHECK(rep.max_rel_err < 1e-3);

    // Slices along a middle axis sum to one.
    auto y = fd::random_tensor({3, 4, 5}, rng, false, -5, 5);
    auto p = softmax(y, 1);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t k = 0; k < 5; ++k) {
            double total = 0;
            for (std::size_t j = 0; j < 4; ++j) {
                const double v = p.data()[(i * 4 + j) * 5 + k];
                CHECK(v >= 0.0);
                total += v;
            }
            CHECK(std::abs(total - 1.0) < 1e-6);
        }
    }
    CHECK_THROWS_AS(softmax(y, 3), ShapeError);
}

TEST_CASE("gelu is the exact erf form") {
    auto g = gelu(Tensor<double>({3}, {0.0, 10.0, -10.0}));
    CHECK(g.data()[0] == 0.0);
    CHECK(std::abs(g.data()[1] - 10.0) < 1e-6);
    CHECK(std::abs(g.data()[2]) < 1e-6);
    // tanh approximation gives 0.841192 here
    auto one = gelu(Tensor<double>({1}, {1.0}));
    CHECK(one.data()[0] == doctest::Approx(0.8413447460685429).epsilon(1e-12));

    Rng rng(8);
    auto x = fd::random_tensor({16}, rng, true, -3, 3);
    auto rep = fd::check([&] { return fd::probe(gelu(x)); }, {{"x", x}});
    CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("reshape, permute, concat, slice") {
    Tensor<float> m({2, 3}, {1, 2, 3, 4, 5, 6});
    auto r = reshape(reshape(m, {3, 2}), {2, 3});
    CHECK(r.shape() == Shape{2, 3});
    CHECK(vec(r) == vec(m));
    CHECK_THROWS_AS(reshape(m, {4, 2}), ShapeError);

    Tensor<float> sq({2, 2}, {1, 2, 3, 4});
    CHECK(vec(permute(sq, {1, 0})) == std::vector<float>{1, 3, 2, 4});

    auto c = concat<float>({Tensor<float>::zeros({2, 3}), Tensor<float>::full({2, 5}, 1.0f)}, 1);
    CHECK(c.shape() == Shape{2, 8});
    CHECK(c.data()[3] == 1.0f);
    CHECK(c.data()[8] == 0.0f);
    CHECK_THROWS_AS(concat<float>({Tensor<float>::zeros({2, 3}), Tensor<float>::zeros({3, 3})}, 1),
                    ShapeError);

    auto s = slice(m, 1, 1, 2);
    CHECK(vec(s) == std::vector<float>{2, 3, 5, 6});
    CHECK_THROWS_AS(slice(m, 1, 2, 2), ShapeError);

    Rng rng(4);
    auto a = fd::random_tensor({2, 3, 4}, rng);
    auto b = fd::random_tensor({2, 2, 4}, rng);
    auto rep = fd::check(
        [&] {
            auto cat = concat<double>({a, b}, 1);
            auto p = permute(cat, {2, 0, 1});
            return fd::probe(slice(reshape(p, {8, 5}), 0, 2, 5));
        },
        {{"a", a}, {"b", b}});
    CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("permute and reshape round trips are bit exact") {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        Shape shape;
        const std::size_t nd = 1 + rng.below(4);
        for (std::size_t i = 0; i < nd; ++i) shape.push_back(1 + rng.below(5));
        auto x = fd::random_tensor(shape, rng, false);
        std::vector<std::size_t> axes(nd);
        for (std::size_t i = 0; i < nd; ++i) axes[i] = i;
        rng.shuffle(axes);
        std::vector<std::size_t> inverse(nd);
        for (std::size_t i = 0; i < nd; ++i) inverse[axes[i]] = i;
        auto back = permute(permute(x, axes), inverse);
        CHECK(back.shape() == x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) {
            CHECK(std::bit_cast<std::uint64_t>(back.data()[i]) ==
                  std::bit_cast<std::uint64_t>(x.data()[i]));
        }
        auto flat = reshape(reshape(x, {x.numel()}), shape);
        CHECK(vec(flat) == vec(x));
    }
}

TEST_CASE("backward") {
    Tensor<double> w({3}, {0.3, -1.0, 2.0}, true);
    backward(sum(w));
    CHECK(vec(Tensor<double>({3}, std::vector<double>(w.grad().begin(), w.grad().end()))) ==
          std::vector<double>{1, 1, 1});

    Tensor<double> q({2}, {1, 2}, true);
    backward(sum(mul(q, q)));
    CHECK(q.grad()[0] == 2.0);
    CHECK(q.grad()[1] == 4.0);

    SUBCASE("non-scalar loss is rejected") {
        Tensor<double> v({2}, {1, 2}, true);
        CHECK_THROWS_AS(backward(scale(v, 2.0)), ContractError);
    }

    SUBCASE("fan-out accumulates") {
        Tensor<double> x({2}, {1.5, -0.5}, true);
        auto y = scale(x, 3.0);
        // x feeds y and the sum directly: d/dx = 3 + 1
        backward(sum(add(y, x)));
        CHECK(x.grad()[0] == 4.0);
        CHECK(x.grad()[1] == 4.0);
    }

    SUBCASE("only parameters keep gradients") {
        Tensor<double> p({2}, {1, 2}, true);
        Tensor<double> c({2}, {3, 4}, false);
        auto mid = mul(p, c);
        backward(sum(mid));
        CHECK(p.has_grad());
        CHECK_FALSE(c.has_grad());
        CHECK_FALSE(mid.has_grad());
    }
}

TEST_CASE("tape order is topological and visits each node once") {
    Tensor<double> a({2}, {1, 2}, true);
    Tensor<double> b({2}, {3, 4}, true);
    auto s = add(a, b);
    auto m = mul(s, a);
    auto loss = sum(add(m, s));
    auto tape = Tape<double>::record(loss);
    const auto& nodes = tape.nodes();
    CHECK(nodes.size() == 6);  // a, b, s, m, add, sum
    std::vector<const detail::Node<double>*> seen;
    for (auto* n : nodes) {
        for (const auto& in : n->inputs) {
            CHECK(std::find(seen.begin(), seen.end(), in.get()) != seen.end());
        }
        CHECK(std::find(seen.begin(), seen.end(), n) == seen.end());
        seen.push_back(n);
    }
    CHECK(nodes.back() == loss.node().get());
}

TEST_CASE("no-grad mode records nothing") {
    Tensor<float> w({2}, {1, 2}, true);
    NoGradGuard guard;
    auto y = scale(w, 2.0f);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.is_leaf());
}
