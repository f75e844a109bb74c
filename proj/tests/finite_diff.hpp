#pragma once

// Central-difference oracle for unit tests. Perturbs entries of leaf tensors
// in place, re-evaluates the loss closure and compares with the gradient left
// by backward(). Independent of every backward rule it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "hcanet/rng.hpp"
#include "hcanet/tensor.hpp"

namespace fd {

using hcanet::Tensor;

struct Report {
    double max_rel_err = 0.0;
    std::string worst;
    std::size_t checked = 0;
};

// |analytic - numeric| / max(|analytic|, |numeric|, floor). With the 1e-2
// floor a 1e-3 bound means |a - n| <= max(1e-3 |a|, 1e-3 |n|, 1e-5).
inline double rel_err(double a, double n, double floor = 1e-2) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline Report check(const std::function<Tensor<double>()>& loss_fn,
                    std::vector<std::pair<std::string, Tensor<double>>> wrt,
                    double step = 1e-3,
                    std::size_t max_entries = std::numeric_limits<std::size_t>::max(),
                    std::uint64_t seed = 7) {
    for (auto& [name, t] : wrt) t.zero_grad();
    hcanet::backward(loss_fn());
    Report rep;
    hcanet::Rng rng(seed);
    for (auto& [name, t] : wrt) {
        const std::vector<double> analytic = t.has_grad()
            ? std::vector<double>(t.grad().begin(), t.grad().end())
            : std::vector<double>(t.numel(), 0.0);
        std::vector<std::size_t> idx;
        if (t.numel() <= max_entries) {
            for (std::size_t i = 0; i < t.numel(); ++i) idx.push_back(i);
        } else {
            idx = rng.choose(t.numel(), max_entries);
        }
        auto data = t.mutable_data();
        for (std::size_t i : idx) {
            const double orig = data[i];
            data[i] = orig + step;
            const double up = loss_fn().item();
            data[i] = orig - step;
            const double down = loss_fn().item();
            data[i] = orig;
            const double numeric = (up - down) / (2 * step);
            const double e = rel_err(analytic[i], numeric);
            ++rep.checked;
            if (e > rep.max_rel_err) {
                rep.max_rel_err = e;
                rep.worst = name + "[" + std::to_string(i) + "] analytic=" +
                            std::to_string(analytic[i]) + " numeric=" + std::to_string(numeric);
            }
        }
    }
    return rep;
}

inline Tensor<double> random_tensor(hcanet::Shape shape, hcanet::Rng& rng, bool requires_grad = true,
                                    double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(hcanet::shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor<double>(std::move(shape), std::move(v), requires_grad);
}

/// Scalar probe: sum(out * R) for a fixed random R, so every output entry
/// carries a distinct weight into the gradient.
inline Tensor<double> probe(const Tensor<double>& out, std::uint64_t seed = 99) {
    hcanet::Rng rng(seed);
    auto r = random_tensor(out.shape(), rng, false);
    return hcanet::sum(hcanet::mul(out, r));
}

}  // namespace fd
