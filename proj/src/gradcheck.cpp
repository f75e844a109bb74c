#include "hcanet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "hcanet/cafm.hpp"
#include "hcanet/errors.hpp"
#include "hcanet/loss.hpp"
#include "hcanet/msfn.hpp"
#include "hcanet/network.hpp"
#include "hcanet/nn_ops.hpp"

namespace hcanet {

using nlohmann::json;

namespace {

using T = Tensor<double>;

struct Setup {
    std::function<T()> loss;
    nn::NamedParams<double> wrt;
};

using Builder = std::function<Setup(Rng&)>;

struct Entry {
    std::string name;
    Builder build;
    bool sampled = false;
};

T rand_t(Shape shape, Rng& rng, bool grad = true, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return T(std::move(shape), std::move(v), grad);
}

/// Magnitudes in [lo, 1] with random sign; keeps abs and div away from 0.
T rand_away(Shape shape, Rng& rng, double lo) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(lo, 1.0);
    return T(std::move(shape), std::move(v), true);
}

T probe(const T& out, const T& r) { return sum(mul(out, r)); }

/// Loss = sum(f(inputs) * R) with R drawn after the inputs.
Setup unary(Rng& rng, T x, std::function<T(const T&)> f, Shape out_shape) {
    auto r = rand_t(std::move(out_shape), rng, false);
    return {[x, f, r] { return probe(f(x), r); }, {{"x", x}}};
}

void randomize(nn::NamedParams<double>& params, Rng& rng) {
    for (auto& [name, t] : params) {
        for (auto& v : t.mutable_data()) v = rng.uniform(-0.5, 0.5);
    }
}

std::vector<Entry> ops_entries() {
    std::vector<Entry> e;
    auto binary = [](std::string name, std::function<T(const T&, const T&)> f, bool away_b) {
        return Entry{name, [f, away_b](Rng& rng) {
                         auto a = rand_t({2, 3, 4}, rng);
                         auto b = away_b ? rand_away({2, 3, 4}, rng, 0.5) : rand_t({2, 3, 4}, rng);
                         auto r = rand_t({2, 3, 4}, rng, false);
                         return Setup{[=] { return probe(f(a, b), r); }, {{"a", a}, {"b", b}}};
                     }};
    };
    e.push_back(binary("add", [](const T& a, const T& b) { return add(a, b); }, false));
    e.push_back(binary("sub", [](const T& a, const T& b) { return sub(a, b); }, false));
    e.push_back(binary("mul", [](const T& a, const T& b) { return mul(a, b); }, false));
    e.push_back(binary("div", [](const T& a, const T& b) { return div(a, b); }, true));
    e.push_back({"scalar_broadcast", [](Rng& rng) {
                     auto a = rand_t({3, 4}, rng);
                     auto s = rand_away({}, rng, 0.5);
                     auto r = rand_t({3, 4}, rng, false);
                     return Setup{[=] { return probe(add(mul(a, s), div(a, s)), r); }, {{"a", a}, {"s", s}}};
                 }});
    e.push_back({"scale", [](Rng& rng) {
                     return unary(rng, rand_t({3, 5}, rng), [](const T& x) { return scale(x, 1.7); }, {3, 5});
                 }});
    e.push_back({"abs", [](Rng& rng) {
                     return unary(rng, rand_away({3, 5}, rng, 0.1), [](const T& x) { return abs(x); }, {3, 5});
                 }});
    e.push_back({"square", [](Rng& rng) {
                     return unary(rng, rand_t({3, 5}, rng), [](const T& x) { return square(x); }, {3, 5});
                 }});
    e.push_back({"gelu", [](Rng& rng) {
                     return unary(rng, rand_t({3, 5}, rng, true, -3, 3), [](const T& x) { return gelu(x); }, {3, 5});
                 }});
    e.push_back({"sum", [](Rng& rng) {
                     auto x = rand_t({2, 3, 2}, rng);
                     return Setup{[x] { return square(sum(x)); }, {{"x", x}}};
                 }});
    e.push_back({"mean", [](Rng& rng) {
                     auto x = rand_t({2, 3, 2}, rng);
                     return Setup{[x] { return square(mean(x)); }, {{"x", x}}};
                 }});
    e.push_back({"matmul", [](Rng& rng) {
                     auto a = rand_t({2, 3, 4}, rng);
                     auto b = rand_t({2, 4, 5}, rng);
                     auto r = rand_t({2, 3, 5}, rng, false);
                     return Setup{[=] { return probe(matmul(a, b), r); }, {{"a", a}, {"b", b}}};
                 }});
    for (std::size_t axis : {1u, 2u}) {
        e.push_back({"softmax_axis" + std::to_string(axis), [axis](Rng& rng) {
                         return unary(rng, rand_t({2, 3, 4}, rng, true, -2, 2),
                                      [axis](const T& x) { return softmax(x, axis); }, {2, 3, 4});
                     }});
    }
    e.push_back({"reshape_permute", [](Rng& rng) {
                     return unary(rng, rand_t({2, 3, 4}, rng),
                                  [](const T& x) { return square(permute(reshape(x, {6, 4}), {1, 0})); }, {4, 6});
                 }});
    e.push_back({"concat_slice", [](Rng& rng) {
                     auto a = rand_t({2, 3, 2}, rng);
                     auto b = rand_t({2, 2, 2}, rng);
                     auto r = rand_t({2, 3, 2}, rng, false);
                     return Setup{[=] { return probe(square(slice(concat<double>({a, b}, 1), 1, 1, 3)), r); },
                                  {{"a", a}, {"b", b}}};
                 }});
    auto conv_case = [](std::string name, std::size_t in, std::size_t out, std::size_t k,
                        nn::Conv2dOptions o, Shape xs) {
        return Entry{name, [=](Rng& rng) {
                         auto w = nn::make_conv2d<double>(in, out, k, o, true, rng);
                         auto x = rand_t(xs, rng);
                         auto y = o.groups > 1 ? nn::depthwise_conv2d(x, w) : nn::conv2d(x, w);
                         auto r = rand_t(y.shape(), rng, false);
                         auto loss = [x, w, r] {
                             return probe(w.options.groups > 1 ? nn::depthwise_conv2d(x, w) : nn::conv2d(x, w), r);
                         };
                         nn::NamedParams<double> p{{"x", x}};
                         nn::collect(p, "conv", w);
                         return Setup{loss, p};
                     }};
    };
    e.push_back(conv_case("conv2d_3x3", 3, 4, 3, {1, 1, 1, 1}, {2, 3, 5, 4}));
    e.push_back(conv_case("conv2d_stride2", 2, 3, 3, {2, 1, 1, 1}, {1, 2, 6, 6}));
    e.push_back(conv_case("conv2d_1x1", 4, 2, 1, {1, 0, 1, 1}, {1, 4, 3, 3}));
    e.push_back(conv_case("depthwise_dilated", 3, 3, 3, {1, 2, 2, 3}, {1, 3, 7, 7}));
    e.push_back(conv_case("depthwise_dilation3", 2, 2, 3, {1, 3, 3, 2}, {1, 2, 8, 8}));
    e.push_back({"conv3d", [](Rng& rng) {
                     auto w = nn::make_conv3d<double>(2, 3, {3, 3, 3}, true, rng);
                     auto x = rand_t({1, 2, 4, 4, 4}, rng);
                     auto r = rand_t({1, 3, 4, 4, 4}, rng, false);
                     nn::NamedParams<double> p{{"x", x}};
                     nn::collect(p, "conv", w);
                     return Setup{[=] { return probe(nn::conv3d(x, w), r); }, p};
                 }});
    e.push_back({"channel_shuffle", [](Rng& rng) {
                     return unary(rng, rand_t({1, 8, 2, 2}, rng),
                                  [](const T& x) { return square(nn::channel_shuffle(x, 4)); }, {1, 8, 2, 2});
                 }});
    e.push_back({"downsample_upsample", [](Rng& rng) {
                     auto d = nn::make_downsample<double>(4, true, rng);
                     auto u = nn::make_upsample<double>(8, true, rng);
                     auto x = rand_t({1, 4, 6, 6}, rng);
                     auto r = rand_t({1, 4, 6, 6}, rng, false);
                     nn::NamedParams<double> p{{"x", x}};
                     nn::collect(p, "down", d);
                     nn::collect(p, "up", u);
                     return Setup{[=] { return probe(nn::upsample(nn::downsample(x, d), u), r); }, p};
                 }});
    e.push_back({"layer_norm_channels", [](Rng& rng) {
                     auto ln = nn::make_layer_norm<double>(5);
                     nn::NamedParams<double> p;
                     nn::collect(p, "ln", ln);
                     randomize(p, rng);
                     auto x = rand_t({2, 5, 3, 3}, rng, true, -2, 2);
                     p.emplace_back("x", x);
                     auto r = rand_t({2, 5, 3, 3}, rng, false);
                     return Setup{[=] { return probe(nn::layer_norm_channels(x, ln), r); }, p};
                 }});
    e.push_back({"total_loss", [](Rng& rng) {
                     auto target = rand_t({1, 3, 4, 5}, rng, false, 0, 1);
                     auto offset = rand_away({1, 3, 4, 5}, rng, 0.05);
                     std::vector<double> v(target.numel());
                     for (std::size_t i = 0; i < v.size(); ++i) v[i] = target.data()[i] + offset.data()[i];
                     T pred({1, 3, 4, 5}, v, true);
                     LossConfig cfg;
                     cfg.lambda = 0.5;
                     return Setup{[=] { return total_loss(pred, target, cfg); }, {{"pred", pred}}};
                 }});
    return e;
}

std::vector<Entry> cafm_entries() {
    std::vector<Entry> e;
    for (bool conv3 : {true, false}) {
        const std::string tag = conv3 ? "" : "_spatial";
        e.push_back({"local_branch" + tag, [conv3](Rng& rng) {
                         CafmOptions o;
                         o.spectral_conv3d = conv3;
                         auto w = make_cafm<double>(8, o, rng);
                         auto x = rand_t({1, 8, 4, 4}, rng);
                         auto r = rand_t({1, 8, 4, 4}, rng, false);
                         nn::NamedParams<double> p{{"x", x}};
                         nn::collect(p, "local.pointwise", w.local_pointwise);
                         nn::collect(p, "local.spectral", w.local_spectral);
                         return Setup{[=] { return probe(local_branch(x, w), r); }, p};
                     }});
    }
    e.push_back({"attention_map", [](Rng& rng) {
                     auto q = rand_t({2, 5, 3}, rng);
                     auto k = rand_t({2, 3, 5}, rng);
                     auto alpha = rand_away({}, rng, 0.5);
                     auto r = rand_t({2, 3, 3}, rng, false);
                     return Setup{[=] { return probe(attention_map(q, k, alpha), r); },
                                  {{"q_hat", q}, {"k_hat", k}, {"alpha", alpha}}};
                 }});
    for (bool local : {true, false}) {
        e.push_back({local ? "cafm" : "cafm_global_only", [local](Rng& rng) {
                         CafmOptions o;
                         o.local_branch = local;
                         auto w = make_cafm<double>(8, o, rng);
                         auto x = rand_t({1, 8, 4, 3}, rng);
                         auto r = rand_t({1, 8, 4, 3}, rng, false);
                         nn::NamedParams<double> p{{"x", x}};
                         w.collect(p, "cafm");
                         return Setup{[=] { return probe(cafm_forward(x, w), r); }, p};
                     }});
    }
    return e;
}

std::vector<Entry> msfn_entries() {
    std::vector<Entry> e;
    e.push_back({"gating", [](Rng& rng) {
                     auto w = make_msfn<double>(4, {}, rng);
                     auto x = rand_t({1, 4, 4, 4}, rng);
                     auto r = rand_t(gating(x, w).shape(), rng, false);
                     nn::NamedParams<double> p{{"x", x}};
                     w.collect(p, "msfn");
                     return Setup{[=] { return probe(gating(x, w), r); }, p};
                 }});
    for (int variant = 0; variant < 3; ++variant) {
        static const char* names[] = {"msfn", "msfn_spatial", "msfn_single_expansion"};
        e.push_back({names[variant], [variant](Rng& rng) {
                         MsfnOptions o;
                         o.spectral_conv3d = variant != 1;
                         o.single_expansion = variant == 2;
                         auto w = make_msfn<double>(4, o, rng);
                         auto x = rand_t({1, 4, 5, 4}, rng);
                         auto r = rand_t({1, 4, 5, 4}, rng, false);
                         nn::NamedParams<double> p{{"x", x}};
                         w.collect(p, "msfn");
                         return Setup{[=] { return probe(msfn_forward(x, w), r); }, p};
                     }});
    }
    e.push_back({"plain_ffn", [](Rng& rng) {
                     auto w = make_plain_ffn<double>(4, 2, true, rng);
                     auto x = rand_t({1, 4, 3, 3}, rng);
                     auto r = rand_t({1, 4, 3, 3}, rng, false);
                     nn::NamedParams<double> p{{"x", x}};
                     w.collect(p, "ffn");
                     return Setup{[=] { return probe(plain_ffn_forward(x, w), r); }, p};
                 }});
    return e;
}

NetworkConfig small_block_config() {
    auto c = NetworkConfig::desk_preset(4);
    c.base_width = 8;
    return c;
}

std::vector<Entry> net_entries() {
    std::vector<Entry> e;
    e.push_back({"camixing_block", [](Rng& rng) {
                     auto block = make_camixing<double>(8, small_block_config(), rng);
                     nn::NamedParams<double> p;
                     block.collect(p, "block");
                     // normalisation starts at weight 1, bias 0; move it off that point
                     for (auto& [name, t] : p) {
                         if (name.find("norm") == std::string::npos) continue;
                         for (auto& v : t.mutable_data()) v += rng.uniform(-0.3, 0.3);
                     }
                     auto x = rand_t({1, 8, 4, 4}, rng);
                     p.emplace_back("x", x);
                     auto r = rand_t({1, 8, 4, 4}, rng, false);
                     return Setup{[=] { return probe(camixing_forward(x, block), r); }, p};
                 },
                 true});
    e.push_back({"desk_network", [](Rng& rng) {
                     auto cfg = NetworkConfig::desk_preset(8);
                     cfg.init_seed = rng.next();
                     auto net = std::make_shared<HcaNet<double>>(cfg);
                     auto x = rand_t({1, 8, 8, 8}, rng, true, 0, 1);
                     auto r = rand_t({1, 8, 8, 8}, rng, false);
                     auto p = net->parameters();
                     p.emplace_back("input", x);
                     return Setup{[=] { return probe(net->denoise(x), r); }, p};
                 },
                 true});
    return e;
}

std::vector<Entry> entries_for(const std::string& preset) {
    if (preset == "ops") return ops_entries();
    if (preset == "cafm") return cafm_entries();
    if (preset == "msfn") return msfn_entries();
    if (preset == "net") return net_entries();
    throw ConfigError("unknown gradcheck preset '" + preset + "' (expected ops, cafm, msfn or net)");
}

GradcheckCase check_case(const Entry& entry, std::uint64_t seed, const GradcheckOptions& opt) {
    Rng rng(derive_seed(seed, {0x6763}));
    Setup s = entry.build(rng);
    for (auto& [name, t] : s.wrt) t.zero_grad();
    backward(s.loss());

    GradcheckCase out;
    out.name = entry.name;
    out.seed = seed;
    Rng pick(derive_seed(seed, {0x7069636b}));
    for (auto& [name, t] : s.wrt) {
        const std::vector<double> analytic =
            t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end()) : std::vector<double>(t.numel(), 0.0);
        std::vector<std::size_t> idx;
        if (entry.sampled && t.numel() > opt.max_entries) {
            idx = pick.choose(t.numel(), opt.max_entries);
        } else {
            for (std::size_t i = 0; i < t.numel(); ++i) idx.push_back(i);
        }
        auto data = t.mutable_data();
        for (std::size_t i : idx) {
            const double orig = data[i];
            double up, down;
            {
                NoGradGuard guard;
                data[i] = orig + opt.step;
                up = s.loss().item();
                data[i] = orig - opt.step;
                down = s.loss().item();
            }
            data[i] = orig;
            const double numeric = (up - down) / (2.0 * opt.step);
            const double err = gradcheck_rel_err(analytic[i], numeric);
            ++out.checked;
            if (!(err <= out.max_rel_err)) {
                out.max_rel_err = std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
                out.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[i]) +
                            " numeric " + std::to_string(numeric);
            }
        }
    }
    return out;
}

}  // namespace

double gradcheck_rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-2});
}

const std::vector<std::string>& gradcheck_presets() {
    static const std::vector<std::string> p{"ops", "cafm", "msfn", "net"};
    return p;
}

GradcheckReport run_gradcheck(const std::string& preset, const GradcheckOptions& options) {
    if (options.seeds == 0) throw ConfigError("gradcheck: seeds must be positive");
    if (!(options.step > 0.0)) throw ConfigError("gradcheck: step must be positive");
    const auto entries = entries_for(preset);
    GradcheckReport rep;
    rep.preset = preset;
    rep.options = options;
    for (const auto& entry : entries) {
        for (std::uint64_t seed = 0; seed < options.seeds; ++seed) {
            rep.cases.push_back(check_case(entry, seed, options));
            rep.max_rel_err = std::max(rep.max_rel_err, rep.cases.back().max_rel_err);
        }
    }
    rep.passed = rep.max_rel_err < options.tolerance;
    return rep;
}

void to_json(json& j, const GradcheckReport& r) {
    json cases = json::array();
    for (const auto& c : r.cases) {
        cases.push_back({{"name", c.name},
                         {"seed", c.seed},
                         {"checked", c.checked},
                         {"max_rel_err", c.max_rel_err},
                         {"worst", c.worst}});
    }
    j = json{{"preset", r.preset},
             {"seeds", r.options.seeds},
             {"step", r.options.step},
             {"tolerance", r.options.tolerance},
             {"max_entries", r.options.max_entries},
             {"max_rel_err", r.max_rel_err},
             {"passed", r.passed},
             {"cases", cases}};
}

}  // namespace hcanet
