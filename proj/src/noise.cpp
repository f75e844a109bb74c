#include "hcanet/noise.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "hcanet/errors.hpp"
#include "hcanet/rng.hpp"

namespace hcanet {

using nlohmann::json;

namespace {

enum Stream : std::uint64_t {
    kGauss = 1,
    kStripe = 2,
    kDeadline = 3,
    kImpulse = 4,
    kBandChoice = 5,
    kCase5Mask = 6,
    kBlind = 7,
};

Rng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    return Rng(derive_seed(seed, tags));
}

DegradationReport blank_report(const Cube& x, const std::string& kind, std::uint64_t seed) {
    DegradationReport r;
    r.kind = kind;
    r.seed = seed;
    r.clean_hash = cube_hash(x);
    r.bands.resize(x.bands);
    return r;
}

NoisyCube finish(Cube cube, DegradationReport report) {
    report.noisy_hash = cube_hash(cube);
    return {std::move(cube), std::move(report)};
}

void check_sigma(double sigma) {
    if (!(sigma > 0.0 && sigma <= 255.0)) {
        throw ConfigError("noise sigma must lie in (0, 255], got " + std::to_string(sigma));
    }
}

void gaussian_band(Cube& c, std::size_t b, double sigma, std::uint64_t seed) {
    Rng rng = stream(seed, {kGauss, b});
    const double s = sigma / 255.0;
    float* p = c.band(b);
    for (std::size_t i = 0; i < c.plane(); ++i) p[i] = static_cast<float>(p[i] + s * rng.normal());
}

std::vector<std::size_t> affected_bands(std::size_t bands, Stream type, std::uint64_t seed) {
    Rng rng = stream(seed, {kBandChoice, type});
    auto chosen = rng.choose(bands, (bands + 2) / 3);
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

/// Number of columns for a drawn fraction, kept inside the declared range.
std::size_t column_count(std::size_t width, double fraction, const NoiseParams& p) {
    const auto lo = static_cast<std::size_t>(std::ceil(p.column_fraction_min * width - 1e-9));
    const auto hi = static_cast<std::size_t>(std::floor(p.column_fraction_max * width + 1e-9));
    const auto n = static_cast<std::size_t>(std::llround(fraction * width));
    return std::clamp(n, std::max<std::size_t>(lo, 1), std::max<std::size_t>(hi, 1));
}

void check_width(const Cube& c, const char* what) {
    if (c.width < 20) {
        throw ConfigError(std::string(what) + " noise needs at least 20 columns, cube has " +
                          std::to_string(c.width));
    }
}

void stripe_band(Cube& c, std::size_t b, std::uint64_t seed, const NoiseParams& p, BandDegradation& rep) {
    Rng rng = stream(seed, {kStripe, b});
    const double f = rng.uniform(p.column_fraction_min, p.column_fraction_max);
    auto cols = rng.choose(c.width, column_count(c.width, f, p));
    std::sort(cols.begin(), cols.end());
    float* band = c.band(b);
    for (std::size_t col : cols) {
        const double offset = rng.uniform(-p.stripe_amplitude, p.stripe_amplitude);
        const float o = static_cast<float>(offset);
        for (std::size_t y = 0; y < c.height; ++y) band[y * c.width + col] += o;
        rep.stripe_columns.push_back(col);
        rep.stripe_offsets.push_back(o);
    }
}

void deadline_band(Cube& c, std::size_t b, std::uint64_t seed, const NoiseParams& p, BandDegradation& rep) {
    Rng rng = stream(seed, {kDeadline, b});
    const double f = rng.uniform(p.column_fraction_min, p.column_fraction_max);
    const std::size_t target = column_count(c.width, f, p);
    std::vector<char> dead(c.width, 0);
    std::size_t count = 0;
    while (count < target) {
        const std::size_t run = std::min<std::size_t>(1 + rng.below(p.deadline_max_run), target - count);
        const std::size_t start = rng.below(c.width - run + 1);
        for (std::size_t k = start; k < start + run; ++k) {
            if (!dead[k]) {
                dead[k] = 1;
                ++count;
            }
        }
    }
    float* band = c.band(b);
    for (std::size_t col = 0; col < c.width; ++col) {
        if (!dead[col]) continue;
        for (std::size_t y = 0; y < c.height; ++y) band[y * c.width + col] = 0.0f;
        rep.dead_columns.push_back(col);
    }
}

void impulse_band(Cube& c, std::size_t b, std::uint64_t seed, const NoiseParams& p, BandDegradation& rep) {
    Rng rng = stream(seed, {kImpulse, b});
    const double density = rng.uniform(p.impulse_density_min, p.impulse_density_max);
    float* band = c.band(b);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < c.plane(); ++i) {
        const bool hit = rng.bernoulli(density);
        const bool salt = rng.bernoulli(0.5);
        if (hit) {
            band[i] = salt ? 1.0f : 0.0f;
            ++hits;
        }
    }
    rep.impulse_density = density;
    rep.impulse_voxels = hits;
}

void noniid_into(Cube& c, DegradationReport& r, double lo, double hi, std::uint64_t seed) {
    if (!(lo <= hi)) throw ConfigError("sigma_min must not exceed sigma_max");
    check_sigma(lo);
    check_sigma(hi);
    for (std::size_t b = 0; b < c.bands; ++b) {
        Rng pick = stream(seed, {kGauss, b, 0xffff});
        const double sigma = lo == hi ? lo : pick.uniform(lo, hi);
        gaussian_band(c, b, sigma, seed);
        r.bands[b].sigma = sigma;
    }
}

using BandOp = void (*)(Cube&, std::size_t, std::uint64_t, const NoiseParams&, BandDegradation&);

void on_third(Cube& c, DegradationReport& r, Stream type, BandOp op, std::uint64_t seed,
              const NoiseParams& p) {
    for (std::size_t b : affected_bands(c.bands, type, seed)) op(c, b, seed, p, r.bands[b]);
}

}  // namespace

std::string to_string(NoiseKind kind) {
    switch (kind) {
        case NoiseKind::gaussian: return "gaussian";
        case NoiseKind::blind_gaussian: return "blind_gaussian";
        case NoiseKind::case1: return "case1";
        case NoiseKind::case2: return "case2";
        case NoiseKind::case3: return "case3";
        case NoiseKind::case4: return "case4";
        case NoiseKind::case5: return "case5";
    }
    return "?";
}

NoiseKind noise_kind_from_string(const std::string& name) {
    for (auto k : {NoiseKind::gaussian, NoiseKind::blind_gaussian, NoiseKind::case1, NoiseKind::case2,
                   NoiseKind::case3, NoiseKind::case4, NoiseKind::case5}) {
        if (to_string(k) == name) return k;
    }
    throw ConfigError("unknown noise kind '" + name + "'");
}

void NoiseParams::validate() const {
    if (!(sigma_min > 0 && sigma_min <= sigma_max && sigma_max <= 255)) {
        throw ConfigError("noise sigma range must satisfy 0 < sigma_min <= sigma_max <= 255");
    }
    if (!(column_fraction_min > 0 && column_fraction_min <= column_fraction_max && column_fraction_max < 1)) {
        throw ConfigError("column fraction range must satisfy 0 < min <= max < 1");
    }
    if (!(stripe_amplitude >= 0)) throw ConfigError("stripe amplitude must be nonnegative");
    if (deadline_max_run == 0) throw ConfigError("deadline run width must be positive");
    if (!(impulse_density_min >= 0 && impulse_density_min <= impulse_density_max && impulse_density_max <= 1)) {
        throw ConfigError("impulse density range must satisfy 0 <= min <= max <= 1");
    }
    if (!(case5_probability >= 0 && case5_probability <= 1)) {
        throw ConfigError("case 5 probability must lie in [0, 1]");
    }
}

void NoiseSpec::validate() const {
    params.validate();
    if (kind == NoiseKind::gaussian) check_sigma(sigma);
}

void to_json(json& j, const NoiseSpec& s) {
    const auto& p = s.params;
    j = json{{"kind", to_string(s.kind)},
             {"sigma", s.sigma},
             {"seed", s.seed},
             {"sigma_min", p.sigma_min},
             {"sigma_max", p.sigma_max},
             {"column_fraction", {p.column_fraction_min, p.column_fraction_max}},
             {"stripe_amplitude", p.stripe_amplitude},
             {"deadline_max_run", p.deadline_max_run},
             {"impulse_density", {p.impulse_density_min, p.impulse_density_max}},
             {"case5_probability", p.case5_probability}};
}

void from_json(const json& j, NoiseSpec& s) {
    NoiseSpec d;
    try {
        s.kind = noise_kind_from_string(j.value("kind", to_string(d.kind)));
        s.sigma = j.value("sigma", d.sigma);
        s.seed = j.value("seed", d.seed);
        auto& p = s.params;
        p.sigma_min = j.value("sigma_min", d.params.sigma_min);
        p.sigma_max = j.value("sigma_max", d.params.sigma_max);
        if (j.contains("column_fraction")) {
            p.column_fraction_min = j.at("column_fraction").at(0).get<double>();
            p.column_fraction_max = j.at("column_fraction").at(1).get<double>();
        }
        p.stripe_amplitude = j.value("stripe_amplitude", d.params.stripe_amplitude);
        p.deadline_max_run = j.value("deadline_max_run", d.params.deadline_max_run);
        if (j.contains("impulse_density")) {
            p.impulse_density_min = j.at("impulse_density").at(0).get<double>();
            p.impulse_density_max = j.at("impulse_density").at(1).get<double>();
        }
        p.case5_probability = j.value("case5_probability", d.params.case5_probability);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("noise spec: ") + e.what());
    }
    s.validate();
}

std::vector<std::string> BandDegradation::types() const {
    std::vector<std::string> t;
    if (sigma) t.emplace_back("gaussian");
    if (!stripe_columns.empty()) t.emplace_back("stripe");
    if (!dead_columns.empty()) t.emplace_back("deadline");
    if (impulse_density) t.emplace_back("impulse");
    return t;
}

void to_json(json& j, const DegradationReport& r) {
    json bands = json::array();
    for (std::size_t b = 0; b < r.bands.size(); ++b) {
        const auto& d = r.bands[b];
        json e{{"band", b}, {"types", d.types()}};
        if (d.sigma) e["sigma"] = *d.sigma;
        if (!d.stripe_columns.empty()) {
            e["stripe_columns"] = d.stripe_columns;
            e["stripe_offsets"] = d.stripe_offsets;
        }
        if (!d.dead_columns.empty()) e["dead_columns"] = d.dead_columns;
        if (d.impulse_density) {
            e["impulse_density"] = *d.impulse_density;
            e["impulse_voxels"] = d.impulse_voxels;
        }
        bands.push_back(std::move(e));
    }
    j = json{{"kind", r.kind},
             {"seed", r.seed},
             {"clean_hash", r.clean_hash},
             {"noisy_hash", r.noisy_hash},
             {"bands", std::move(bands)}};
}

NoisyCube add_gaussian(const Cube& x, double sigma, std::uint64_t seed) {
    check_sigma(sigma);
    auto r = blank_report(x, "gaussian", seed);
    Cube c = x;
    for (std::size_t b = 0; b < c.bands; ++b) {
        gaussian_band(c, b, sigma, seed);
        r.bands[b].sigma = sigma;
    }
    return finish(std::move(c), std::move(r));
}

NoisyCube add_noniid_gaussian(const Cube& x, double sigma_min, double sigma_max, std::uint64_t seed) {
    auto r = blank_report(x, "noniid_gaussian", seed);
    Cube c = x;
    noniid_into(c, r, sigma_min, sigma_max, seed);
    return finish(std::move(c), std::move(r));
}

NoisyCube add_blind_gaussian(const Cube& x, double sigma_min, double sigma_max, std::uint64_t seed) {
    if (!(sigma_min <= sigma_max)) throw ConfigError("sigma_min must not exceed sigma_max");
    Rng rng = stream(seed, {kBlind});
    const double sigma = rng.uniform(sigma_min, sigma_max);
    auto out = add_gaussian(x, sigma, seed);
    out.report.kind = "blind_gaussian";
    return out;
}

NoisyCube add_stripe(const Cube& x, std::uint64_t seed, const NoiseParams& params) {
    params.validate();
    check_width(x, "stripe");
    auto r = blank_report(x, "stripe", seed);
    Cube c = x;
    on_third(c, r, kStripe, stripe_band, seed, params);
    return finish(std::move(c), std::move(r));
}

NoisyCube add_deadline(const Cube& x, std::uint64_t seed, const NoiseParams& params) {
    params.validate();
    check_width(x, "deadline");
    auto r = blank_report(x, "deadline", seed);
    Cube c = x;
    on_third(c, r, kDeadline, deadline_band, seed, params);
    return finish(std::move(c), std::move(r));
}

NoisyCube add_impulse(const Cube& x, std::uint64_t seed, const NoiseParams& params) {
    params.validate();
    auto r = blank_report(x, "impulse", seed);
    Cube c = x;
    on_third(c, r, kImpulse, impulse_band, seed, params);
    return finish(std::move(c), std::move(r));
}

NoisyCube compose_case(const Cube& x, int case_id, std::uint64_t seed, const NoiseParams& params) {
    if (case_id < 1 || case_id > 5) {
        throw ConfigError("noise case must be 1..5, got " + std::to_string(case_id));
    }
    params.validate();
    if (case_id == 2 || case_id == 3 || case_id == 5) check_width(x, "stripe/deadline");
    auto r = blank_report(x, "case" + std::to_string(case_id), seed);
    Cube c = x;
    noniid_into(c, r, params.sigma_min, params.sigma_max, seed);
    switch (case_id) {
        case 2: on_third(c, r, kStripe, stripe_band, seed, params); break;
        case 3: on_third(c, r, kDeadline, deadline_band, seed, params); break;
        case 4: on_third(c, r, kImpulse, impulse_band, seed, params); break;
        case 5:
            for (std::size_t b = 0; b < c.bands; ++b) {
                Rng mask = stream(seed, {kCase5Mask, b});
                const bool stripe = mask.bernoulli(params.case5_probability);
                const bool deadline = mask.bernoulli(params.case5_probability);
                const bool impulse = mask.bernoulli(params.case5_probability);
                if (stripe) stripe_band(c, b, seed, params, r.bands[b]);
                if (deadline) deadline_band(c, b, seed, params, r.bands[b]);
                if (impulse) impulse_band(c, b, seed, params, r.bands[b]);
            }
            break;
        default: break;
    }
    return finish(std::move(c), std::move(r));
}

NoisyCube apply_noise(const Cube& x, const NoiseSpec& spec) {
    spec.validate();
    const auto& p = spec.params;
    switch (spec.kind) {
        case NoiseKind::gaussian: return add_gaussian(x, spec.sigma, spec.seed);
        case NoiseKind::blind_gaussian: return add_blind_gaussian(x, p.sigma_min, p.sigma_max, spec.seed);
        case NoiseKind::case1: return compose_case(x, 1, spec.seed, p);
        case NoiseKind::case2: return compose_case(x, 2, spec.seed, p);
        case NoiseKind::case3: return compose_case(x, 3, spec.seed, p);
        case NoiseKind::case4: return compose_case(x, 4, spec.seed, p);
        case NoiseKind::case5: return compose_case(x, 5, spec.seed, p);
    }
    throw ConfigError("unhandled noise kind");
}

std::string cube_hash(const Cube& c) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto feed = [&](const void* p, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ull;
        }
    };
    const std::uint64_t dims[3] = {c.height, c.width, c.bands};
    feed(dims, sizeof(dims));
    feed(c.data.data(), c.data.size() * sizeof(float));
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace hcanet
