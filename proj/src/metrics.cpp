#include "hcanet/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "hcanet/errors.hpp"

namespace hcanet {

namespace {

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void check_pair(const Cube& a, const Cube& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("metric operands differ in shape: " + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + "x" + std::to_string(a.bands) + " vs " +
                         std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                         std::to_string(b.bands));
    }
    if (a.voxels() == 0) throw ShapeError("metrics need a non-empty cube");
}

std::array<double, kWindow> gaussian_taps() {
    std::array<double, kWindow> g{};
    double total = 0;
    for (std::size_t i = 0; i < kWindow; ++i) {
        const double d = double(i) - double(kWindow / 2);
        g[i] = std::exp(-d * d / (2 * kSigma * kSigma));
        total += g[i];
    }
    for (auto& v : g) v /= total;
    return g;
}

/// Valid separable filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& in, std::size_t h, std::size_t w,
                                 const std::array<double, kWindow>& g) {
    const std::size_t ow = w - kWindow + 1, oh = h - kWindow + 1;
    std::vector<double> rows(h * ow);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double s = 0;
            for (std::size_t k = 0; k < kWindow; ++k) s += g[k] * in[y * w + x + k];
            rows[y * ow + x] = s;
        }
    }
    std::vector<double> out(oh * ow);
    for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            double s = 0;
            for (std::size_t k = 0; k < kWindow; ++k) s += g[k] * rows[(y + k) * ow + x];
            out[y * ow + x] = s;
        }
    }
    return out;
}

double ssim_band(const float* a, const float* b, std::size_t h, std::size_t w,
                 const std::array<double, kWindow>& g) {
    const std::size_t n = h * w;
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = a[i];
        y[i] = b[i];
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w, g), my = filter_valid(y, h, w, g);
    const auto sxx = filter_valid(xx, h, w, g), syy = filter_valid(yy, h, w, g),
               sxy = filter_valid(xy, h, w, g);
    double total = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i];
        const double vy = syy[i] - my[i] * my[i];
        const double cov = sxy[i] - mx[i] * my[i];
        total += ((2 * mx[i] * my[i] + kC1) * (2 * cov + kC2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
    }
    return total / mx.size();
}

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

}  // namespace

std::vector<double> psnr_per_band(const Cube& pred, const Cube& ref) {
    check_pair(pred, ref);
    std::vector<double> out(ref.bands);
    for (std::size_t b = 0; b < ref.bands; ++b) {
        const float* p = pred.band(b);
        const float* r = ref.band(b);
        double se = 0;
        for (std::size_t i = 0; i < ref.plane(); ++i) {
            const double d = double(p[i]) - double(r[i]);
            se += d * d;
        }
        const double mse = se / ref.plane();
        out[b] = mse == 0.0 ? kPsnrCap : std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
    }
    return out;
}

double psnr(const Cube& pred, const Cube& ref) { return mean_of(psnr_per_band(pred, ref)); }

std::vector<double> ssim_per_band(const Cube& pred, const Cube& ref) {
    check_pair(pred, ref);
    if (ref.height < kWindow || ref.width < kWindow) {
        throw ConfigError("SSIM needs at least 11x11 pixels, cube is " + std::to_string(ref.height) + "x" +
                          std::to_string(ref.width));
    }
    const auto g = gaussian_taps();
    std::vector<double> out(ref.bands);
    for (std::size_t b = 0; b < ref.bands; ++b) {
        out[b] = ssim_band(pred.band(b), ref.band(b), ref.height, ref.width, g);
    }
    return out;
}

double ssim(const Cube& pred, const Cube& ref) { return mean_of(ssim_per_band(pred, ref)); }

SamResult sam(const Cube& pred, const Cube& ref) {
    check_pair(pred, ref);
    SamResult res;
    double total = 0;
    std::size_t counted = 0;
    bool ref_nonzero = false;
    for (std::size_t i = 0; i < ref.plane(); ++i) {
        double np = 0, nr = 0;
        for (std::size_t b = 0; b < ref.bands; ++b) {
            const double p = pred.band(b)[i], r = ref.band(b)[i];
            np += p * p;
            nr += r * r;
        }
        if (nr > 0) ref_nonzero = true;
        if (np == 0 || nr == 0) {
            ++res.skipped;
            continue;
        }
        // 2 atan2(|u - v|, |u + v|) on unit vectors; exact 0 for parallel spectra
        np = std::sqrt(np);
        nr = std::sqrt(nr);
        double diff = 0, sum = 0;
        for (std::size_t b = 0; b < ref.bands; ++b) {
            const double u = pred.band(b)[i] / np, v = ref.band(b)[i] / nr;
            diff += (u - v) * (u - v);
            sum += (u + v) * (u + v);
        }
        total += 2.0 * std::atan2(std::sqrt(diff), std::sqrt(sum));
        ++counted;
    }
    if (!ref_nonzero) throw MetricError("SAM is undefined: every reference spectrum is zero");
    res.radians = counted ? total / counted : 0.0;
    return res;
}

MetricReport evaluate(const Cube& pred, const Cube& ref) {
    MetricReport r;
    r.psnr_per_band = psnr_per_band(pred, ref);
    r.psnr_db = mean_of(r.psnr_per_band);
    if (ref.height >= kWindow && ref.width >= kWindow) {
        r.ssim_per_band = ssim_per_band(pred, ref);
        r.ssim = mean_of(r.ssim_per_band);
    } else {
        r.ssim = std::nan("");
    }
    const auto s = sam(pred, ref);
    r.sam_rad = s.radians;
    r.sam_skipped_pixels = s.skipped;
    return r;
}

void to_json(nlohmann::json& j, const MetricReport& r) {
    j = nlohmann::json{{"psnr_db", r.psnr_db},
                       {"ssim", std::isnan(r.ssim) ? nlohmann::json(nullptr) : nlohmann::json(r.ssim)},
                       {"sam_rad", r.sam_rad},
                       {"sam_skipped_pixels", r.sam_skipped_pixels},
                       {"per_band", {{"psnr_db", r.psnr_per_band}, {"ssim", r.ssim_per_band}}}};
}

}  // namespace hcanet
