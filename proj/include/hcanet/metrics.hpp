#pragma once

// Band-averaged PSNR and SSIM with data range 1, and the mean spectral angle.
// All arithmetic in double.

#include <cstddef>
#include <vector>

#include "hcanet/cube.hpp"

#include "json.hpp"

namespace hcanet {

inline constexpr double kPsnrCap = 100.0;

/// Per-band 10 log10(1 / MSE), capped at kPsnrCap.
std::vector<double> psnr_per_band(const Cube& pred, const Cube& ref);
double psnr(const Cube& pred, const Cube& ref);

/// 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, valid windows only.
std::vector<double> ssim_per_band(const Cube& pred, const Cube& ref);
double ssim(const Cube& pred, const Cube& ref);

struct SamResult {
    double radians = 0.0;
    /// Pixels whose spectrum is zero in either cube.
    std::size_t skipped = 0;
};

/// Throws MetricError when every reference spectrum is zero.
SamResult sam(const Cube& pred, const Cube& ref);

struct MetricReport {
    double psnr_db = 0.0;
    double ssim = 0.0;
    double sam_rad = 0.0;
    std::size_t sam_skipped_pixels = 0;
    std::vector<double> psnr_per_band;
    std::vector<double> ssim_per_band;
};

/// ssim is NaN (JSON null) when H or W is below 11.
MetricReport evaluate(const Cube& pred, const Cube& ref);

void to_json(nlohmann::json& j, const MetricReport& r);

}  // namespace hcanet
