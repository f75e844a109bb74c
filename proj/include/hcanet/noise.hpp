#pragma once

// Synthetic degradations on [0,1] cubes. Sigma is on the 0-255 scale and
// applied as sigma/255. Nothing is clipped.
//
// Every random draw comes from an Rng seeded by derive_seed(seed, {stream, band}),
// one stream per (noise type, band), so the Gaussian part of Cases 1-5 is the
// same realization for the same seed and each extra degradation is independent
// of it:
//   gaussian    {1, b}   per-voxel normals in band b
//   stripe      {2, b}   fraction, columns, offsets in band b
//   deadline    {3, b}   fraction, runs in band b
//   impulse     {4, b}   density, voxel draws in band b
//   band choice {5, t}   ceil(B/3) bands for type t (2, 3 or 4)
//   case 5 mask {6, b}   three Bernoulli(1/3) draws: stripe, deadline, impulse
//   blind sigma {7}      one sigma per cube

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hcanet/cube.hpp"

#include "json.hpp"

namespace hcanet {

enum class NoiseKind { gaussian, blind_gaussian, case1, case2, case3, case4, case5 };

std::string to_string(NoiseKind kind);
/// Throws ConfigError for unknown names.
NoiseKind noise_kind_from_string(const std::string& name);

struct NoiseParams {
    double sigma_min = 30.0;
    double sigma_max = 70.0;
    double column_fraction_min = 0.05;
    double column_fraction_max = 0.15;
    double stripe_amplitude = 0.25;
    std::size_t deadline_max_run = 3;
    double impulse_density_min = 0.3;
    double impulse_density_max = 0.7;
    double case5_probability = 1.0 / 3.0;

    void validate() const;
    bool operator==(const NoiseParams&) const = default;
};

struct NoiseSpec {
    NoiseKind kind = NoiseKind::gaussian;
    double sigma = 30.0;  // gaussian only
    std::uint64_t seed = 0;
    NoiseParams params;

    void validate() const;
    bool operator==(const NoiseSpec&) const = default;
};

void to_json(nlohmann::json& j, const NoiseSpec& s);
void from_json(const nlohmann::json& j, NoiseSpec& s);

struct BandDegradation {
    std::optional<double> sigma;
    std::vector<std::size_t> stripe_columns;
    std::vector<double> stripe_offsets;
    std::vector<std::size_t> dead_columns;
    std::optional<double> impulse_density;
    std::size_t impulse_voxels = 0;

    /// "gaussian", "stripe", "deadline", "impulse" in application order.
    std::vector<std::string> types() const;
};

struct DegradationReport {
    std::string kind;
    std::uint64_t seed = 0;
    std::string clean_hash;
    std::string noisy_hash;
    std::vector<BandDegradation> bands;
};

void to_json(nlohmann::json& j, const DegradationReport& r);

struct NoisyCube {
    Cube cube;
    DegradationReport report;
};

NoisyCube add_gaussian(const Cube& x, double sigma, std::uint64_t seed);
NoisyCube add_noniid_gaussian(const Cube& x, double sigma_min, double sigma_max, std::uint64_t seed);
NoisyCube add_blind_gaussian(const Cube& x, double sigma_min, double sigma_max, std::uint64_t seed);
NoisyCube add_stripe(const Cube& x, std::uint64_t seed, const NoiseParams& params = {});
NoisyCube add_deadline(const Cube& x, std::uint64_t seed, const NoiseParams& params = {});
NoisyCube add_impulse(const Cube& x, std::uint64_t seed, const NoiseParams& params = {});

/// Throws ConfigError for an id outside 1..5.
NoisyCube compose_case(const Cube& x, int case_id, std::uint64_t seed, const NoiseParams& params = {});

/// Dispatches on spec.kind.
NoisyCube apply_noise(const Cube& x, const NoiseSpec& spec);

/// FNV-1a 64 over the extents and payload bytes, as 16 hex digits.
std::string cube_hash(const Cube& c);

}  // namespace hcanet
