#pragma once

// Cube files, patch extraction, augmentation and deterministic datasets.
//
// Cube file ("HSIC"), all integers little-endian:
//   offset 0   magic "HSIC"
//          4   u32 version (1)
//          8   u32 height, u32 width, u32 bands
//         20   u32 dtype (1 = f32le)
//         24   payload, height*width*bands f32, band-major then row-major

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "hcanet/cube.hpp"
#include "hcanet/rng.hpp"

#include "json.hpp"

namespace hcanet {

inline constexpr std::uint32_t kCubeVersion = 1;
inline constexpr std::uint32_t kCubeDtypeF32 = 1;

void write_cube(std::ostream& os, const Cube& cube);
/// `label` names the source in error messages.
Cube read_cube(std::istream& is, const std::string& label = "cube");
void save_cube(const Cube& cube, const std::filesystem::path& path);
Cube load_cube(const std::filesystem::path& path);

struct PatchSize {
    std::size_t height = 128;
    std::size_t width = 128;
    std::size_t bands = 31;

    bool operator==(const PatchSize&) const = default;
};

/// Sub-block starting at (y, x, band0).
Cube extract(const Cube& cube, std::size_t y, std::size_t x, std::size_t band0, const PatchSize& size);

/// stride > 0: grid of spatial origins stepping by stride, band windows
/// stepping by size.bands. stride == 0: `count` uniformly drawn origins.
std::vector<Cube> crop_patches(const Cube& cube, const PatchSize& size, std::size_t stride,
                               Rng& rng, std::size_t count = 0);

struct AugmentOp {
    enum Kind { identity, rot90, rot180, rot270, scale };
    Kind kind = identity;
    double factor = 1.0;  // scale only

    std::string name() const;
    bool operator==(const AugmentOp&) const = default;
};

/// Counter-clockwise quarter turns per band.
Cube rotate90(const Cube& c, int quarter_turns);

/// Bilinear resize of every band to round(f*H) x round(f*W), half-pixel centres.
Cube resize_bilinear(const Cube& c, double factor);

/// Rotations are exact permutations. Scaling resizes bilinearly then takes a
/// random crop_h x crop_w window (0 keeps the resized extent).
Cube augment(const Cube& patch, const AugmentOp& op, Rng& rng, std::size_t crop_h = 0,
             std::size_t crop_w = 0);

/// Smooth synthetic scene: `materials` spectra built from low-order Fourier
/// series over the band axis, mixed by softmax abundance maps built from
/// low-order 2-D Fourier series. Values lie in [0.05, 0.95].
struct SyntheticSpec {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t bands = 8;
    std::size_t materials = 4;
    std::size_t spectral_order = 3;
    std::size_t spatial_order = 3;
    std::uint64_t seed = 0;
};

Cube synthetic_cube(const SyntheticSpec& spec);

struct DatasetManifest {
    std::vector<std::string> cubes;  // relative paths resolve against the manifest directory
    PatchSize patch;
    std::size_t stride = 0;          // 0: random crops
    std::size_t crops_per_cube = 16; // random mode
    bool rotations = true;
    std::vector<double> scales{0.5, 0.75, 1.0};
    std::size_t samples = 20000;     // 0: every (crop, augment) pair
    double val_fraction = 0.05;
    std::uint64_t split_seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Canonical JSON (sorted keys, no whitespace) for manifests and hashes.
std::string canonical_json(const nlohmann::json& j);
/// FNV-1a 64 of a string as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

class Dataset {
public:
    struct Sample {
        std::size_t cube = 0;
        std::size_t y = 0, x = 0, band0 = 0;
        AugmentOp op;
        std::uint64_t seed = 0;
    };

    Dataset(std::vector<Cube> cubes, DatasetManifest manifest);
    /// Loads every listed cube relative to the manifest's directory.
    static Dataset from_manifest_file(const std::filesystem::path& path);

    const DatasetManifest& manifest() const { return manifest_; }
    std::size_t size() const { return samples_.size(); }
    const std::vector<std::size_t>& train_indices() const { return train_; }
    const std::vector<std::size_t>& val_indices() const { return val_; }
    const Sample& sample_ref(std::size_t i) const { return samples_.at(i); }

    /// Clean patch for sample i; a pure function of (manifest, cubes, i).
    Cube sample(std::size_t i) const;

    /// Permutation of train_indices(); a pure function of (manifest, epoch).
    std::vector<std::size_t> epoch_order(std::size_t epoch) const;

private:
    std::vector<Cube> cubes_;
    DatasetManifest manifest_;
    std::vector<Sample> samples_;
    std::vector<std::size_t> train_;
    std::vector<std::size_t> val_;
};

}  // namespace hcanet
