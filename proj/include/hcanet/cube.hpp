#pragma once

// Hyperspectral cube held in memory as float32, band-major then row-major:
// voxel (y, x, b) lives at data[(b * height + y) * width + x].

#include <cstddef>
#include <vector>

#include "hcanet/tensor.hpp"

namespace hcanet {

struct Cube {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t bands = 0;
    std::vector<float> data;

    Cube() = default;
    Cube(std::size_t h, std::size_t w, std::size_t b, float fill = 0.0f)
        : height(h), width(w), bands(b), data(h * w * b, fill) {}

    std::size_t voxels() const { return data.size(); }
    std::size_t plane() const { return height * width; }

    float& at(std::size_t y, std::size_t x, std::size_t b) { return data[(b * height + y) * width + x]; }
    float at(std::size_t y, std::size_t x, std::size_t b) const {
        return data[(b * height + y) * width + x];
    }

    float* band(std::size_t b) { return data.data() + b * plane(); }
    const float* band(std::size_t b) const { return data.data() + b * plane(); }

    bool same_shape(const Cube& o) const {
        return height == o.height && width == o.width && bands == o.bands;
    }
};

/// 1 x B x H x W view of a cube (copies).
Tensor<float> cube_to_tensor(const Cube& cube);

/// Stacks equally shaped cubes into N x B x H x W.
Tensor<float> cubes_to_batch(const std::vector<Cube>& cubes);

/// Accepts B x H x W or 1 x B x H x W.
Cube tensor_to_cube(const Tensor<float>& t);

/// Splits N x B x H x W into N cubes.
std::vector<Cube> batch_to_cubes(const Tensor<float>& t);

}  // namespace hcanet
