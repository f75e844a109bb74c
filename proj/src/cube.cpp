#include "hcanet/cube.hpp"

#include <algorithm>

#include "hcanet/errors.hpp"

namespace hcanet {

Tensor<float> cube_to_tensor(const Cube& cube) {
    return Tensor<float>(Shape{1, cube.bands, cube.height, cube.width}, cube.data);
}

Tensor<float> cubes_to_batch(const std::vector<Cube>& cubes) {
    if (cubes.empty()) throw ShapeError("cannot batch an empty cube list");
    const Cube& first = cubes.front();
    std::vector<float> data;
    data.reserve(cubes.size() * first.voxels());
    for (const Cube& c : cubes) {
        if (!c.same_shape(first)) throw ShapeError("cubes in a batch must share their shape");
        data.insert(data.end(), c.data.begin(), c.data.end());
    }
    return Tensor<float>(Shape{cubes.size(), first.bands, first.height, first.width}, std::move(data));
}

Cube tensor_to_cube(const Tensor<float>& t) {
    Shape s = t.shape();
    if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
    if (s.size() != 3) throw ShapeError("expected B x H x W or 1 x B x H x W, got " + shape_str(t.shape()));
    Cube c(s[1], s[2], s[0]);
    std::copy(t.data().begin(), t.data().end(), c.data.begin());
    return c;
}

std::vector<Cube> batch_to_cubes(const Tensor<float>& t) {
    if (t.dim() != 4) throw ShapeError("expected N x B x H x W, got " + shape_str(t.shape()));
    std::vector<Cube> out;
    const std::size_t per = t.numel() / std::max<std::size_t>(t.size(0), 1);
    for (std::size_t i = 0; i < t.size(0); ++i) {
        Cube c(t.size(2), t.size(3), t.size(1));
        std::copy_n(t.data().begin() + i * per, per, c.data.begin());
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace hcanet
