#include "hcanet/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "binary_io.hpp"
#include "hcanet/errors.hpp"
#include "hcanet/log.hpp"

namespace hcanet {

using nlohmann::json;

namespace {

constexpr char kCubeMagic[4] = {'H', 'S', 'I', 'C'};

enum Stream : std::uint64_t { kCrop = 11, kPool = 12, kSample = 13, kEpoch = 14 };

std::size_t ceil_div_scale(std::size_t extent, double factor) {
    return static_cast<std::size_t>(std::ceil(extent / factor - 1e-9));
}

}  // namespace

void write_cube(std::ostream& os, const Cube& cube) {
    if (cube.voxels() != cube.height * cube.width * cube.bands) {
        throw ShapeError("cube payload does not match its extents");
    }
    os.write(kCubeMagic, 4);
    detail::write_le<std::uint32_t>(os, kCubeVersion);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cube.height));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cube.width));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cube.bands));
    detail::write_le<std::uint32_t>(os, kCubeDtypeF32);
    detail::write_f32(os, cube.data.data(), cube.voxels());
}

Cube read_cube(std::istream& is, const std::string& label) {
    detail::Reader r(is, label);
    char magic[4];
    r.bytes(magic, 4, "magic");
    if (!std::equal(magic, magic + 4, kCubeMagic)) {
        throw FormatError(label + ": magic is not \"HSIC\"", 0);
    }
    const auto version = r.le<std::uint32_t>("version");
    if (version != kCubeVersion) {
        throw FormatError(label + ": unsupported version " + std::to_string(version), 4);
    }
    const auto h = r.le<std::uint32_t>("height");
    const auto w = r.le<std::uint32_t>("width");
    const auto b = r.le<std::uint32_t>("bands");
    const auto dtype = r.le<std::uint32_t>("dtype");
    if (dtype != kCubeDtypeF32) {
        throw FormatError(label + ": unsupported dtype code " + std::to_string(dtype), 20);
    }
    const std::uint64_t voxels = std::uint64_t(h) * w * b;
    if (voxels == 0) throw FormatError(label + ": empty cube extents", 8);
    if (voxels > (std::uint64_t{1} << 32)) throw FormatError(label + ": implausible cube extents", 8);
    Cube c(h, w, b);
    r.f32(c.data.data(), c.voxels(), "payload");
    if (!r.at_end()) throw FormatError(label + ": trailing bytes after payload", r.offset());
    for (std::size_t i = 0; i < c.voxels(); ++i) {
        if (!std::isfinite(c.data[i])) {
            throw FormatError(label + ": non-finite value in payload", 24 + 4 * std::uint64_t(i));
        }
    }
    return c;
}

void save_cube(const Cube& cube, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open cube for writing: " + path.string());
    write_cube(os, cube);
    if (!os) throw IoError("failed writing cube: " + path.string());
}

Cube load_cube(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open cube: " + path.string());
    return read_cube(is, path.string());
}

Cube extract(const Cube& cube, std::size_t y, std::size_t x, std::size_t band0, const PatchSize& size) {
    if (y + size.height > cube.height || x + size.width > cube.width || band0 + size.bands > cube.bands) {
        throw ConfigError("patch " + std::to_string(size.height) + "x" + std::to_string(size.width) + "x" +
                          std::to_string(size.bands) + " at (" + std::to_string(y) + "," +
                          std::to_string(x) + "," + std::to_string(band0) + ") exceeds cube " +
                          std::to_string(cube.height) + "x" + std::to_string(cube.width) + "x" +
                          std::to_string(cube.bands));
    }
    Cube p(size.height, size.width, size.bands);
    for (std::size_t b = 0; b < size.bands; ++b) {
        for (std::size_t r = 0; r < size.height; ++r) {
            const float* src = cube.band(band0 + b) + (y + r) * cube.width + x;
            std::copy_n(src, size.width, p.band(b) + r * size.width);
        }
    }
    return p;
}

std::vector<Cube> crop_patches(const Cube& cube, const PatchSize& size, std::size_t stride, Rng& rng,
                               std::size_t count) {
    if (size.height == 0 || size.width == 0 || size.bands == 0) throw ConfigError("patch size must be positive");
    if (size.height > cube.height || size.width > cube.width || size.bands > cube.bands) {
        throw ConfigError("patch larger than cube");
    }
    std::vector<Cube> out;
    if (stride > 0) {
        for (std::size_t b = 0; b + size.bands <= cube.bands; b += size.bands) {
            for (std::size_t y = 0; y + size.height <= cube.height; y += stride) {
                for (std::size_t x = 0; x + size.width <= cube.width; x += stride) {
                    out.push_back(extract(cube, y, x, b, size));
                }
            }
        }
        return out;
    }
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t y = rng.below(cube.height - size.height + 1);
        const std::size_t x = rng.below(cube.width - size.width + 1);
        const std::size_t b = rng.below(cube.bands - size.bands + 1);
        out.push_back(extract(cube, y, x, b, size));
    }
    return out;
}

std::string AugmentOp::name() const {
    switch (kind) {
        case identity: return "identity";
        case rot90: return "rot90";
        case rot180: return "rot180";
        case rot270: return "rot270";
        case scale: {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "scale%.4g", factor);
            return buf;
        }
    }
    return "?";
}

Cube rotate90(const Cube& c, int quarter_turns) {
    const int q = ((quarter_turns % 4) + 4) % 4;
    if (q == 0) return c;
    const bool swap = q % 2 == 1;
    Cube out(swap ? c.width : c.height, swap ? c.height : c.width, c.bands);
    const std::size_t H = c.height, W = c.width;
    for (std::size_t b = 0; b < c.bands; ++b) {
        for (std::size_t y = 0; y < out.height; ++y) {
            for (std::size_t x = 0; x < out.width; ++x) {
                std::size_t sy = 0, sx = 0;
                switch (q) {
                    case 1: sy = x; sx = W - 1 - y; break;
                    case 2: sy = H - 1 - y; sx = W - 1 - x; break;
                    case 3: sy = H - 1 - x; sx = y; break;
                }
                out.at(y, x, b) = c.at(sy, sx, b);
            }
        }
    }
    return out;
}

Cube resize_bilinear(const Cube& c, double factor) {
    if (!(factor > 0)) throw ConfigError("scale factor must be positive");
    if (factor == 1.0) return c;
    const auto oh = static_cast<std::size_t>(std::llround(factor * c.height));
    const auto ow = static_cast<std::size_t>(std::llround(factor * c.width));
    if (oh == 0 || ow == 0) throw ConfigError("scale factor collapses the patch");
    Cube out(oh, ow, c.bands);
    auto axis = [](std::size_t i, std::size_t in, std::size_t outn) {
        double s = (i + 0.5) * double(in) / double(outn) - 0.5;
        s = std::clamp(s, 0.0, double(in - 1));
        const auto i0 = static_cast<std::size_t>(std::floor(s));
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        return std::tuple{i0, i1, s - double(i0)};
    };
    for (std::size_t y = 0; y < oh; ++y) {
        const auto [y0, y1, fy] = axis(y, c.height, oh);
        for (std::size_t x = 0; x < ow; ++x) {
            const auto [x0, x1, fx] = axis(x, c.width, ow);
            for (std::size_t b = 0; b < c.bands; ++b) {
                const double top = (1 - fx) * c.at(y0, x0, b) + fx * c.at(y0, x1, b);
                const double bot = (1 - fx) * c.at(y1, x0, b) + fx * c.at(y1, x1, b);
                out.at(y, x, b) = static_cast<float>((1 - fy) * top + fy * bot);
            }
        }
    }
    return out;
}

Cube augment(const Cube& patch, const AugmentOp& op, Rng& rng, std::size_t crop_h, std::size_t crop_w) {
    switch (op.kind) {
        case AugmentOp::identity: return patch;
        case AugmentOp::rot90: return rotate90(patch, 1);
        case AugmentOp::rot180: return rotate90(patch, 2);
        case AugmentOp::rot270: return rotate90(patch, 3);
        case AugmentOp::scale: break;
    }
    Cube scaled = resize_bilinear(patch, op.factor);
    const std::size_t ch = crop_h ? crop_h : scaled.height;
    const std::size_t cw = crop_w ? crop_w : scaled.width;
    if (ch > scaled.height || cw > scaled.width) {
        throw ConfigError("scaled patch " + std::to_string(scaled.height) + "x" + std::to_string(scaled.width) +
                          " is smaller than the crop " + std::to_string(ch) + "x" + std::to_string(cw));
    }
    if (ch == scaled.height && cw == scaled.width) return scaled;
    const std::size_t y = rng.below(scaled.height - ch + 1);
    const std::size_t x = rng.below(scaled.width - cw + 1);
    return extract(scaled, y, x, 0, {ch, cw, scaled.bands});
}

Cube synthetic_cube(const SyntheticSpec& spec) {
    if (spec.height == 0 || spec.width == 0 || spec.bands == 0 || spec.materials == 0) {
        throw ConfigError("synthetic cube extents must be positive");
    }
    Rng rng(derive_seed(spec.seed, {0x5e7}));
    const double two_pi = 2 * std::numbers::pi;
    const std::size_t M = spec.materials, B = spec.bands;

    std::vector<double> spectra(M * B);
    for (std::size_t m = 0; m < M; ++m) {
        const double base = rng.uniform(0.3, 0.7);
        std::vector<double> a(spec.spectral_order), c(spec.spectral_order);
        for (std::size_t k = 0; k < spec.spectral_order; ++k) {
            a[k] = rng.uniform(-0.3, 0.3) / (k + 1);
            c[k] = rng.uniform(-0.3, 0.3) / (k + 1);
        }
        for (std::size_t b = 0; b < B; ++b) {
            const double t = double(b) / B;
            double v = base;
            for (std::size_t k = 0; k < spec.spectral_order; ++k) {
                v += a[k] * std::cos(two_pi * (k + 1) * t) + c[k] * std::sin(two_pi * (k + 1) * t);
            }
            spectra[m * B + b] = v;
        }
    }

    struct Wave {
        double fy, fx, phase, amp;
    };
    std::vector<std::vector<Wave>> maps(M);
    for (auto& waves : maps) {
        for (std::size_t p = 0; p <= spec.spatial_order; ++p) {
            for (std::size_t q = 0; q <= spec.spatial_order; ++q) {
                if (p + q == 0) continue;
                waves.push_back({double(p), double(q), rng.uniform(0, two_pi), rng.uniform(0.5, 2.0) / (p + q)});
            }
        }
    }

    const std::size_t H = spec.height, W = spec.width;
    std::vector<double> vals(H * W * B);
    std::vector<double> logits(M);
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            const double u = double(y) / H, v = double(x) / W;
            double peak = -1e300;
            for (std::size_t m = 0; m < M; ++m) {
                double s = 0;
                for (const auto& wv : maps[m]) s += wv.amp * std::cos(two_pi * (wv.fy * u + wv.fx * v) + wv.phase);
                logits[m] = 3.0 * s;
                peak = std::max(peak, logits[m]);
            }
            double z = 0;
            for (auto& l : logits) z += (l = std::exp(l - peak));
            for (std::size_t b = 0; b < B; ++b) {
                double mix = 0;
                for (std::size_t m = 0; m < M; ++m) mix += logits[m] / z * spectra[m * B + b];
                vals[(b * H + y) * W + x] = mix;
            }
        }
    }
    const auto [lo_it, hi_it] = std::minmax_element(vals.begin(), vals.end());
    const double lo = *lo_it, span = std::max(*hi_it - lo, 1e-12);
    Cube out(H, W, B);
    for (std::size_t i = 0; i < vals.size(); ++i) {
        out.data[i] = static_cast<float>(0.05 + 0.9 * (vals[i] - lo) / span);
    }
    return out;
}

void DatasetManifest::validate() const {
    if (patch.height == 0 || patch.width == 0 || patch.bands == 0) throw ConfigError("patch size must be positive");
    for (double s : scales) {
        if (!(s > 0 && s <= 1)) throw ConfigError("augmentation scales must lie in (0, 1]");
    }
    if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("val_fraction must lie in [0, 1)");
    if (stride == 0 && crops_per_cube == 0) throw ConfigError("random cropping needs crops_per_cube > 0");
}

void to_json(json& j, const DatasetManifest& m) {
    j = json{{"cubes", m.cubes},
             {"patch", {{"height", m.patch.height}, {"width", m.patch.width}, {"bands", m.patch.bands}}},
             {"stride", m.stride},
             {"crops_per_cube", m.crops_per_cube},
             {"augment", {{"rotations", m.rotations}, {"scales", m.scales}}},
             {"samples", m.samples},
             {"val_fraction", m.val_fraction},
             {"split_seed", m.split_seed}};
}

void from_json(const json& j, DatasetManifest& m) {
    DatasetManifest d;
    try {
        m.cubes = j.at("cubes").get<std::vector<std::string>>();
        if (j.contains("patch")) {
            const auto& p = j.at("patch");
            m.patch.height = p.value("height", d.patch.height);
            m.patch.width = p.value("width", d.patch.width);
            m.patch.bands = p.value("bands", d.patch.bands);
        }
        m.stride = j.value("stride", d.stride);
        m.crops_per_cube = j.value("crops_per_cube", d.crops_per_cube);
        if (j.contains("augment")) {
            m.rotations = j.at("augment").value("rotations", d.rotations);
            m.scales = j.at("augment").value("scales", d.scales);
        }
        m.samples = j.value("samples", d.samples);
        m.val_fraction = j.value("val_fraction", d.val_fraction);
        m.split_seed = j.value("split_seed", d.split_seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("dataset manifest: ") + e.what());
    }
    m.validate();
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open dataset manifest: " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError("dataset manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    return j.get<DatasetManifest>();
}

std::string canonical_json(const json& j) { return j.dump(); }

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Dataset::Dataset(std::vector<Cube> cubes, DatasetManifest manifest)
    : cubes_(std::move(cubes)), manifest_(std::move(manifest)) {
    manifest_.validate();
    if (cubes_.empty()) throw ConfigError("dataset has no cubes");
    const PatchSize& P = manifest_.patch;
    const bool square = P.height == P.width;

    std::vector<AugmentOp> ops{{AugmentOp::identity}};
    if (manifest_.rotations) {
        ops.push_back({AugmentOp::rot180});
        if (square) {
            ops.push_back({AugmentOp::rot90});
            ops.push_back({AugmentOp::rot270});
        }
    }
    for (double s : manifest_.scales) {
        if (s != 1.0) ops.push_back({AugmentOp::scale, s});
    }

    std::vector<Sample> pool;
    for (std::size_t ci = 0; ci < cubes_.size(); ++ci) {
        const Cube& c = cubes_[ci];
        if (P.height > c.height || P.width > c.width || P.bands > c.bands) {
            throw ConfigError("patch does not fit cube " + std::to_string(ci));
        }
        std::vector<std::array<std::size_t, 3>> origins;
        if (manifest_.stride > 0) {
            for (std::size_t b = 0; b + P.bands <= c.bands; b += P.bands) {
                for (std::size_t y = 0; y + P.height <= c.height; y += manifest_.stride) {
                    for (std::size_t x = 0; x + P.width <= c.width; x += manifest_.stride) origins.push_back({y, x, b});
                }
            }
        } else {
            Rng rng(derive_seed(manifest_.split_seed, {kCrop, ci}));
            for (std::size_t i = 0; i < manifest_.crops_per_cube; ++i) {
                const std::size_t y = rng.below(c.height - P.height + 1);
                const std::size_t x = rng.below(c.width - P.width + 1);
                const std::size_t b = rng.below(c.bands - P.bands + 1);
                origins.push_back({y, x, b});
            }
        }
        for (const auto& o : origins) {
            for (const auto& op : ops) {
                Sample s{ci, o[0], o[1], o[2], op, 0};
                if (op.kind == AugmentOp::scale) {
                    // the source window shrinks to at least the patch size
                    const std::size_t rh = ceil_div_scale(P.height, op.factor);
                    const std::size_t rw = ceil_div_scale(P.width, op.factor);
                    if (rh > c.height || rw > c.width) continue;
                    s.y = std::min(s.y, c.height - rh);
                    s.x = std::min(s.x, c.width - rw);
                }
                pool.push_back(s);
            }
        }
    }
    Rng shuffle(derive_seed(manifest_.split_seed, {kPool}));
    shuffle.shuffle(pool);
    if (manifest_.samples > 0) {
        if (manifest_.samples > pool.size()) {
            log_warning("dataset: requested " + std::to_string(manifest_.samples) + " samples, only " +
                        std::to_string(pool.size()) + " (crop, augment) pairs exist");
        } else {
            pool.resize(manifest_.samples);
        }
    }
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i].seed = derive_seed(manifest_.split_seed, {kSample, i});
    samples_ = std::move(pool);

    std::size_t n_val = 0;
    if (manifest_.val_fraction > 0 && samples_.size() >= 2) {
        n_val = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::llround(manifest_.val_fraction * samples_.size())), 1,
            samples_.size() - 1);
    }
    for (std::size_t i = 0; i < samples_.size(); ++i) (i < n_val ? val_ : train_).push_back(i);
}

Dataset Dataset::from_manifest_file(const std::filesystem::path& path) {
    auto manifest = load_manifest(path);
    std::vector<Cube> cubes;
    for (const auto& rel : manifest.cubes) {
        std::filesystem::path p(rel);
        if (p.is_relative()) p = path.parent_path() / p;
        cubes.push_back(load_cube(p));
    }
    return Dataset(std::move(cubes), std::move(manifest));
}

Cube Dataset::sample(std::size_t i) const {
    const Sample& s = samples_.at(i);
    const Cube& c = cubes_[s.cube];
    const PatchSize& P = manifest_.patch;
    Rng rng(s.seed);
    if (s.op.kind == AugmentOp::scale) {
        const PatchSize region{ceil_div_scale(P.height, s.op.factor), ceil_div_scale(P.width, s.op.factor), P.bands};
        return augment(extract(c, s.y, s.x, s.band0, region), s.op, rng, P.height, P.width);
    }
    return augment(extract(c, s.y, s.x, s.band0, P), s.op, rng);
}

std::vector<std::size_t> Dataset::epoch_order(std::size_t epoch) const {
    std::vector<std::size_t> order = train_;
    Rng rng(derive_seed(manifest_.split_seed, {kEpoch, epoch}));
    rng.shuffle(order);
    return order;
}

}  // namespace hcanet
