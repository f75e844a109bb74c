#include "hcanet/network.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "binary_io.hpp"

namespace hcanet {

using nlohmann::json;

void NetworkConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("network config: " + m); };
    if (bands == 0) fail("bands must be positive");
    if (base_width == 0) fail("base_width must be positive");
    if (levels == 0 || levels > 8) fail("levels must be in [1, 8]");
    if (blocks_per_level.size() != levels) {
        fail("blocks_per_level has " + std::to_string(blocks_per_level.size()) + " entries for " +
             std::to_string(levels) + " levels");
    }
    if (shuffle_groups == 0 || base_width % shuffle_groups != 0) {
        fail("base_width " + std::to_string(base_width) + " is not divisible by shuffle_groups " +
             std::to_string(shuffle_groups));
    }
    if (gamma == 0) fail("gamma must be positive");
}

NetworkConfig NetworkConfig::paper_preset() {
    NetworkConfig c;
    c.bands = 31;
    c.base_width = 32;
    c.levels = 4;
    c.blocks_per_level = {2, 2, 2, 4};
    c.refinement_blocks = 2;
    return c;
}

NetworkConfig NetworkConfig::desk_preset(std::size_t bands) {
    NetworkConfig c;
    c.bands = bands;
    c.base_width = 16;
    c.levels = 3;
    c.blocks_per_level = {1, 1, 1};
    c.refinement_blocks = 1;
    return c;
}

void to_json(json& j, const NetworkConfig& c) {
    j = json{{"bands", c.bands},
             {"base_width", c.base_width},
             {"levels", c.levels},
             {"blocks_per_level", c.blocks_per_level},
             {"refinement_blocks", c.refinement_blocks},
             {"shuffle_groups", c.shuffle_groups},
             {"gamma", c.gamma},
             {"norm_enabled", c.norm_enabled},
             {"bias", c.bias},
             {"msfn_single_expansion", c.msfn_single_expansion},
             {"ablation",
              {{"local_branch", c.ablation.local_branch},
               {"conv3d", c.ablation.conv3d},
               {"msfn", c.ablation.msfn}}},
             {"init_seed", c.init_seed}};
}

void from_json(const json& j, NetworkConfig& c) {
    NetworkConfig d;
    try {
        if (!j.is_object()) throw ConfigError("network config must be a JSON object");
        static const char* known[] = {"bands", "base_width", "levels", "blocks_per_level",
                                      "refinement_blocks", "shuffle_groups", "gamma", "norm_enabled",
                                      "bias", "msfn_single_expansion", "ablation", "init_seed",
                                      "preset"};
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (std::find(std::begin(known), std::end(known), it.key()) == std::end(known)) {
                throw ConfigError("network config: unknown field '" + it.key() + "'");
            }
        }
        if (j.contains("preset")) {
            const auto p = j.at("preset").get<std::string>();
            if (p == "paper") {
                d = NetworkConfig::paper_preset();
            } else if (p == "desk") {
                d = NetworkConfig::desk_preset(j.value("bands", std::size_t{8}));
            } else {
                throw ConfigError("network config: unknown preset '" + p + "'");
            }
        }
        c.bands = j.value("bands", d.bands);
        c.base_width = j.value("base_width", d.base_width);
        c.levels = j.value("levels", d.levels);
        c.blocks_per_level = j.value("blocks_per_level", d.blocks_per_level);
        c.refinement_blocks = j.value("refinement_blocks", d.refinement_blocks);
        c.shuffle_groups = j.value("shuffle_groups", d.shuffle_groups);
        c.gamma = j.value("gamma", d.gamma);
        c.norm_enabled = j.value("norm_enabled", d.norm_enabled);
        c.bias = j.value("bias", d.bias);
        c.msfn_single_expansion = j.value("msfn_single_expansion", d.msfn_single_expansion);
        c.init_seed = j.value("init_seed", d.init_seed);
        c.ablation = d.ablation;
        if (j.contains("ablation")) {
            const auto& a = j.at("ablation");
            c.ablation.local_branch = a.value("local_branch", d.ablation.local_branch);
            c.ablation.conv3d = a.value("conv3d", d.ablation.conv3d);
            c.ablation.msfn = a.value("msfn", d.ablation.msfn);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("network config: ") + e.what());
    }
    c.validate();
}

template <typename T>
void CaMixingWeights<T>::collect(nn::NamedParams<T>& out, const std::string& prefix) const {
    if (use_norm) nn::collect(out, prefix + ".norm1", norm1);
    cafm.collect(out, prefix + ".cafm");
    if (use_norm) nn::collect(out, prefix + ".norm2", norm2);
    if (use_msfn) {
        msfn.collect(out, prefix + ".msfn");
    } else {
        ffn.collect(out, prefix + ".ffn");
    }
}

template <typename T>
CaMixingWeights<T> make_camixing(std::size_t channels, const NetworkConfig& config, Rng& rng) {
    CaMixingWeights<T> w;
    w.use_norm = config.norm_enabled;
    w.use_msfn = config.ablation.msfn;
    if (w.use_norm) {
        w.norm1 = nn::make_layer_norm<T>(channels);
        w.norm2 = nn::make_layer_norm<T>(channels);
    }
    CafmOptions co;
    co.shuffle_groups = config.shuffle_groups;
    co.local_branch = config.ablation.local_branch;
    co.spectral_conv3d = config.ablation.conv3d;
    co.bias = config.bias;
    w.cafm = make_cafm<T>(channels, co, rng);
    if (w.use_msfn) {
        MsfnOptions mo;
        mo.gamma = config.gamma;
        mo.spectral_conv3d = config.ablation.conv3d;
        mo.single_expansion = config.msfn_single_expansion;
        mo.bias = config.bias;
        w.msfn = make_msfn<T>(channels, mo, rng);
    } else {
        w.ffn = make_plain_ffn<T>(channels, config.gamma, config.bias, rng);
    }
    return w;
}

template <typename T>
Tensor<T> camixing_forward(const Tensor<T>& x, const CaMixingWeights<T>& w) {
    const Tensor<T> y = w.use_norm ? nn::layer_norm_channels(x, w.norm1) : x;
    auto x1 = add(x, attention_output(y, w.cafm));
    if (w.cafm.local_enabled) x1 = add(x1, local_branch(y, w.cafm));
    const Tensor<T> z = w.use_norm ? nn::layer_norm_channels(x1, w.norm2) : x1;
    return add(x1, w.use_msfn ? msfn_forward(z, w.msfn) : plain_ffn_forward(z, w.ffn));
}

template <typename T>
HcaNet<T>::HcaNet(NetworkConfig config) : config_(std::move(config)) {
    config_.validate();
    const NetworkConfig& c = config_;
    Rng rng(derive_seed(c.init_seed, {0x68636e6574ULL}));
    const std::size_t depth = c.ablation.conv3d ? 3 : 1;
    stem_ = nn::make_conv3d<T>(1, c.base_width, {depth, 3, 3}, c.bias, rng);
    stem_fold_ = nn::make_conv2d<T>(c.base_width * c.bands, c.base_width, 1, {}, c.bias, rng);

    auto blocks = [&](std::size_t n, std::size_t width) {
        Blocks b;
        for (std::size_t i = 0; i < n; ++i) b.push_back(make_camixing<T>(width, c, rng));
        return b;
    };
    for (std::size_t l = 0; l + 1 < c.levels; ++l) {
        encoder_.push_back(blocks(c.blocks_per_level[l], c.width_at(l)));
        down_.push_back(nn::make_downsample<T>(c.width_at(l), c.bias, rng));
    }
    bottleneck_ = blocks(c.blocks_per_level[c.levels - 1], c.width_at(c.levels - 1));
    up_.resize(c.levels - 1);
    fuse_.resize(c.levels - 1);
    decoder_.resize(c.levels - 1);
    for (std::size_t l = c.levels - 1; l-- > 0;) {
        up_[l] = nn::make_upsample<T>(c.width_at(l + 1), c.bias, rng);
        fuse_[l] = nn::make_conv2d<T>(2 * c.width_at(l), c.width_at(l), 1, {}, c.bias, rng);
        decoder_[l] = blocks(c.blocks_per_level[l], c.width_at(l));
    }
    refinement_ = blocks(c.refinement_blocks, c.base_width);
    tail_ = nn::make_conv2d<T>(c.base_width, c.bands, 3, {1, 1, 1, 1}, c.bias, rng);
}

template <typename T>
void HcaNet<T>::check_input(const Tensor<T>& x) const {
    if (x.dim() != 4) throw ShapeError("network input must be N x B x H x W, got " + shape_str(x.shape()));
    if (x.size(1) != config_.bands) {
        throw ShapeError("network expects " + std::to_string(config_.bands) + " bands, input has " +
                         std::to_string(x.size(1)));
    }
    const std::size_t m = config_.spatial_multiple();
    if (x.size(2) == 0 || x.size(3) == 0 || x.size(2) % m != 0 || x.size(3) % m != 0) {
        throw ShapeError("spatial extent " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) +
                         " is not a multiple of " + std::to_string(m));
    }
}

template <typename T>
Tensor<T> HcaNet<T>::run(const Blocks& blocks, Tensor<T> x) const {
    for (const auto& b : blocks) x = camixing_forward(x, b);
    return x;
}

template <typename T>
Tensor<T> HcaNet<T>::forward(const Tensor<T>& noisy) const {
    check_input(noisy);
    const std::size_t n = noisy.size(0), b = noisy.size(1), h = noisy.size(2), w = noisy.size(3);
    auto feat = nn::conv3d(reshape(noisy, Shape{n, 1, b, h, w}), stem_);
    auto x = nn::conv2d(reshape(feat, Shape{n, config_.base_width * b, h, w}), stem_fold_);

    std::vector<Tensor<T>> skips;
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
        x = run(encoder_[l], x);
        skips.push_back(x);
        x = nn::downsample(x, down_[l]);
    }
    x = run(bottleneck_, x);
    for (std::size_t l = decoder_.size(); l-- > 0;) {
        x = nn::upsample(x, up_[l]);
        x = nn::conv2d(concat<T>({x, skips[l]}, 1), fuse_[l]);
        x = run(decoder_[l], x);
    }
    x = run(refinement_, x);
    return nn::conv2d(x, tail_);
}

template <typename T>
Tensor<T> HcaNet<T>::denoise(const Tensor<T>& noisy) const {
    return add(noisy, forward(noisy));
}

template <typename T>
nn::NamedParams<T> HcaNet<T>::parameters() const {
    nn::NamedParams<T> p;
    nn::collect(p, "stem.conv3d", stem_);
    nn::collect(p, "stem.fold", stem_fold_);
    auto blocks = [&](const Blocks& bs, const std::string& prefix) {
        for (std::size_t i = 0; i < bs.size(); ++i) bs[i].collect(p, prefix + ".block" + std::to_string(i));
    };
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
        blocks(encoder_[l], "encoder" + std::to_string(l));
        nn::collect(p, "encoder" + std::to_string(l) + ".down", down_[l]);
    }
    blocks(bottleneck_, "bottleneck");
    for (std::size_t l = decoder_.size(); l-- > 0;) {
        const std::string pre = "decoder" + std::to_string(l);
        nn::collect(p, pre + ".up", up_[l]);
        nn::collect(p, pre + ".fuse", fuse_[l]);
        blocks(decoder_[l], pre);
    }
    blocks(refinement_, "refinement");
    nn::collect(p, "tail", tail_);
    return p;
}

template <typename T>
std::size_t HcaNet<T>::param_count() const {
    std::size_t total = 0;
    for (const auto& [name, t] : parameters()) total += t.numel();
    return total;
}

template <typename T>
HcaNet<T> apply_ablation(NetworkConfig config, const AblationSwitches& switches) {
    config.ablation = switches;
    return HcaNet<T>(std::move(config));
}

Cube forward(const HcaNet<float>& net, const Cube& noisy) {
    NoGradGuard guard;
    return tensor_to_cube(net.forward(cube_to_tensor(noisy)));
}

Cube denoise(const HcaNet<float>& net, const Cube& noisy) {
    NoGradGuard guard;
    return tensor_to_cube(net.denoise(cube_to_tensor(noisy)));
}

namespace {

constexpr char kMagic[4] = {'H', 'C', 'A', 'W'};

}  // namespace

void save_checkpoint(const HcaNet<float>& net, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
    const std::string cfg = json(net.config()).dump();
    const auto params = net.parameters();
    os.write(kMagic, 4);
    detail::write_le<std::uint32_t>(os, kCheckpointVersion);
    detail::write_le<std::uint64_t>(os, cfg.size());
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.dim()));
        for (std::size_t d : t.shape()) detail::write_le<std::uint64_t>(os, d);
        detail::write_f32(os, t.data().data(), t.numel());
    }
    if (!os) throw IoError("failed writing checkpoint: " + path.string());
}

HcaNet<float> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path.string());
    detail::Reader r(is, "checkpoint " + path.string());
    char magic[4];
    r.bytes(magic, 4, "magic");
    if (!std::equal(magic, magic + 4, kMagic)) throw FormatError("checkpoint magic is not \"HCAW\"", 0);
    const auto version = r.le<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
    }
    const auto cfg_len = r.le<std::uint64_t>("config length");
    if (cfg_len > (1u << 24)) throw FormatError("implausible config length", r.offset() - 8);
    std::string cfg(cfg_len, '\0');
    const auto cfg_at = r.offset();
    r.bytes(cfg.data(), cfg_len, "config");
    NetworkConfig config;
    try {
        config = json::parse(cfg).get<NetworkConfig>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what(), cfg_at);
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint config rejected: ") + e.what(), cfg_at);
    }
    HcaNet<float> net(config);
    auto params = net.parameters();
    std::map<std::string, Tensor<float>> by_name(params.begin(), params.end());

    const auto count_at = r.offset();
    const auto count = r.le<std::uint32_t>("tensor count");
    if (count != params.size()) {
        throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                              std::to_string(params.size()),
                          count_at);
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto rec_at = r.offset();
        const auto name_len = r.le<std::uint32_t>("tensor name length");
        if (name_len > 4096) throw FormatError("implausible tensor name length", rec_at);
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len, "tensor name");
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("unexpected tensor '" + name + "'", rec_at);
        const auto ndim = r.le<std::uint32_t>("tensor rank");
        Shape shape;
        for (std::uint32_t d = 0; d < ndim && d < 8; ++d) shape.push_back(r.le<std::uint64_t>("tensor dim"));
        if (shape != it->second.shape()) {
            throw FormatError("tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                                  shape_str(it->second.shape()),
                              rec_at);
        }
        r.f32(it->second.mutable_data().data(), it->second.numel(), "tensor payload");
        by_name.erase(it);
    }
    if (!r.at_end()) throw FormatError("trailing bytes after last tensor", r.offset());
    return net;
}

#define HCANET_INSTANTIATE_NETWORK(T)                                                              \
    template struct CaMixingWeights<T>;                                                            \
    template CaMixingWeights<T> make_camixing<T>(std::size_t, const NetworkConfig&, Rng&);         \
    template Tensor<T> camixing_forward<T>(const Tensor<T>&, const CaMixingWeights<T>&);           \
    template class HcaNet<T>;                                                                      \
    template HcaNet<T> apply_ablation<T>(NetworkConfig, const AblationSwitches&);

HCANET_INSTANTIATE_NETWORK(float)
HCANET_INSTANTIATE_NETWORK(double)

}  // namespace hcanet
