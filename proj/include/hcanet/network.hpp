#pragma once

// U-shaped HCANet. A cube batch N x B x H x W enters a 3x3x3 stem (bands as
// depth, one input feature, C0 output features) whose feature and band axes
// are folded by a 1x1 conv into C0 channels. Encoder levels run CAMixing
// blocks, keep a skip, and downsample; the bottleneck is the last level; the
// decoder upsamples, concatenates the skip, fuses with a 1x1 conv and runs its
// blocks. Refinement blocks and a 3x3 tail conv produce the residual map.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hcanet/cafm.hpp"
#include "hcanet/cube.hpp"
#include "hcanet/msfn.hpp"
#include "hcanet/nn_ops.hpp"

#include "json.hpp"

namespace hcanet {

struct AblationSwitches {
    bool local_branch = true;
    bool conv3d = true;
    bool msfn = true;

    bool operator==(const AblationSwitches&) const = default;
};

struct NetworkConfig {
    std::size_t bands = 31;
    std::size_t base_width = 32;
    std::size_t levels = 4;
    std::vector<std::size_t> blocks_per_level{2, 2, 2, 2};
    std::size_t refinement_blocks = 2;
    std::size_t shuffle_groups = 4;
    std::size_t gamma = 2;
    bool norm_enabled = true;
    bool bias = true;
    bool msfn_single_expansion = false;
    AblationSwitches ablation;
    std::uint64_t init_seed = 0;

    /// Throws ConfigError on inconsistent values.
    void validate() const;
    std::size_t width_at(std::size_t level) const { return base_width << level; }
    /// H and W must be multiples of this.
    std::size_t spatial_multiple() const { return std::size_t{1} << (levels - 1); }

    static NetworkConfig paper_preset();
    /// L=3, width 16; small enough for single-core training.
    static NetworkConfig desk_preset(std::size_t bands = 8);

    bool operator==(const NetworkConfig&) const = default;
};

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

template <typename T>
struct CaMixingWeights {
    nn::LayerNormWeights<T> norm1;  // undefined when normalisation is off
    nn::LayerNormWeights<T> norm2;
    CafmWeights<T> cafm;
    MsfnWeights<T> msfn;
    PlainFfnWeights<T> ffn;
    bool use_msfn = true;
    bool use_norm = true;

    void collect(nn::NamedParams<T>& out, const std::string& prefix) const;
};

template <typename T>
CaMixingWeights<T> make_camixing(std::size_t channels, const NetworkConfig& config, Rng& rng);

/// x1 = x + attention_output(y) + local_branch(y), y = LN(x)
/// x2 = x1 + FFN(LN(x1))
/// Without normalisation x1 is exactly cafm_forward(x).
template <typename T>
Tensor<T> camixing_forward(const Tensor<T>& x, const CaMixingWeights<T>& w);

template <typename T>
class HcaNet {
public:
    explicit HcaNet(NetworkConfig config);

    const NetworkConfig& config() const { return config_; }

    /// Residual map I_N for an N x B x H x W batch.
    Tensor<T> forward(const Tensor<T>& noisy) const;
    /// noisy + forward(noisy), unclipped.
    Tensor<T> denoise(const Tensor<T>& noisy) const;

    /// Every learnable tensor, in a stable order with stable names.
    nn::NamedParams<T> parameters() const;
    std::size_t param_count() const;

    nn::Conv2dWeights<T>& tail() { return tail_; }

private:
    using Blocks = std::vector<CaMixingWeights<T>>;

    void check_input(const Tensor<T>& x) const;
    Tensor<T> run(const Blocks& blocks, Tensor<T> x) const;

    NetworkConfig config_;
    nn::Conv3dWeights<T> stem_;
    nn::Conv2dWeights<T> stem_fold_;
    std::vector<Blocks> encoder_;
    std::vector<nn::Conv2dWeights<T>> down_;
    Blocks bottleneck_;
    std::vector<nn::UpsampleWeights<T>> up_;
    std::vector<nn::Conv2dWeights<T>> fuse_;
    std::vector<Blocks> decoder_;
    Blocks refinement_;
    nn::Conv2dWeights<T> tail_;
};

/// Base config with the given switches applied.
template <typename T>
HcaNet<T> apply_ablation(NetworkConfig config, const AblationSwitches& switches);

/// Cube-level helpers in float, gradient-free.
Cube forward(const HcaNet<float>& net, const Cube& noisy);
Cube denoise(const HcaNet<float>& net, const Cube& noisy);

/// "HCAW" checkpoint: magic, u32 version, u64 length + canonical JSON config,
/// u32 tensor count, then per tensor u32 name length + name, u32 ndim,
/// u64 dims, raw little-endian f32.
void save_checkpoint(const HcaNet<float>& net, const std::filesystem::path& path);
HcaNet<float> load_checkpoint(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace hcanet
