#pragma once

// Adam with bias correction, cosine learning-rate decay from lr0 to lr_final,
// global-norm gradient clipping, per-epoch validation and best-checkpoint
// retention. The NoiseSpec supplies kind and parameters; its seed is not
// used. Training noise for sample i in epoch e is drawn with seed
// derive_seed(seed, {e, i}); validation noise uses
// derive_seed(val_noise_seed, {i}) and is the same every epoch.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "hcanet/data_io.hpp"
#include "hcanet/loss.hpp"
#include "hcanet/network.hpp"
#include "hcanet/noise.hpp"

#include "json.hpp"

namespace hcanet {

struct TrainConfig {
    double lr0 = 1e-4;
    double lr_final = 1e-6;
    std::size_t epochs = 100;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;  // training noise streams
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // 0 disables clipping
    std::size_t checkpoint_every = 0;  // 0: only best.hcaw and last.hcaw
    std::uint64_t val_noise_seed = 0x76616c;
    LossConfig loss;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Cosine interpolation lr0 -> lr_final over epochs 0 .. epochs-1.
double lr_at(std::size_t epoch, const TrainConfig& cfg);

struct OptimizerState {
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
    std::uint64_t step = 0;
};

/// One bias-corrected Adam update over params, reading their .grad().
/// Throws NumericalError naming the first parameter with a non-finite gradient.
void adam_step(const nn::NamedParams<float>& params, OptimizerState& state, double lr,
               const TrainConfig& cfg);

/// Scales every gradient so the global L2 norm is at most max_norm; returns the pre-clip norm.
double clip_grad_norm(const nn::NamedParams<float>& params, double max_norm);

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double val_psnr_db = 0;
    double val_ssim = 0;
    double val_sam_rad = 0;
    double noisy_psnr_db = 0;
};

void to_json(nlohmann::json& j, const EpochRecord& r);

struct ValidationResult {
    double psnr_db = 0;
    double ssim = 0;
    double sam_rad = 0;
    double noisy_psnr_db = 0;
};

/// Mean metrics over the validation split with the fixed validation noise.
ValidationResult validate(const HcaNet<float>& net, const Dataset& data, const NoiseSpec& noise,
                          const TrainConfig& cfg);

struct TrainResult {
    std::vector<EpochRecord> log;
    std::size_t best_epoch = 0;
    double best_psnr_db = 0;
};

/// Writes log.jsonl, last.hcaw, best.hcaw (and periodic epoch_N.hcaw) to
/// out_dir when given. Throws NumericalError on a non-finite loss or
/// gradient; checkpoints already on disk are left untouched.
TrainResult train(HcaNet<float>& net, const Dataset& data, const NoiseSpec& noise, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace hcanet
