#include "hcanet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include "hcanet/errors.hpp"
#include "hcanet/log.hpp"
#include "hcanet/metrics.hpp"
#include "hcanet/parallel.hpp"

namespace hcanet {

using nlohmann::json;

void TrainConfig::validate() const {
    if (!(lr_final > 0.0) || !(lr0 > lr_final)) {
        throw ConfigError("train config: need lr0 > lr_final > 0, got lr0=" + std::to_string(lr0) +
                          " lr_final=" + std::to_string(lr_final));
    }
    if (epochs == 0) throw ConfigError("train config: epochs must be positive");
    if (batch_size == 0) throw ConfigError("train config: batch_size must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("train config: betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("train config: eps must be positive");
    if (!(clip_norm >= 0.0)) throw ConfigError("train config: clip_norm must be >= 0");
    if (!(loss.lambda >= 0.0)) throw ConfigError("train config: lambda must be >= 0");
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"lr0", c.lr0},
             {"lr_final", c.lr_final},
             {"schedule", "cosine"},
             {"epochs", c.epochs},
             {"batch_size", c.batch_size},
             {"seed", c.seed},
             {"betas", {c.beta1, c.beta2}},
             {"eps", c.eps},
             {"clip_norm", c.clip_norm},
             {"checkpoint_every", c.checkpoint_every},
             {"val_noise_seed", c.val_noise_seed},
             {"lambda", c.loss.lambda}};
}

void from_json(const json& j, TrainConfig& c) {
    const TrainConfig d;
    try {
        if (!j.is_object()) throw ConfigError("train config must be a JSON object");
        static const char* known[] = {"lr0",       "lr_final",  "schedule",         "epochs",
                                      "batch_size", "seed",     "betas",            "eps",
                                      "clip_norm", "checkpoint_every", "val_noise_seed", "lambda"};
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (std::find(std::begin(known), std::end(known), it.key()) == std::end(known)) {
                throw ConfigError("train config: unknown field '" + it.key() + "'");
            }
        }
        if (j.value("schedule", std::string("cosine")) != "cosine") {
            throw ConfigError("train config: only the 'cosine' schedule is supported");
        }
        c.lr0 = j.value("lr0", d.lr0);
        c.lr_final = j.value("lr_final", d.lr_final);
        c.epochs = j.value("epochs", d.epochs);
        c.batch_size = j.value("batch_size", d.batch_size);
        c.seed = j.value("seed", d.seed);
        c.beta1 = d.beta1;
        c.beta2 = d.beta2;
        if (j.contains("betas")) {
            const auto b = j.at("betas").get<std::vector<double>>();
            if (b.size() != 2) throw ConfigError("train config: betas must have two entries");
            c.beta1 = b[0];
            c.beta2 = b[1];
        }
        c.eps = j.value("eps", d.eps);
        c.clip_norm = j.value("clip_norm", d.clip_norm);
        c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
        c.val_noise_seed = j.value("val_noise_seed", d.val_noise_seed);
        c.loss.lambda = j.value("lambda", d.loss.lambda);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    c.validate();
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
    if (epoch >= cfg.epochs) {
        throw ContractError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(cfg.epochs) + ")");
    }
    if (cfg.epochs == 1) return cfg.lr0;
    const double t = static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
    return cfg.lr_final + 0.5 * (cfg.lr0 - cfg.lr_final) * (1.0 + std::cos(std::numbers::pi * t));
}

void adam_step(const nn::NamedParams<float>& params, OptimizerState& state, double lr,
               const TrainConfig& cfg) {
    if (!(lr > 0.0)) throw ContractError("adam_step: lr must be positive");
    if (state.m.empty()) {
        for (const auto& [name, t] : params) {
            state.m.emplace_back(t.numel(), 0.0f);
            state.v.emplace_back(t.numel(), 0.0f);
        }
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ContractError("adam_step: optimizer state holds " + std::to_string(state.m.size()) +
                            " buffers for " + std::to_string(params.size()) + " parameters");
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
        const auto& [name, t] = params[p];
        if (state.m[p].size() != t.numel() || state.v[p].size() != t.numel()) {
            throw ContractError("adam_step: moment buffer shape mismatch for " + name);
        }
        if (!t.has_grad()) continue;
        for (float g : t.grad()) {
            if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter " + name);
        }
    }

    ++state.step;
    const double step = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, step);
    const double c2 = 1.0 - std::pow(cfg.beta2, step);
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor<float> t = params[p].second;
        auto& m = state.m[p];
        auto& v = state.v[p];
        const bool has = t.has_grad();
        auto g = t.grad();
        auto d = t.mutable_data();
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double gi = has ? static_cast<double>(g[i]) : 0.0;
            const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double mhat = mi / c1;
            const double vhat = vi / c2;
            d[i] = static_cast<float>(d[i] - lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

double clip_grad_norm(const nn::NamedParams<float>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, t] : params) {
        if (!t.has_grad()) continue;
        for (float g : t.grad()) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && std::isfinite(norm) && norm > max_norm) {
        const double f = max_norm / norm;
        for (const auto& [name, t] : params) {
            if (!t.has_grad()) continue;
            Tensor<float> w = t;
            for (float& g : w.mutable_grad()) g = static_cast<float>(g * f);
        }
    }
    return norm;
}

void to_json(json& j, const EpochRecord& r) {
    j = json{{"epoch", r.epoch},
             {"lr", r.lr},
             {"train_loss", r.train_loss},
             {"val_psnr_db", r.val_psnr_db},
             {"val_ssim", r.val_ssim},
             {"val_sam_rad", r.val_sam_rad},
             {"noisy_psnr_db", r.noisy_psnr_db}};
}

namespace {

NoiseSpec reseeded(const NoiseSpec& spec, std::uint64_t seed) {
    NoiseSpec s = spec;
    s.seed = seed;
    return s;
}

double finite_or_nan(double v) { return std::isfinite(v) ? v : std::nan(""); }

void write_atomic(const HcaNet<float>& net, const std::filesystem::path& path) {
    auto tmp = path;
    tmp += ".tmp";
    save_checkpoint(net, tmp);
    std::filesystem::rename(tmp, path);
}

}  // namespace

ValidationResult validate(const HcaNet<float>& net, const Dataset& data, const NoiseSpec& noise,
                          const TrainConfig& cfg) {
    const auto& idx = data.val_indices();
    ValidationResult out;
    if (idx.empty()) {
        out.psnr_db = out.ssim = out.sam_rad = out.noisy_psnr_db = std::nan("");
        return out;
    }
    std::vector<Cube> clean(idx.size()), noisy(idx.size());
    parallel_for(idx.size(), [&](std::size_t k) {
        clean[k] = data.sample(idx[k]);
        noisy[k] = apply_noise(clean[k], reseeded(noise, derive_seed(cfg.val_noise_seed, {idx[k]}))).cube;
    });
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const Cube pred = denoise(net, noisy[k]);
        const MetricReport r = evaluate(pred, clean[k]);
        out.psnr_db += r.psnr_db;
        out.ssim += r.ssim;
        out.sam_rad += r.sam_rad;
        out.noisy_psnr_db += psnr(noisy[k], clean[k]);
    }
    const double n = static_cast<double>(idx.size());
    out.psnr_db /= n;
    out.ssim = finite_or_nan(out.ssim / n);
    out.sam_rad /= n;
    out.noisy_psnr_db /= n;
    return out;
}

TrainResult train(HcaNet<float>& net, const Dataset& data, const NoiseSpec& noise, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& out_dir,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
    cfg.validate();
    noise.validate();
    if (data.train_indices().empty()) throw ConfigError("train: dataset has no training samples");
    const auto& patch = data.manifest().patch;
    if (patch.bands != net.config().bands) {
        throw ConfigError("train: patches have " + std::to_string(patch.bands) + " bands, network expects " +
                          std::to_string(net.config().bands));
    }

    std::ofstream log_file;
    if (out_dir) {
        std::filesystem::create_directories(*out_dir);
        log_file.open(*out_dir / "log.jsonl", std::ios::binary | std::ios::trunc);
        if (!log_file) throw IoError("cannot write " + (*out_dir / "log.jsonl").string());
    }

    const auto params = net.parameters();
    OptimizerState opt;
    TrainResult result;
    bool have_best = false;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        const auto order = data.epoch_order(epoch);
        double loss_sum = 0.0;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, order.size() - start);
            std::vector<Cube> clean(n), noisy(n);
            parallel_for(n, [&](std::size_t k) {
                const std::size_t i = order[start + k];
                clean[k] = data.sample(i);
                noisy[k] = apply_noise(clean[k], reseeded(noise, derive_seed(cfg.seed, {epoch, i}))).cube;
            });
            const auto x = cubes_to_batch(noisy);
            const auto y = cubes_to_batch(clean);
            const auto loss = total_loss(net.denoise(x), y, cfg.loss);
            const double value = loss.item();
            if (!std::isfinite(value)) {
                throw NumericalError("training diverged: loss " + std::to_string(value) + " at epoch " +
                                     std::to_string(epoch) + ", batch starting at " + std::to_string(start));
            }
            backward(loss);
            if (cfg.clip_norm > 0.0) clip_grad_norm(params, cfg.clip_norm);
            adam_step(params, opt, lr, cfg);
            for (const auto& [name, t] : params) Tensor<float>(t).zero_grad();
            loss_sum += value * static_cast<double>(n);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        const auto v = validate(net, data, noise, cfg);
        rec.val_psnr_db = v.psnr_db;
        rec.val_ssim = v.ssim;
        rec.val_sam_rad = v.sam_rad;
        rec.noisy_psnr_db = v.noisy_psnr_db;
        result.log.push_back(rec);

        const bool improved = !have_best || rec.val_psnr_db > result.best_psnr_db;
        if (improved) {
            have_best = true;
            result.best_epoch = epoch;
            result.best_psnr_db = rec.val_psnr_db;
        }
        if (out_dir) {
            log_file << json(rec).dump() << '\n';
            log_file.flush();
            write_atomic(net, *out_dir / "last.hcaw");
            if (improved) write_atomic(net, *out_dir / "best.hcaw");
            if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
                write_atomic(net, *out_dir / ("epoch_" + std::to_string(epoch) + ".hcaw"));
            }
        }
        log_info("epoch " + std::to_string(epoch) + " loss " + std::to_string(rec.train_loss) + " val psnr " +
                 std::to_string(rec.val_psnr_db) + " dB");
        if (on_epoch) on_epoch(rec);
    }
    return result;
}

}  // namespace hcanet
