// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--expect-fail 1,...] [--work DIR]
//
// Exit status is 0 when the set of failing criteria equals --expect-fail
// exactly, so a known-red criterion stays visible without hiding new
// regressions (or an unexpected fix).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hcanet/cafm.hpp"
#include "hcanet/data_io.hpp"
#include "hcanet/gradcheck.hpp"
#include "hcanet/log.hpp"
#include "hcanet/loss.hpp"
#include "hcanet/metrics.hpp"
#include "hcanet/network.hpp"
#include "hcanet/noise.hpp"
#include "hcanet/parallel.hpp"
#include "hcanet/trainer.hpp"

namespace fs = std::filesystem;
using namespace hcanet;

namespace {

struct Outcome {
    bool pass = true;
    std::vector<std::string> notes;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            notes.push_back("failed: " + what);
        }
    }
    void note(const std::string& s) { notes.push_back(s); }
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Cube random_cube(std::size_t h, std::size_t w, std::size_t b, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Cube c(h, w, b);
    Rng rng(seed);
    for (auto& v : c.data) v = static_cast<float>(rng.uniform(lo, hi));
    return c;
}

// ---------------------------------------------------------------- 1

Outcome gradients() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<GradcheckReport> reports;
    for (const auto& preset : gradcheck_presets()) reports.push_back(run_gradcheck(preset));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.require(seconds < 120, "gradient check took " + fmt("%.0f", seconds) + " s");
    o.note("check itself " + fmt("%.1f", seconds) + " s");
    for (const auto& rep : reports) {
        const auto& preset = rep.preset;
        o.note(preset + " max rel err " + fmt("%.2e", rep.max_rel_err));
        for (const auto& c : rep.cases) {
            if (c.max_rel_err >= 1e-3) {
                o.require(false, c.name + " seed " + std::to_string(c.seed) + " rel err " + fmt("%.2e", c.max_rel_err) +
                                     " at " + c.worst);
            }
        }
        if (preset == "net" && !rep.passed) {
            GradcheckOptions fine;
            fine.step = 1e-4;
            const auto f = run_gradcheck(preset, fine);
            o.note("net at step 1e-4: max rel err " + fmt("%.2e", f.max_rel_err) +
                   " (ratio " + fmt("%.1f", rep.max_rel_err / f.max_rel_err) + ", second-order truncation)");
        }
    }
    return o;
}

// ---------------------------------------------------------------- 2

Outcome residual_identity() {
    Outcome o;
    for (std::uint64_t k = 0; k < 10; ++k) {
        auto cfg = NetworkConfig::desk_preset(8);
        cfg.init_seed = k;
        HcaNet<float> net(cfg);
        for (auto& v : net.tail().kernel.mutable_data()) v = 0.0f;
        for (auto& v : net.tail().bias.mutable_data()) v = 0.0f;
        const std::size_t h = 8 + 4 * (k % 4), w = 8 + 4 * ((k + 1) % 5);
        const Cube x = random_cube(h, w, 8, 100 + k);
        const Cube y = denoise(net, x);
        o.require(y.data == x.data, "cube " + std::to_string(k) + " changed");
    }
    o.note("10 cubes bit-exact");
    return o;
}

// ---------------------------------------------------------------- 3

Outcome attention_contract() {
    Outcome o;
    struct Shape3 {
        std::size_t c, h, w;
    };
    const std::vector<Shape3> shapes{{8, 4, 4}, {8, 3, 5}, {16, 8, 8}, {16, 2, 4}, {32, 4, 4}, {32, 5, 7}, {64, 4, 2}};
    double worst = 0;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto [c, h, w] = shapes[i];
        o.require(h * w != c, "shape guard needs H*W != C");
        Rng rng(derive_seed(3, {i}));
        auto cafm = make_cafm<float>(c, {}, rng);
        std::vector<float> v(2 * c * h * w);
        for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
        const Tensor<float> y({2, c, h, w}, v);
        const auto a = attention_weights(y, cafm);
        o.require(a.shape() == Shape{2, c, c}, "map shape " + shape_str(a.shape()) + " for C=" + std::to_string(c));
        for (std::size_t r = 0; r < 2 * c; ++r) {
            double s = 0;
            for (std::size_t j = 0; j < c; ++j) s += a.data()[r * c + j];
            worst = std::max(worst, std::abs(s - 1.0));
        }
    }
    o.require(worst <= 1e-6, "row sum off by " + fmt("%.2e", worst));
    o.note(std::to_string(shapes.size()) + " shapes, max |row sum - 1| " + fmt("%.1e", worst));
    return o;
}

// ---------------------------------------------------------------- 4

Outcome loss_oracles() {
    Outcome o;
    auto close = [&](double got, double want, const std::string& what) {
        o.require(std::abs(got - want) <= 1e-6, what + ": got " + fmt("%.9g", got) + ", want " + fmt("%.9g", want));
    };
    set_log_sink(nullptr);

    const Cube r = random_cube(6, 5, 4, 1);
    close(l1_rec(r, r), 0.0, "l1 identical");
    Cube shifted = r;
    for (auto& v : shifted.data) v += 0.5f;
    close(l1_rec(shifted, r), 0.5, "l1 offset 0.5");
    close(grad_reg(shifted, r), 0.0, "grad_reg constant shift");

    // 2 x 2 x 1: pred [[0,1],[1,0]], target [[1,1],[0,0]]
    Cube p(2, 2, 1), t(2, 2, 1);
    const float pv[4] = {0, 1, 1, 0}, tv[4] = {1, 1, 0, 0};
    std::copy(pv, pv + 4, p.data.begin());
    std::copy(tv, tv + 4, t.data.begin());
    close(l1_rec(p, t), 0.5, "l1 2x2 example");
    // direct forward differences: horizontal ((1-0)^2 + (-1-0)^2)/2, vertical ((1+1)^2 + (-1+1)^2)/2
    double horiz = 0, vert = 0;
    for (std::size_t y = 0; y < 2; ++y) {
        const double d = (p.at(y, 1, 0) - p.at(y, 0, 0)) - (t.at(y, 1, 0) - t.at(y, 0, 0));
        horiz += d * d / 2;
    }
    for (std::size_t x = 0; x < 2; ++x) {
        const double d = (p.at(1, x, 0) - p.at(0, x, 0)) - (t.at(1, x, 0) - t.at(0, x, 0));
        vert += d * d / 2;
    }
    close(grad_reg(p, t), horiz + vert, "grad_reg 2x2 example");
    close(total_loss(p, t, {0.01}), 0.5 + 0.01 * (horiz + vert), "total 2x2 example");
    close(total_loss(p, t, {0.0}), l1_rec(p, t), "lambda 0");

    // spectral pair pred [0,1,3], target [0,1,1]
    Cube ps(1, 1, 3), ts(1, 1, 3);
    ps.data = {0, 1, 3};
    ts.data = {0, 1, 1};
    close(grad_reg(ps, ts), ((1.0 - 1.0) * (1.0 - 1.0) + (2.0 - 0.0) * (2.0 - 0.0)) / 2, "spectral example");
    reset_log_sink();
    o.note("l1 0.5, grad " + fmt("%g", horiz + vert) + ", total " + fmt("%g", 0.5 + 0.01 * (horiz + vert)) +
           ", spectral 2");
    return o;
}

// ---------------------------------------------------------------- 5

double direct_ssim_band(const Cube& a, const Cube& b, std::size_t band) {
    const int k = 11;
    double g[11][11], total = 0;
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            const double di = i - 5, dj = j - 5;
            g[i][j] = std::exp(-(di * di + dj * dj) / (2 * 1.5 * 1.5));
            total += g[i][j];
        }
    }
    const double c1 = 1e-4, c2 = 9e-4;
    double acc = 0;
    std::size_t n = 0;
    for (std::size_t y0 = 0; y0 + k <= a.height; ++y0) {
        for (std::size_t x0 = 0; x0 + k <= a.width; ++x0) {
            double mx = 0, my = 0;
            for (int i = 0; i < k; ++i) {
                for (int j = 0; j < k; ++j) {
                    const double w = g[i][j] / total;
                    mx += w * a.at(y0 + i, x0 + j, band);
                    my += w * b.at(y0 + i, x0 + j, band);
                }
            }
            double vx = 0, vy = 0, cxy = 0;
            for (int i = 0; i < k; ++i) {
                for (int j = 0; j < k; ++j) {
                    const double w = g[i][j] / total;
                    const double dx = a.at(y0 + i, x0 + j, band) - mx, dy = b.at(y0 + i, x0 + j, band) - my;
                    vx += w * dx * dx;
                    vy += w * dy * dy;
                    cxy += w * dx * dy;
                }
            }
            acc += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++n;
        }
    }
    return acc / n;
}

Outcome metric_oracles() {
    Outcome o;
    const Cube ref = synthetic_cube({128, 128, 8, 4, 3, 3, 5});
    o.require(psnr(ref, ref) == kPsnrCap, "psnr identity");
    o.require(std::abs(ssim(ref, ref) - 1.0) <= 1e-9, "ssim identity");
    o.require(sam(ref, ref).radians == 0.0, "sam identity");

    Cube e1 = ref;
    for (auto& v : e1.data) v += 0.1f;
    o.require(std::abs(psnr(e1, ref) - 20.0) < 1e-4, "uniform 0.1 error gives 20 dB");

    Cube ortho_p(4, 4, 2), ortho_r(4, 4, 2);
    for (std::size_t i = 0; i < 16; ++i) {
        ortho_p.data[i] = 1.0f;       // band 0
        ortho_r.data[16 + i] = 1.0f;  // band 1
    }
    const double angle = sam(ortho_p, ortho_r).radians;
    o.require(std::abs(angle - std::numbers::pi / 2) <= 1e-6, "orthogonal spectra: " + fmt("%.9f", angle));

    Cube scaled = ref;
    Rng rng(8);
    for (std::size_t i = 0; i < ref.plane(); ++i) {
        const float s = static_cast<float>(rng.uniform(0.5, 4.0));
        for (std::size_t b = 0; b < ref.bands; ++b) scaled.band(b)[i] *= s;
    }
    Cube doubled = ref;
    for (auto& v : doubled.data) v *= 2.0f;
    o.require(sam(doubled, ref).radians <= 1e-7, "sam(2 ref, ref) = " + fmt("%.2e", sam(doubled, ref).radians));
    o.require(sam(scaled, ref).radians <= 1e-7, "sam under per-pixel scaling");

    const double sigma = 30.0 / 255.0;
    const double expected = 10 * std::log10(1.0 / (sigma * sigma));
    const double got = psnr(add_gaussian(ref, 30, 21).cube, ref);
    o.require(std::abs(got - expected) <= 0.3, "gaussian psnr " + fmt("%.3f", got));

    const Cube a = random_cube(32, 32, 2, 31), b = random_cube(32, 32, 2, 32);
    const auto bands = ssim_per_band(a, b);
    double worst = 0;
    for (std::size_t i = 0; i < 2; ++i) worst = std::max(worst, std::abs(bands[i] - direct_ssim_band(a, b, i)));
    o.require(worst <= 1e-6, "ssim vs direct window " + fmt("%.2e", worst));
    o.note("gaussian " + fmt("%.3f", got) + " dB vs " + fmt("%.3f", expected) + ", ssim oracle diff " + fmt("%.1e", worst));
    return o;
}

// ---------------------------------------------------------------- 6

struct NoiseRun {
    std::vector<std::string> bytes;  // serialized noisy cubes, in case order
};

NoiseRun noise_realizations(const Cube& x) {
    NoiseRun r;
    for (int id = 1; id <= 5; ++id) {
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            std::ostringstream os;
            write_cube(os, compose_case(x, id, seed).cube);
            r.bytes.push_back(os.str());
        }
    }
    return r;
}

Outcome noise_statistics(NoiseRun& first) {
    Outcome o;
    const Cube x = random_cube(64, 100, 12, 40, 0.2, 0.8);
    std::size_t checks = 0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto c1 = compose_case(x, 1, seed);
        for (int id = 1; id <= 5; ++id) {
            const auto n = compose_case(x, id, seed);
            const std::string tag = "case" + std::to_string(id) + " seed " + std::to_string(seed);
            for (std::size_t b = 0; b < x.bands; ++b) {
                const auto& d = n.report.bands[b];
                o.require(d.sigma && *d.sigma >= 30 && *d.sigma <= 70, tag + " sigma range");
                // Gaussian part on voxels no other degradation touched
                std::set<std::size_t> cols(d.stripe_columns.begin(), d.stripe_columns.end());
                cols.insert(d.dead_columns.begin(), d.dead_columns.end());
                double s = 0, s2 = 0;
                std::size_t cnt = 0;
                for (std::size_t y = 0; y < x.height; ++y) {
                    for (std::size_t c = 0; c < x.width; ++c) {
                        if (cols.count(c)) continue;
                        const float v = n.cube.at(y, c, b);
                        if (d.impulse_density && v != c1.cube.at(y, c, b)) continue;
                        const double e = double(v) - x.at(y, c, b);
                        s += e;
                        s2 += e * e;
                        ++cnt;
                    }
                }
                const double sd = std::sqrt(s2 / cnt - (s / cnt) * (s / cnt));
                const double want = *d.sigma / 255.0;
                // impulse hits keep the voxels whose noise happens to equal 0/1; bias is negligible
                o.require(std::abs(sd - want) / want < 0.06, tag + " band " + std::to_string(b) + " noise sd " +
                                                                  fmt("%.4f", sd) + " vs " + fmt("%.4f", want));
                ++checks;
                if (!d.stripe_columns.empty()) {
                    const double f = double(d.stripe_columns.size()) / x.width;
                    o.require(f >= 0.05 && f <= 0.15, tag + " stripe fraction " + fmt("%.3f", f));
                    for (double off : d.stripe_offsets) o.require(std::abs(off) <= 0.25, tag + " stripe amplitude");
                }
                if (!d.dead_columns.empty()) {
                    const double f = double(d.dead_columns.size()) / x.width;
                    o.require(f >= 0.05 && f <= 0.15, tag + " deadline fraction " + fmt("%.3f", f));
                    // impulse runs last and may salt a dead voxel
                    std::size_t bad = 0;
                    for (std::size_t c : d.dead_columns) {
                        for (std::size_t y = 0; y < x.height; ++y) {
                            const float v = n.cube.at(y, c, b);
                            bad += !(v == 0.0f || (d.impulse_density && v == 1.0f));
                        }
                    }
                    o.require(bad == 0, tag + " band " + std::to_string(b) + ": " + std::to_string(bad) +
                                            " dead voxels not zero");
                }
                if (d.impulse_density) {
                    const double p = *d.impulse_density;
                    o.require(p >= 0.3 && p <= 0.7, tag + " impulse density " + fmt("%.3f", p));
                    std::set<std::size_t> dead(d.dead_columns.begin(), d.dead_columns.end());
                    std::size_t hit = 0, seen = 0;
                    for (std::size_t y = 0; y < x.height; ++y) {
                        for (std::size_t c = 0; c < x.width; ++c) {
                            if (dead.count(c)) continue;
                            const float v = n.cube.at(y, c, b);
                            hit += v == 0.0f || v == 1.0f;
                            ++seen;
                        }
                    }
                    // Binomial(seen, p): sd <= 0.5 / sqrt(seen) < 0.007, allow about 5 sd
                    const double rate = double(hit) / seen;
                    o.require(std::abs(rate - p) <= 0.035, tag + " impulse empirical " + fmt("%.3f", rate) +
                                                               " vs " + fmt("%.3f", p));
                }
            }
            if (id == 2 || id == 3 || id == 4) {
                std::size_t bands_hit = 0;
                for (const auto& d : n.report.bands) {
                    bands_hit += !d.stripe_columns.empty() || !d.dead_columns.empty() || d.impulse_density.has_value();
                }
                o.require(bands_hit == (x.bands + 2) / 3, tag + " degraded band count " + std::to_string(bands_hit));
            }
        }
    }
    first = noise_realizations(x);
    const NoiseRun second = noise_realizations(x);
    o.require(first.bytes == second.bytes, "identical seeds gave different bytes");
    o.note(std::to_string(checks) + " band checks over 5 cases x 3 seeds, reruns byte-identical");
    return o;
}

// ---------------------------------------------------------------- 7, 8, 10

struct ToyResult {
    TrainResult train;
    double best_psnr = 0, noisy_psnr = 0;
    fs::path dir;
};

Dataset toy_dataset() {
    std::vector<Cube> cubes;
    for (std::uint64_t s = 0; s < 4; ++s) cubes.push_back(synthetic_cube({64, 64, 8, 4, 3, 3, s}));
    DatasetManifest m;
    m.patch = {32, 32, 8};
    m.crops_per_cube = 20;
    m.samples = 200;
    m.split_seed = 1;
    return Dataset(cubes, m);
}

TrainConfig toy_train_config() {
    TrainConfig tc;
    tc.epochs = 12;
    tc.lr0 = 5e-3;
    tc.batch_size = 4;
    tc.seed = 7;
    return tc;
}

ToyResult toy_run(const Dataset& data, const AblationSwitches& switches, const fs::path& dir) {
    auto cfg = NetworkConfig::desk_preset(8);
    cfg.ablation = switches;
    HcaNet<float> net(cfg);
    NoiseSpec noise;
    noise.sigma = 30;
    const auto tc = toy_train_config();
    ToyResult r;
    r.dir = dir;
    fs::remove_all(dir);
    r.train = train(net, data, noise, tc, dir);
    const auto best = load_checkpoint(dir / "best.hcaw");
    const auto v = validate(best, data, noise, tc);
    r.best_psnr = v.psnr_db;
    r.noisy_psnr = v.noisy_psnr_db;
    return r;
}

Outcome toy_training(const ToyResult& r, double seconds) {
    Outcome o;
    const auto& log = r.train.log;
    o.require(r.best_psnr == log[r.train.best_epoch].val_psnr_db, "reloaded best checkpoint changes val PSNR");
    const double gain = r.best_psnr - r.noisy_psnr;
    o.require(gain >= 5.0, "gain " + fmt("%.2f", gain) + " dB");
    std::size_t rises = 0;
    for (std::size_t e = 1; e < log.size(); ++e) rises += log[e].train_loss > log[e - 1].train_loss;
    o.require(rises <= 1, std::to_string(rises) + " non-monotone epochs");
    o.require(seconds <= 1800, "took " + fmt("%.0f", seconds) + " s");
    o.note("val " + fmt("%.2f", r.best_psnr) + " dB vs noisy " + fmt("%.2f", r.noisy_psnr) + " dB (+" +
           fmt("%.2f", gain) + "), loss " + fmt("%.4f", log.front().train_loss) + " -> " +
           fmt("%.4f", log.back().train_loss) + ", " + std::to_string(rises) + " rises, " + fmt("%.0f", seconds) + " s");
    return o;
}

Outcome ablation(const ToyResult& full, const ToyResult& no_msfn, const ToyResult& base) {
    Outcome o;
    const double tie = 0.2;
    o.require(full.best_psnr >= no_msfn.best_psnr - tie, "full below no-MSFN");
    o.require(no_msfn.best_psnr >= base.best_psnr - tie, "no-MSFN below base");
    o.note("full " + fmt("%.2f", full.best_psnr) + ", no-MSFN " + fmt("%.2f", no_msfn.best_psnr) + ", base " +
           fmt("%.2f", base.best_psnr) + " dB");
    return o;
}

Outcome param_count() {
    Outcome o;
    const HcaNet<float> net(NetworkConfig::paper_preset());
    const double n = static_cast<double>(net.param_count());
    const double dev = (n - 4.75e6) / 4.75e6;
    o.require(std::abs(dev) <= 0.15, "deviation " + fmt("%.3f", dev));
    o.note(std::to_string(net.param_count()) + " parameters (" + fmt("%+.1f", 100 * dev) + "% vs 4.75M)");
    return o;
}

Outcome reproducibility(const NoiseRun& noise_first, const ToyResult& first, const Dataset& data, const fs::path& work) {
    Outcome o;
    const Cube x = random_cube(64, 100, 12, 40, 0.2, 0.8);
    o.require(noise_realizations(x).bytes == noise_first.bytes, "noise rerun differs");
    const auto again = toy_run(data, {}, work / "repeat");
    for (const char* f : {"log.jsonl", "best.hcaw", "last.hcaw"}) {
        o.require(slurp(first.dir / f) == slurp(again.dir / f), std::string(f) + " differs");
    }
    o.note("noise cubes, log.jsonl, best.hcaw and last.hcaw byte-identical");
    return o;
}

std::set<int> parse_set(const std::string& s) {
    std::set<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) out.insert(std::stoi(tok));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"HCANet acceptance suite"};
    std::string only, expect_fail, work = (fs::temp_directory_path() / "hcanet_acceptance").string();
    app.add_option("--only", only, "Comma-separated criteria to run");
    app.add_option("--expect-fail", expect_fail, "Comma-separated criteria known to fail");
    app.add_option("--work", work, "Scratch directory for training runs");
    CLI11_PARSE(app, argc, argv);

    set_worker_threads(0);
    const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10} : parse_set(only);
    const std::set<int> expected = parse_set(expect_fail);
    const fs::path dir(work);
    fs::create_directories(dir);

    const char* names[] = {"",
                           "gradient correctness",
                           "residual identity",
                           "attention contract",
                           "loss oracles",
                           "metric oracles",
                           "noise statistics",
                           "toy training efficacy",
                           "ablation ordering",
                           "parameter-count calibration",
                           "reproducibility"};
    std::set<int> failed;
    auto report = [&](int id, const Outcome& o, double seconds) {
        if (!o.pass) failed.insert(id);
        std::printf("criterion %2d %s: %s (%.1f s)\n", id, o.pass ? "PASS" : "FAIL", names[id], seconds);
        for (const auto& n : o.notes) std::printf("    %s\n", n.c_str());
        std::fflush(stdout);
    };
    auto timed = [&](int id, const std::function<Outcome()>& fn) {
        if (!selected.count(id)) return;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o.require(false, std::string("exception: ") + e.what());
        }
        report(id, o, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    };

    timed(1, gradients);
    timed(2, residual_identity);
    timed(3, attention_contract);
    timed(4, loss_oracles);
    timed(5, metric_oracles);
    NoiseRun noise_first;
    timed(6, [&] { return noise_statistics(noise_first); });

    std::optional<Dataset> data;
    std::optional<ToyResult> full;
    double full_seconds = 0;
    auto full_run = [&]() -> const ToyResult& {
        if (!full) {
            data.emplace(toy_dataset());
            const auto t0 = std::chrono::steady_clock::now();
            full = toy_run(*data, {}, dir / "full");
            full_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
        return *full;
    };
    timed(7, [&] { return toy_training(full_run(), full_seconds); });
    timed(8, [&] {
        full_run();
        const auto no_msfn = toy_run(*data, {true, true, false}, dir / "no_msfn");
        const auto base = toy_run(*data, {false, false, false}, dir / "base");
        return ablation(*full, no_msfn, base);
    });
    timed(9, param_count);
    timed(10, [&] {
        if (noise_first.bytes.empty()) noise_first = noise_realizations(random_cube(64, 100, 12, 40, 0.2, 0.8));
        full_run();
        return reproducibility(noise_first, *full, *data, dir);
    });

    std::printf("failing criteria: ");
    for (int id : failed) std::printf("%d ", id);
    std::printf("%s\n", failed.empty() ? "none" : "");
    std::set<int> expected_here;
    for (int id : expected) {
        if (selected.count(id)) expected_here.insert(id);
    }
    if (failed != expected_here) {
        std::printf("unexpected outcome: expected failing set {");
        for (int id : expected_here) std::printf(" %d", id);
        std::printf(" }\n");
        return 1;
    }
    return 0;
}
