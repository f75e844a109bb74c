// hcanet command-line tool.
//
// Exit codes: 0 success, 2 configuration or usage, 3 I/O or file format,
// 4 numerical failure (NaN, divergence, failed gradient check, undefined metric).
// Results meant for scripts go to stdout as JSON; diagnostics go to stderr.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "hcanet/data_io.hpp"
#include "hcanet/errors.hpp"
#include "hcanet/gradcheck.hpp"
#include "hcanet/log.hpp"
#include "hcanet/metrics.hpp"
#include "hcanet/network.hpp"
#include "hcanet/noise.hpp"
#include "hcanet/parallel.hpp"
#include "hcanet/trainer.hpp"
#include "hcanet/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hcanet;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open " + p.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

json read_json(const fs::path& p) {
    try {
        return json::parse(read_file(p));
    } catch (const json::parse_error& e) {
        throw FormatError(p.string() + ": " + e.what(), e.byte);
    }
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    out << text;
    if (!out) throw IoError("write failed: " + p.string());
}

std::string file_hash(const fs::path& p) { return fnv1a_hex(read_file(p)); }

/// RunManifest: tool version, command, every config and the hashes of the
/// files read and written. No timestamps, so reruns produce identical bytes.
struct Manifest {
    explicit Manifest(std::string cmd) : command(std::move(cmd)) {}

    std::string command;
    json config = json::object();
    std::map<std::string, std::string> inputs;
    std::map<std::string, std::string> outputs;

    void input(const fs::path& p) { inputs[p.string()] = file_hash(p); }
    void output(const fs::path& p) { outputs[p.string()] = file_hash(p); }

    void write(const fs::path& path) const {
        json j{{"tool", "hcanet"},
               {"version", version()},
               {"command", command},
               {"threads", worker_threads()},
               {"config", config},
               {"inputs", inputs},
               {"outputs", outputs}};
        write_text(path, canonical_json(j) + "\n");
    }
};

fs::path beside(const fs::path& out) {
    fs::path p = out;
    p += ".manifest.json";
    return p;
}

NoiseSpec case_spec(const std::string& token, std::uint64_t seed) {
    NoiseSpec s;
    s.seed = seed;
    if (token == "g30" || token == "g50" || token == "g70") {
        s.kind = NoiseKind::gaussian;
        s.sigma = std::stod(token.substr(1));
    } else if (token == "blind") {
        s.kind = NoiseKind::blind_gaussian;
    } else {
        s.kind = noise_kind_from_string(token);
    }
    s.validate();
    return s;
}

void check_compatible(const HcaNet<float>& net, const Cube& c) {
    const auto& cfg = net.config();
    if (c.bands != cfg.bands) {
        throw ConfigError("band mismatch: checkpoint expects " + std::to_string(cfg.bands) + " bands, input has " +
                          std::to_string(c.bands));
    }
    const std::size_t m = cfg.spatial_multiple();
    if (c.height % m != 0 || c.width % m != 0) {
        throw ConfigError("input is " + std::to_string(c.height) + "x" + std::to_string(c.width) +
                          "; height and width must be multiples of " + std::to_string(m) + " (pad the cube first)");
    }
}

struct SimulateArgs {
    std::string in, out, report, token;
    std::uint64_t seed = 0;
};

int cmd_simulate(const SimulateArgs& a) {
    const Cube clean = load_cube(a.in);
    const NoiseSpec spec = case_spec(a.token, a.seed);
    const NoisyCube noisy = apply_noise(clean, spec);
    save_cube(noisy.cube, a.out);
    Manifest m{"simulate"};
    m.config = {{"noise", spec}, {"case", a.token}};
    m.input(a.in);
    m.output(a.out);
    if (!a.report.empty()) {
        write_text(a.report, json(noisy.report).dump(2) + "\n");
        m.output(a.report);
    }
    m.write(beside(a.out));
    return 0;
}

struct SynthArgs {
    std::string out;
    std::size_t count = 4, height = 64, width = 64, bands = 8, materials = 4, patch = 32, samples = 200;
    std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
    if (a.count == 0) throw ConfigError("--count must be positive");
    const fs::path dir(a.out);
    fs::create_directories(dir);
    DatasetManifest dm;
    dm.patch = {a.patch, a.patch, a.bands};
    dm.crops_per_cube = (a.samples + a.count - 1) / a.count;
    dm.samples = a.samples;
    dm.split_seed = a.seed;
    Manifest m{"synth"};
    json specs = json::array();
    for (std::size_t k = 0; k < a.count; ++k) {
        SyntheticSpec s;
        s.height = a.height;
        s.width = a.width;
        s.bands = a.bands;
        s.materials = a.materials;
        s.seed = derive_seed(a.seed, {k});
        const std::string name = "cube_" + std::to_string(k) + ".hsic";
        save_cube(synthetic_cube(s), dir / name);
        dm.cubes.push_back(name);
        m.output(dir / name);
        specs.push_back({{"file", name}, {"height", s.height}, {"width", s.width}, {"bands", s.bands},
                         {"materials", s.materials}, {"seed", s.seed}});
    }
    dm.validate();
    write_text(dir / "dataset.json", json(dm).dump(2) + "\n");
    m.output(dir / "dataset.json");
    m.config = {{"cubes", specs}, {"dataset", dm}};
    m.write(dir / "synth.manifest.json");
    std::cout << canonical_json({{"dataset", (dir / "dataset.json").string()}, {"cubes", a.count}}) << "\n";
    return 0;
}

struct TrainArgs {
    std::string config, data, out;
    std::optional<std::size_t> epochs, batch_size;
    std::optional<double> lr0;
    std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
    const json file = read_json(a.config);
    if (!file.is_object()) throw ConfigError(a.config + ": expected a JSON object");
    for (auto it = file.begin(); it != file.end(); ++it) {
        if (it.key() != "network" && it.key() != "train" && it.key() != "noise") {
            throw ConfigError(a.config + ": unknown section '" + it.key() + "'");
        }
    }
    NetworkConfig net_cfg = file.value("network", json{{"preset", "desk"}}).get<NetworkConfig>();
    TrainConfig tc = file.value("train", json::object()).get<TrainConfig>();
    NoiseSpec noise = file.value("noise", json::object()).get<NoiseSpec>();
    if (a.epochs) tc.epochs = *a.epochs;
    if (a.batch_size) tc.batch_size = *a.batch_size;
    if (a.lr0) tc.lr0 = *a.lr0;
    if (a.seed) tc.seed = *a.seed;
    tc.validate();

    const Dataset data = Dataset::from_manifest_file(a.data);
    const fs::path dir(a.out);
    fs::create_directories(dir);

    Manifest m{"train"};
    m.config = {{"network", net_cfg},
                {"train", tc},
                {"noise", noise},
                {"dataset", data.manifest()},
                {"dataset_hash", fnv1a_hex(canonical_json(json(data.manifest())))}};
    m.input(a.config);
    m.input(a.data);

    HcaNet<float> net(net_cfg);
    TrainResult res;
    try {
        res = train(net, data, noise, tc, dir);
    } catch (const NumericalError&) {
        m.config["aborted"] = true;
        for (const char* f : {"log.jsonl", "last.hcaw", "best.hcaw"}) {
            if (fs::exists(dir / f)) m.output(dir / f);
        }
        m.write(dir / "manifest.json");
        throw;
    }
    for (const char* f : {"log.jsonl", "last.hcaw", "best.hcaw"}) m.output(dir / f);
    m.config["best_epoch"] = res.best_epoch;
    m.write(dir / "manifest.json");
    const auto& last = res.log.back();
    std::cout << canonical_json({{"best_epoch", res.best_epoch},
                                 {"best_val_psnr_db", res.best_psnr_db},
                                 {"final", last},
                                 {"param_count", net.param_count()}})
              << "\n";
    return 0;
}

int cmd_denoise(const std::string& model, const std::string& in, const std::string& out) {
    const HcaNet<float> net = load_checkpoint(model);
    const Cube noisy = load_cube(in);
    check_compatible(net, noisy);
    Cube restored = denoise(net, noisy);
    for (float& v : restored.data) v = std::clamp(v, 0.0f, 1.0f);
    save_cube(restored, out);
    Manifest m{"denoise"};
    m.config = {{"network", net.config()}};
    m.input(model);
    m.input(in);
    m.output(out);
    m.write(beside(out));
    return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& ref_path, const std::string& out) {
    const Cube pred = load_cube(pred_path);
    const Cube ref = load_cube(ref_path);
    const std::string text = json(evaluate(pred, ref)).dump(2);
    if (out.empty()) {
        std::cout << text << "\n";
        return 0;
    }
    write_text(out, text + "\n");
    Manifest m{"eval"};
    m.input(pred_path);
    m.input(ref_path);
    m.output(out);
    m.write(beside(out));
    return 0;
}

int cmd_gradcheck(const std::string& preset, const GradcheckOptions& opt, const std::string& out) {
    const GradcheckReport rep = run_gradcheck(preset, opt);
    const json j = rep;
    if (!out.empty()) {
        write_text(out, j.dump(2) + "\n");
        Manifest m{"gradcheck"};
        m.config = {{"preset", preset}, {"seeds", opt.seeds}, {"step", opt.step}, {"tolerance", opt.tolerance}};
        m.output(out);
        m.write(beside(out));
    }
    std::cout << canonical_json({{"preset", preset}, {"max_rel_err", rep.max_rel_err}, {"passed", rep.passed},
                                 {"cases", rep.cases.size()}})
              << "\n";
    if (!rep.passed) {
        for (const auto& c : rep.cases) {
            if (c.max_rel_err >= opt.tolerance) {
                std::cerr << "gradcheck: " << c.name << " seed " << c.seed << " rel err " << c.max_rel_err << " at "
                          << c.worst << "\n";
            }
        }
        return 4;
    }
    return 0;
}

struct InitArgs {
    std::string config, preset = "desk", out;
    std::size_t bands = 8;
    std::uint64_t seed = 0;
    bool zero_tail = false;
};

int cmd_init(const InitArgs& a) {
    NetworkConfig cfg;
    if (!a.config.empty()) {
        cfg = read_json(a.config).get<NetworkConfig>();
    } else {
        cfg = json{{"preset", a.preset}, {"bands", a.bands}, {"init_seed", a.seed}}.get<NetworkConfig>();
    }
    HcaNet<float> net(cfg);
    if (a.zero_tail) {
        for (auto& v : net.tail().kernel.mutable_data()) v = 0.0f;
        if (net.tail().bias.defined()) {
            for (auto& v : net.tail().bias.mutable_data()) v = 0.0f;
        }
    }
    save_checkpoint(net, a.out);
    Manifest m{"init"};
    m.config = {{"network", cfg}, {"zero_tail", a.zero_tail}};
    if (!a.config.empty()) m.input(a.config);
    m.output(a.out);
    m.write(beside(a.out));
    std::cout << canonical_json({{"param_count", net.param_count()}}) << "\n";
    return 0;
}

int cmd_info(const std::string& model) {
    const HcaNet<float> net = load_checkpoint(model);
    std::cout << canonical_json({{"network", net.config()}, {"param_count", net.param_count()},
                                 {"tensors", net.parameters().size()}})
              << "\n";
    return 0;
}

int run(int argc, char** argv) {
    CLI::App app{"HCANet hyperspectral denoising"};
    app.set_version_flag("--version", std::string(version()));
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Add synthetic noise to a cube");
    simulate->add_option("--in", sim.in, "Clean cube (.hsic)")->required();
    simulate->add_option("--case", sim.token, "g30|g50|g70|blind|case1..case5")
        ->required()
        ->check(CLI::IsMember({"g30", "g50", "g70", "blind", "case1", "case2", "case3", "case4", "case5"}));
    simulate->add_option("--seed", sim.seed, "Noise seed")->default_val(0);
    simulate->add_option("--out", sim.out, "Noisy cube")->required();
    simulate->add_option("--report", sim.report, "Degradation report (JSON)");

    SynthArgs syn;
    auto* synth = app.add_subcommand("synth", "Write synthetic clean cubes and a dataset manifest");
    synth->add_option("--out", syn.out, "Output directory")->required();
    synth->add_option("--count", syn.count, "Number of cubes")->default_val(4);
    synth->add_option("--height", syn.height)->default_val(64);
    synth->add_option("--width", syn.width)->default_val(64);
    synth->add_option("--bands", syn.bands)->default_val(8);
    synth->add_option("--materials", syn.materials)->default_val(4);
    synth->add_option("--patch", syn.patch, "Square patch size in the manifest")->default_val(32);
    synth->add_option("--samples", syn.samples, "Samples in the manifest")->default_val(200);
    synth->add_option("--seed", syn.seed)->default_val(0);

    TrainArgs tr;
    auto* trainc = app.add_subcommand("train", "Train a network; flags override the config file");
    trainc->add_option("--config", tr.config, "JSON with optional network/train/noise sections")->required();
    trainc->add_option("--data", tr.data, "Dataset manifest")->required();
    trainc->add_option("--out", tr.out, "Run directory")->required();
    trainc->add_option("--epochs", tr.epochs);
    trainc->add_option("--batch-size", tr.batch_size);
    trainc->add_option("--lr0", tr.lr0);
    trainc->add_option("--seed", tr.seed, "Training noise seed");

    std::string model, in, out;
    auto* den = app.add_subcommand("denoise", "Denoise a cube; output is clipped to [0, 1]");
    den->add_option("--model", model, "Checkpoint (.hcaw)")->required();
    den->add_option("--in", in, "Noisy cube")->required();
    den->add_option("--out", out, "Restored cube")->required();

    std::string pred, ref, eval_out;
    auto* ev = app.add_subcommand("eval", "PSNR, SSIM and SAM of a prediction against a reference");
    ev->add_option("--pred", pred)->required();
    ev->add_option("--ref", ref)->required();
    ev->add_option("--out", eval_out, "Report file; stdout when omitted");

    std::string preset, gc_out;
    GradcheckOptions gco;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check");
    gc->add_option("--preset", preset)->required()->check(CLI::IsMember(gradcheck_presets()));
    gc->add_option("--seeds", gco.seeds)->default_val(5);
    gc->add_option("--step", gco.step)->default_val(1e-3);
    gc->add_option("--tolerance", gco.tolerance)->default_val(1e-3);
    gc->add_option("--out", gc_out, "Full report (JSON)");

    InitArgs ini;
    auto* init = app.add_subcommand("init", "Write a freshly initialised checkpoint");
    init->add_option("--config", ini.config, "Network config JSON");
    init->add_option("--preset", ini.preset)->check(CLI::IsMember({"desk", "paper"}))->default_val("desk");
    init->add_option("--bands", ini.bands)->default_val(8);
    init->add_option("--seed", ini.seed, "Init seed")->default_val(0);
    init->add_flag("--zero-tail", ini.zero_tail, "Zero the tail conv so denoise is the identity");
    init->add_option("--out", ini.out)->required();

    std::string info_model;
    auto* info = app.add_subcommand("info", "Print a checkpoint's config and parameter count");
    info->add_option("--model", info_model)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n";
        const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        std::cerr << sub->help();
        return 2;
    }

    if (simulate->parsed()) return cmd_simulate(sim);
    if (synth->parsed()) return cmd_synth(syn);
    if (trainc->parsed()) return cmd_train(tr);
    if (den->parsed()) return cmd_denoise(model, in, out);
    if (ev->parsed()) return cmd_eval(pred, ref, eval_out);
    if (gc->parsed()) return cmd_gradcheck(preset, gco, gc_out);
    if (init->parsed()) return cmd_init(ini);
    if (info->parsed()) return cmd_info(info_model);
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 2;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 4;
    } catch (const MetricError& e) {
        std::cerr << "metric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
