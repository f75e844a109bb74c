#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <cstring>

#include "hcanet/data_io.hpp"
#include "hcanet/errors.hpp"
#include "hcanet/gradcheck.hpp"
#include "hcanet/log.hpp"
#include "hcanet/metrics.hpp"
#include "hcanet/network.hpp"
#include "hcanet/noise.hpp"
#include "hcanet/trainer.hpp"
#include "hcanet/version.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace hcanet;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// Arrays are bands x height x width, the cube's own memory order.
FloatArray to_array(const Cube& c) {
    FloatArray a({c.bands, c.height, c.width});
    std::memcpy(a.mutable_data(), c.data.data(), c.data.size() * sizeof(float));
    return a;
}

Cube to_cube(const FloatArray& a) {
    if (a.ndim() != 3) throw ShapeError("expected a (bands, height, width) array, got ndim " + std::to_string(a.ndim()));
    Cube c(static_cast<std::size_t>(a.shape(1)), static_cast<std::size_t>(a.shape(2)),
           static_cast<std::size_t>(a.shape(0)));
    std::memcpy(c.data.data(), a.data(), c.data.size() * sizeof(float));
    return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "HCANet hyperspectral denoising (C++ core)";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_OSError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
    py::register_exception<MetricError>(m, "MetricError", PyExc_ArithmeticError);

    m.def("version", &version);
    m.def("quiet", [](bool on) { on ? set_log_sink(nullptr) : reset_log_sink(); }, py::arg("on") = true,
          "Silence (or restore) library diagnostics on stderr.");

    m.def("load_cube", [](const std::filesystem::path& path) { return to_array(load_cube(path)); });
    m.def("save_cube", [](const std::filesystem::path& path, const FloatArray& a) { save_cube(to_cube(a), path); });
    m.def("synthetic_cube",
          [](std::size_t height, std::size_t width, std::size_t bands, std::size_t materials, std::uint64_t seed) {
              SyntheticSpec s;
              s.height = height;
              s.width = width;
              s.bands = bands;
              s.materials = materials;
              s.seed = seed;
              return to_array(synthetic_cube(s));
          },
          py::arg("height"), py::arg("width"), py::arg("bands"), py::arg("materials") = 4, py::arg("seed") = 0);

    m.def("_apply_noise", [](const FloatArray& a, const std::string& spec_json) {
        const NoiseSpec spec = json::parse(spec_json).get<NoiseSpec>();
        const NoisyCube n = apply_noise(to_cube(a), spec);
        return py::make_tuple(to_array(n.cube), json(n.report).dump());
    });
    m.def("_evaluate", [](const FloatArray& pred, const FloatArray& ref) {
        return json(evaluate(to_cube(pred), to_cube(ref))).dump();
    });
    m.def("psnr", [](const FloatArray& p, const FloatArray& r) { return psnr(to_cube(p), to_cube(r)); });
    m.def("ssim", [](const FloatArray& p, const FloatArray& r) { return ssim(to_cube(p), to_cube(r)); });
    m.def("sam", [](const FloatArray& p, const FloatArray& r) { return sam(to_cube(p), to_cube(r)).radians; });

    m.def("_gradcheck", [](const std::string& preset, std::size_t seeds, double step) {
        GradcheckOptions o;
        o.seeds = seeds;
        o.step = step;
        py::gil_scoped_release release;
        return json(run_gradcheck(preset, o)).dump();
    });

    py::class_<HcaNet<float>>(m, "_Network")
        .def(py::init([](const std::string& config_json) {
            return HcaNet<float>(json::parse(config_json).get<NetworkConfig>());
        }))
        .def_static("load", [](const std::filesystem::path& path) { return load_checkpoint(path); })
        .def("save", [](const HcaNet<float>& n, const std::filesystem::path& path) { save_checkpoint(n, path); })
        .def("config_json", [](const HcaNet<float>& n) { return json(n.config()).dump(); })
        .def_property_readonly("param_count", &HcaNet<float>::param_count)
        .def("zero_tail",
             [](HcaNet<float>& n) {
                 for (auto& v : n.tail().kernel.mutable_data()) v = 0.0f;
                 if (n.tail().bias.defined()) {
                     for (auto& v : n.tail().bias.mutable_data()) v = 0.0f;
                 }
             })
        .def("denoise",
             [](const HcaNet<float>& n, const FloatArray& a, bool clip) {
                 Cube c = to_cube(a);
                 Cube out;
                 {
                     py::gil_scoped_release release;
                     out = denoise(n, c);
                 }
                 if (clip) {
                     for (float& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
                 }
                 return to_array(out);
             },
             py::arg("cube"), py::arg("clip") = false)
        .def("_train",
             [](HcaNet<float>& n, const std::string& dataset_manifest, const std::string& train_json,
                const std::string& noise_json, const std::string& out_dir) {
                 const TrainConfig tc = json::parse(train_json).get<TrainConfig>();
                 const NoiseSpec noise = json::parse(noise_json).get<NoiseSpec>();
                 const Dataset data = Dataset::from_manifest_file(dataset_manifest);
                 TrainResult res;
                 {
                     py::gil_scoped_release release;
                     res = train(n, data, noise, tc,
                                 out_dir.empty() ? std::nullopt : std::optional<std::filesystem::path>(out_dir));
                 }
                 json log = json::array();
                 for (const auto& r : res.log) log.push_back(r);
                 return json{{"best_epoch", res.best_epoch}, {"log", log}}.dump();
             });
}
