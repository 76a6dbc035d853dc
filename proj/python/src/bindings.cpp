#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "pimforce/commands.hpp"
#include "pimforce/eval.hpp"
#include "pimforce/handkin.hpp"
#include "pimforce/nn/checkpoint.hpp"
#include "pimforce/nn/model.hpp"
#include "pimforce/semgproc.hpp"
#include "pimforce/voxel.hpp"

namespace py = pybind11;
using namespace pimforce;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array make_array(std::vector<py::ssize_t> shape, const std::vector<double>& v) {
    Array out(shape);
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

void require_shape(const Array& a, std::vector<py::ssize_t> shape, const char* what) {
    bool ok = a.ndim() == static_cast<py::ssize_t>(shape.size());
    for (std::size_t i = 0; ok && i < shape.size(); ++i) ok = a.shape(static_cast<py::ssize_t>(i)) == shape[i];
    if (!ok) {
        std::string s;
        for (auto d : shape) s += (s.empty() ? "" : ", ") + std::to_string(d);
        throw ShapeError(std::string(what) + " must have shape (" + s + ")");
    }
}

handkin::JointSet joints_from(const Array& a) {
    require_shape(a, {21, 3}, "joints");
    handkin::JointSet js;
    for (std::size_t j = 0; j < kNumJoints; ++j)
        for (std::size_t d = 0; d < 3; ++d) js.joints[j][d] = a.at(j, d);
    return js;
}

Array joints_to(const handkin::JointSet& js) {
    std::vector<double> v;
    for (const auto& p : js.joints) v.insert(v.end(), p.begin(), p.end());
    return make_array({21, 3}, v);
}

std::vector<double> flat(const Array& a) { return {a.data(), a.data() + a.size()}; }

std::vector<std::uint8_t> status(const Array& a) {
    std::vector<std::uint8_t> out;
    for (py::ssize_t i = 0; i < a.size(); ++i) out.push_back(a.data()[i] > 0.5 ? 1 : 0);
    return out;
}

py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

}  // namespace

PYBIND11_MODULE(_pimforce, m) {
    m.doc() = "Hand pressure estimation from sEMG and hand pose";

    // Translators run newest first, so the base class goes in first.
    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

    m.def("forward_kinematics", [](const Array& angles) {
        require_shape(angles, {20}, "angles");
        handkin::GloveAngles a;
        std::copy(angles.data(), angles.data() + 20, a.values.begin());
        return joints_to(handkin::forward_kinematics(handkin::glove_to_rotations(a)));
    }, py::arg("angles"), "Canonical 21 x 3 joints of 20 glove angles (radians).");

    m.def("canonicalize", [](const Array& joints) { return joints_to(handkin::canonicalize(joints_from(joints))); },
          py::arg("joints"), "Similarity-transform a 21 x 3 detector pose into the canonical frame.");

    m.def("is_canonical", [](const Array& joints, double tol) { return handkin::is_canonical(joints_from(joints), handkin::HandSkeleton::reference(), tol); },
          py::arg("joints"), py::arg("tol") = 1e-6);

    m.def("stft", [](const Array& window) {
        require_shape(window, {8, 1248}, "window");
        semgproc::SemgWindow w;
        w.data = flat(window);
        return make_array({8, 32, 64}, semgproc::stft(w).values);
    }, py::arg("window"), "8 x 32 x 64 magnitude spectrogram of an 8 x 1248 sEMG window.");

    m.def("voxelize", [](const Array& grid_joints, double sigma) {
        return make_array({21, 48, 48, 48}, voxel::voxelize(joints_from(grid_joints), sigma).values);
    }, py::arg("grid_joints"), py::arg("sigma") = 1.0, "Gaussian heatmaps of joints given in grid coordinates.");

    m.def("metrics", [](const Array& p, const Array& p_hat, const Array& c, const Array& c_hat) {
        const auto r = eval::evaluate(flat(p), flat(p_hat), status(c), status(c_hat));
        return to_python(r.to_json());
    }, py::arg("p"), py::arg("p_hat"), py::arg("c"), py::arg("c_hat"),
          "Pooled and per-region metrics of T x 9 pressures (N) and contact status.");

    m.def("parameter_counts", [](const std::string& preset) {
        const nn::PiMForceModel model(nn::ModelConfig::from_json({{"preset", preset}}), 0);
        const auto c = model.parameter_counts();
        return py::dict(py::arg("emg") = c.emg, py::arg("hand") = c.hand, py::arg("fusion") = c.fusion,
                        py::arg("total") = c.total());
    }, py::arg("preset") = "desk");

    m.def("synth", [](const std::string& out, std::uint64_t seed, std::vector<std::string> postures,
                      std::optional<double> duration, const std::string& config) {
        commands::SynthOptions o;
        o.out = out;
        o.seed = seed;
        o.postures = std::move(postures);
        o.duration = duration;
        o.config = config;
        nlohmann::json cfg;
        {
            py::gil_scoped_release release;
            cfg = commands::synth(o).to_json();
        }
        return to_python(cfg);
    }, py::arg("out"), py::arg("seed") = 0, py::arg("postures") = std::vector<std::string>{},
          py::arg("duration") = py::none(), py::arg("config") = "");

    m.def("preprocess", [](const std::string& in, const std::string& out, bool materialize,
                           const std::string& scaler_from, const std::string& config) {
        commands::PreprocessOptions o;
        o.in = in;
        o.out = out;
        o.materialize = materialize;
        o.scaler_from = scaler_from;
        o.config = config;
        py::gil_scoped_release release;
        return commands::preprocess(o);
    }, py::arg("in_dir"), py::arg("out"), py::arg("materialize") = false, py::arg("scaler_from") = "",
          py::arg("config") = "");

    m.def("train", [](const std::string& data, const std::string& out, const std::string& preset,
                      std::optional<std::uint64_t> seed, std::optional<std::size_t> epochs, std::optional<double> lr,
                      const std::string& config, const std::string& model) {
        commands::TrainOptions o;
        o.data = data;
        o.out = out;
        o.preset = preset;
        o.seed = seed;
        o.epochs = epochs;
        o.lr = lr;
        o.config = config;
        o.model = model;
        nn::TrainResult r;
        {
            py::gil_scoped_release release;
            r = commands::train(o);
        }
        py::list history;
        for (const auto& s : r.history)
            history.append(py::dict(py::arg("loss") = s.loss, py::arg("classification") = s.classification,
                                    py::arg("regression") = s.regression));
        return history;
    }, py::arg("data"), py::arg("out"), py::arg("preset") = "desk", py::arg("seed") = py::none(),
          py::arg("epochs") = py::none(), py::arg("lr") = py::none(), py::arg("config") = "", py::arg("model") = "");

    m.def("evaluate", [](const std::string& data, const std::string& ckpt, bool teacher_forced) {
        commands::EvalOptions o;
        o.data = data;
        o.ckpt = ckpt;
        o.teacher_forced = teacher_forced;
        eval::EvalReport r;
        {
            py::gil_scoped_release release;
            r = commands::evaluate(o);
        }
        return to_python(r.to_json());
    }, py::arg("data"), py::arg("ckpt"), py::arg("teacher_forced") = false);

    m.def("predict", [](const std::string& data, const std::string& ckpt) {
        std::vector<double> c_hat;
        std::size_t n = 0;
        {
            py::gil_scoped_release release;
            auto loaded = nn::load_checkpoint(ckpt);
            const auto d = pipeline::load_dataset(data);
            const auto scaler = voxel::ScalerStats::from_json(loaded.meta.at("scaler"));
            const double sigma = loaded.meta.contains("train") ? loaded.meta["train"].value("sigma", 1.0) : 1.0;
            c_hat = nn::predict(loaded.model, d.training_set(scaler), sigma);
            n = d.size;
        }
        return make_array({static_cast<py::ssize_t>(n), 9}, c_hat);
    }, py::arg("data"), py::arg("ckpt"), "Contact probabilities, N x 9, for every sample of a dataset.");

    m.def("infer", [](const std::string& ckpt, const std::string& emg, const std::string& pose, const std::string& out,
                      bool detector) {
        commands::InferOptions o;
        o.ckpt = ckpt;
        o.emg = emg;
        o.pose = pose;
        o.out = out;
        o.detector = detector;
        pipeline::Inference r;
        {
            py::gil_scoped_release release;
            r = commands::infer(o);
        }
        const auto n = static_cast<py::ssize_t>(r.timestamps.size());
        return py::dict(py::arg("timestamps") = make_array({n}, r.timestamps),
                        py::arg("c_hat") = make_array({n, 9}, r.c_hat), py::arg("p_hat") = make_array({n, 9}, r.p_hat));
    }, py::arg("ckpt"), py::arg("emg"), py::arg("pose"), py::arg("out") = "", py::arg("detector") = false);
}
