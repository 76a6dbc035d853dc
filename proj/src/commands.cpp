#include "pimforce/commands.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "pimforce/io/csv.hpp"
#include "pimforce/nn/checkpoint.hpp"

namespace pimforce::commands {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path);
    os << text;
}

}  // namespace

json read_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open config " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw InvalidInput(path + ": " + e.what());
    }
}

synthgen::SynthConfig synth(const SynthOptions& o, std::ostream* log) {
    json j = read_config(o.config);
    if (o.seed) j["seed"] = *o.seed;
    if (o.duration) j["segment_duration"] = *o.duration;
    if (!o.postures.empty()) j["postures"] = o.postures;
    const auto cfg = synthgen::SynthConfig::from_json(j);
    const auto session = synthgen::generate_session(cfg);
    pipeline::save_session(o.out, session);
    write_text((fs::path(o.out) / "synth.json").string(), cfg.to_json().dump(2) + "\n");
    if (log)
        *log << "synth: " << session.emg.size() << " sEMG, " << session.pose.size() << " pose, "
             << session.raw_pressure.size() << " pressure ticks -> " << o.out << "\n";
    return cfg;
}

std::size_t preprocess(const PreprocessOptions& o, std::ostream* log) {
    json j = read_config(o.config);
    if (o.materialize) j["materialize_heatmaps"] = true;
    if (o.stride) j["stride"] = *o.stride;
    if (!o.scaler_from.empty()) j["scaler"] = pipeline::load_manifest(o.scaler_from).at("scaler");
    const auto cfg = pipeline::PipelineConfig::from_json(j);
    const auto raw = pipeline::load_session(o.in);
    const auto d = pipeline::preprocess(raw, cfg);
    json extra = {{"source", o.in}};
    if (raw.latents && raw.latents->contains("config")) extra["seed"] = raw.latents->at("config").value("seed", 0);
    pipeline::save_dataset(o.out, d, cfg, extra);
    if (log)
        *log << "preprocess: " << d.size << " samples (" << d.out_of_range << " out of grid range) -> " << o.out
             << "\n";
    return d.size;
}

nn::TrainResult train(const TrainOptions& o, std::ostream* log) {
    json tj = read_config(o.config);
    if (o.seed) tj["seed"] = *o.seed;
    if (o.epochs) tj["epochs"] = *o.epochs;
    if (o.lr) tj["lr"] = *o.lr;
    const auto tcfg = nn::TrainConfig::from_json(tj);
    json mj = read_config(o.model);
    if (!o.preset.empty()) mj["preset"] = o.preset;
    const auto mcfg = nn::ModelConfig::from_json(mj);

    const auto d = pipeline::load_dataset(o.data);
    const auto set = d.training_set();
    nn::PiMForceModel model(mcfg, tcfg.seed);
    const auto counts = model.parameter_counts();
    if (log)
        *log << "train: " << d.size << " samples, " << counts.total() << " parameters (emg " << counts.emg
             << ", hand " << counts.hand << ", fusion " << counts.fusion << ")\n";
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = nn::train(model, set, tcfg, [&](std::size_t e, const nn::EpochStats& s) {
        if (!log) return;
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        char line[160];
        std::snprintf(line, sizeof line, "epoch %zu  loss %.6f  L_c %.6f  L_r %.4f  %.0fs\n", e + 1, s.loss,
                      s.classification, s.regression, secs);
        *log << line << std::flush;
    });
    json history = json::array();
    for (const auto& s : result.history)
        history.push_back({{"loss", s.loss}, {"classification", s.classification}, {"regression", s.regression}});
    const json meta = {{"train", tcfg.to_json()},
                       {"history", history},
                       {"scaler", d.scaler.to_json()},
                       {"seed", tcfg.seed},
                       {"dataset_samples", d.size}};
    nn::save_checkpoint(o.out, model, meta);
    if (log) *log << "train: checkpoint -> " << o.out << "\n";
    return result;
}

eval::EvalReport evaluate(const EvalOptions& o) {
    if (!fs::exists(o.ckpt)) throw InvalidInput("checkpoint not found: " + o.ckpt);
    auto loaded = nn::load_checkpoint(o.ckpt);
    const auto d = pipeline::load_dataset(o.data);
    const auto scaler = voxel::ScalerStats::from_json(loaded.meta.at("scaler"));
    const double sigma = loaded.meta.contains("train") ? loaded.meta["train"].value("sigma", 1.0) : 1.0;
    const double p_max = loaded.model.config().p_max;
    std::vector<double> c_hat, p_hat;
    if (o.teacher_forced) {
        c_hat = d.labels;
        p_hat = d.pressure;
    } else {
        c_hat = nn::predict(loaded.model, d.training_set(scaler), sigma);
        p_hat.resize(c_hat.size());
        for (std::size_t i = 0; i < c_hat.size(); ++i) p_hat[i] = 2.0 * p_max * std::max(0.0, c_hat[i] - 0.5);
    }
    const auto report = eval::evaluate(d.pressure, p_hat, eval::threshold(d.labels), eval::threshold(c_hat),
                                       d.tags.empty() ? nullptr : &d.tags, p_max);
    if (!o.out.empty()) write_text(o.out, report.to_json().dump(2) + "\n");
    return report;
}

pipeline::Inference infer(const InferOptions& o, std::ostream* log) {
    if (o.canonical && o.detector) throw InvalidInput("infer: canonical and detector are exclusive");
    if (!fs::exists(o.ckpt)) throw InvalidInput("checkpoint not found: " + o.ckpt);
    auto loaded = nn::load_checkpoint(o.ckpt);
    auto pj = read_config(o.config);
    if (!pj.contains("sigma") && loaded.meta.contains("train")) pj["sigma"] = loaded.meta["train"].value("sigma", 1.0);
    const auto cfg = pipeline::PipelineConfig::from_json(pj);
    const auto scaler = voxel::ScalerStats::from_json(loaded.meta.at("scaler"));
    const auto emg = io::read_timed_csv(o.emg, kEmgChannels);
    const auto pose =
        fs::path(o.pose).extension() == ".json" ? pipeline::read_pose_json(o.pose) : io::read_timed_csv(o.pose, 0);
    pipeline::PoseKind kind;
    if (pose.arity == kNumGloveAngles) {
        if (o.detector) throw InvalidInput("infer: detector poses need 63 joint columns, got glove angles");
        kind = pipeline::PoseKind::Glove;
    } else if (pose.arity == kNumJoints * 3) {
        kind = o.detector ? pipeline::PoseKind::Detector : pipeline::PoseKind::Canonical;
    } else {
        throw ShapeError("infer: pose has " + std::to_string(pose.arity) + " columns, expected 20 angles or 63 joints");
    }
    const auto r = pipeline::infer(loaded.model, scaler, emg, pose, kind, cfg);
    if (!o.out.empty()) pipeline::write_inference_csv(o.out, r);
    if (log) *log << "infer: " << r.timestamps.size() << " frames -> " << o.out << "\n";
    return r;
}

}  // namespace pimforce::commands
