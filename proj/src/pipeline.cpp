#include "pimforce/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "pimforce/io/csv.hpp"
#include "pimforce/io/tensor_file.hpp"

namespace pimforce::pipeline {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kEmgSize = kEmgChannels * kStftFrames * kStftBins;

const char* scale_name(semgproc::SpectrumScale s) {
    switch (s) {
        case semgproc::SpectrumScale::Power: return "power";
        case semgproc::SpectrumScale::Log: return "log";
        default: return "magnitude";
    }
}

std::string join(const std::string& dir, const char* file) { return (fs::path(dir) / file).string(); }

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidInput(path + ": " + e.what());
    }
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path);
    os << j.dump(2) << '\n';
}

std::vector<std::uint32_t> dims(std::initializer_list<std::size_t> d) {
    std::vector<std::uint32_t> out;
    for (auto v : d) out.push_back(static_cast<std::uint32_t>(v));
    return out;
}

std::vector<double> load_checked(const std::string& dir, const char* file, std::vector<std::uint32_t> expect) {
    auto t = io::load_tensor(join(dir, file));
    if (t.dims != expect) throw ShapeError(std::string(file) + ": unexpected shape");
    return std::move(t.values);
}

std::string tag_at(const nlohmann::json& latents, double t) {
    const auto& segs = latents.at("segments");
    if (segs.empty()) throw InvalidInput("latents: no segments");
    for (const auto& s : segs)
        if (t < s.at("end").get<double>()) return s.at("posture").get<std::string>();
    return segs.back().at("posture").get<std::string>();
}

}  // namespace

nlohmann::json PipelineConfig::to_json() const {
    nlohmann::json j = {{"stride", stride},
                        {"stft",
                         {{"scale", scale_name(stft.scale)},
                          {"bins", stft.bins == semgproc::BinSelection::FirstBins ? "first" : "cutoff"},
                          {"cutoff_hz", stft.cutoff_hz},
                          {"remove_mean", stft.remove_mean},
                          {"log_epsilon", stft.log_epsilon}}},
                        {"sigma", sigma},
                        {"materialize_heatmaps", materialize_heatmaps},
                        {"skeleton_path", skeleton_path},
                        {"region_map_path", region_map_path}};
    j["calibration"] = calibration ? calibration->to_json() : nlohmann::json(nullptr);
    j["scaler"] = scaler ? scaler->to_json() : nlohmann::json(nullptr);
    return j;
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
    PipelineConfig c;
    try {
        if (j.contains("stride")) j.at("stride").get_to(c.stride);
        if (j.contains("sigma")) j.at("sigma").get_to(c.sigma);
        if (j.contains("materialize_heatmaps")) j.at("materialize_heatmaps").get_to(c.materialize_heatmaps);
        if (j.contains("skeleton_path")) j.at("skeleton_path").get_to(c.skeleton_path);
        if (j.contains("region_map_path")) j.at("region_map_path").get_to(c.region_map_path);
        if (j.contains("stft")) {
            const auto& s = j.at("stft");
            const std::string scale = s.value("scale", std::string("magnitude"));
            if (scale == "magnitude")
                c.stft.scale = semgproc::SpectrumScale::Magnitude;
            else if (scale == "power")
                c.stft.scale = semgproc::SpectrumScale::Power;
            else if (scale == "log")
                c.stft.scale = semgproc::SpectrumScale::Log;
            else
                throw InvalidInput("pipeline config: unknown stft scale '" + scale + "'");
            const std::string bins = s.value("bins", std::string("first"));
            if (bins == "first")
                c.stft.bins = semgproc::BinSelection::FirstBins;
            else if (bins == "cutoff")
                c.stft.bins = semgproc::BinSelection::BelowCutoff;
            else
                throw InvalidInput("pipeline config: unknown stft bins '" + bins + "'");
            c.stft.cutoff_hz = s.value("cutoff_hz", c.stft.cutoff_hz);
            c.stft.remove_mean = s.value("remove_mean", c.stft.remove_mean);
            c.stft.log_epsilon = s.value("log_epsilon", c.stft.log_epsilon);
        }
        if (j.contains("calibration") && !j.at("calibration").is_null())
            c.calibration = pressure::CalibrationCurve::from_json(j.at("calibration"));
        if (j.contains("scaler") && !j.at("scaler").is_null()) c.scaler = voxel::ScalerStats::from_json(j.at("scaler"));
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("pipeline config: ") + e.what());
    }
    if (c.stride == 0) throw InvalidInput("pipeline config: stride must be positive");
    if (!(c.sigma > 0.0)) throw InvalidInput("pipeline config: sigma must be positive");
    return c;
}

void save_session(const std::string& dir, const synthgen::Session& s) {
    fs::create_directories(dir);
    io::write_timed_csv(join(dir, kEmgFile), s.emg, io::numbered("ch", kEmgChannels));
    io::write_timed_csv(join(dir, kPoseFile), s.pose, io::numbered("a", kNumGloveAngles));
    io::write_raw_pressure_csv(join(dir, kPressureFile), s.raw_pressure);
    write_json(join(dir, kLatentsFile), s.latents_json());
}

RawSession to_raw(const synthgen::Session& s) {
    RawSession r;
    r.emg = s.emg;
    r.pose = s.pose;
    r.pressure = s.raw_pressure;
    r.latents = s.latents_json();
    return r;
}

RawSession load_session(const std::string& dir) {
    for (const char* f : {kEmgFile, kPoseFile, kPressureFile})
        if (!fs::exists(join(dir, f))) throw InvalidInput("missing stream " + join(dir, f));
    RawSession r;
    r.emg = io::read_timed_csv(join(dir, kEmgFile), kEmgChannels);
    r.pose = io::read_timed_csv(join(dir, kPoseFile), kNumGloveAngles);
    r.pressure = io::read_raw_pressure_csv(join(dir, kPressureFile));
    if (fs::exists(join(dir, kLatentsFile))) r.latents = read_json(join(dir, kLatentsFile));
    return r;
}

Dataset preprocess(const RawSession& raw, const PipelineConfig& cfg) {
    const auto skel = cfg.skeleton_path.empty() ? handkin::HandSkeleton::reference()
                                                : handkin::HandSkeleton::load(cfg.skeleton_path);
    const auto map = cfg.region_map_path.empty() ? pressure::RegionMap::reference()
                                                 : pressure::RegionMap::load(cfg.region_map_path);

    sync::TimedStream regions;
    regions.arity = kNumRegions;
    for (auto frame : raw.pressure) {
        if (cfg.calibration) {
            for (auto& v : frame.glove) v = cfg.calibration->force(v);
            for (auto& v : frame.fsr) v = cfg.calibration->force(v);
        }
        const auto p = pressure::clip_floor(pressure::aggregate_regions(frame, map));
        regions.push(frame.timestamp, p.values);
    }

    sync::FramingConfig framing;
    framing.stride = cfg.stride;
    const auto samples = sync::assemble_dataset(raw.emg, raw.pose, regions, framing);
    if (samples.empty()) throw InvalidInput("preprocess: no aligned samples (streams do not overlap for one window)");

    Dataset d;
    d.size = samples.size();
    d.emg.reserve(d.size * kEmgSize);
    std::vector<handkin::JointSet> sets;
    sets.reserve(d.size);
    for (const auto& s : samples) {
        d.timestamps.push_back(s.timestamp);
        const auto spec = semgproc::stft(s.window, cfg.stft);
        d.emg.insert(d.emg.end(), spec.values.begin(), spec.values.end());
        d.angles.insert(d.angles.end(), s.angles.values.begin(), s.angles.values.end());
        for (const auto& r : s.rotations.theta) d.rotations.insert(d.rotations.end(), r.begin(), r.end());
        sets.push_back(handkin::forward_kinematics(s.rotations, skel));
        for (const auto& j : sets.back().joints) d.joints.insert(d.joints.end(), j.begin(), j.end());
        for (std::size_t r = 0; r < kNumRegions; ++r) {
            d.pressure.push_back(s.pressure.values[r]);
            d.labels.push_back(s.labels.present[r] ? 1.0 : 0.0);
        }
        if (raw.latents) d.tags.push_back(tag_at(*raw.latents, s.timestamp));
    }
    d.scaler = cfg.scaler ? *cfg.scaler : voxel::fit_scaler(sets);
    for (const auto& js : sets) d.out_of_range += voxel::scale_joints(js, d.scaler).out_of_range;
    return d;
}

nn::TrainingSet Dataset::training_set(const voxel::ScalerStats& s) const {
    nn::TrainingSet t;
    t.size = size;
    t.emg = emg;
    t.pressure = pressure;
    t.labels = labels;
    t.joints.reserve(joints.size());
    for (std::size_t i = 0; i < size; ++i) {
        handkin::JointSet js;
        for (std::size_t k = 0; k < kNumJoints; ++k)
            for (std::size_t a = 0; a < 3; ++a) js.joints[k][a] = joints[(i * kNumJoints + k) * 3 + a];
        const auto g = voxel::scale_joints(js, s).joints;
        for (const auto& j : g.joints) t.joints.insert(t.joints.end(), j.begin(), j.end());
    }
    return t;
}

void save_dataset(const std::string& dir, const Dataset& d, const PipelineConfig& cfg, const nlohmann::json& extra) {
    fs::create_directories(dir);
    const std::size_t n = d.size;
    io::save_tensor(join(dir, "E.pimf"), dims({n, kEmgChannels, kStftFrames, kStftBins}), d.emg, io::DType::F64);
    io::save_tensor(join(dir, "angles.pimf"), dims({n, kNumGloveAngles}), d.angles);
    io::save_tensor(join(dir, "theta.pimf"), dims({n, kNumArticulated, 3}), d.rotations);
    io::save_tensor(join(dir, "joints.pimf"), dims({n, kNumJoints, 3}), d.joints);
    io::save_tensor(join(dir, "P.pimf"), dims({n, kNumRegions}), d.pressure);
    io::save_tensor(join(dir, "C.pimf"), dims({n, kNumRegions}), d.labels);
    io::save_tensor(join(dir, "timestamps.pimf"), dims({n}), d.timestamps);
    if (cfg.materialize_heatmaps) {
        const auto ts = d.training_set();
        io::TensorWriter w(join(dir, "H.pimf"), dims({n, kNumJoints, kGrid, kGrid, kGrid}), io::DType::F32);
        std::vector<float> vol(kNumJoints * voxel::HeatmapVolume::kChannelSize);
        for (std::size_t i = 0; i < n; ++i) {
            handkin::JointSet g;
            for (std::size_t k = 0; k < kNumJoints; ++k)
                for (std::size_t a = 0; a < 3; ++a) g.joints[k][a] = ts.joints[(i * kNumJoints + k) * 3 + a];
            voxel::voxelize_into<float>(g, cfg.sigma, vol);
            w.append(std::span<const float>(vol));
        }
        w.close();
    }
    nlohmann::json m = extra;
    m["samples"] = n;
    m["scaler"] = d.scaler.to_json();
    m["out_of_range"] = d.out_of_range;
    m["heatmaps"] = cfg.materialize_heatmaps ? "materialized" : "on_the_fly";
    m["sigma"] = cfg.sigma;
    m["pipeline"] = cfg.to_json();
    m["shapes"] = {{"E", {n, kEmgChannels, kStftFrames, kStftBins}},
                   {"H", {n, kNumJoints, kGrid, kGrid, kGrid}},
                   {"theta", {n, kNumArticulated, 3}},
                   {"P", {n, kNumRegions}},
                   {"C", {n, kNumRegions}}};
    if (!d.tags.empty()) m["tags"] = d.tags;
    write_json(join(dir, "manifest.json"), m);
}

nlohmann::json load_manifest(const std::string& dir) {
    const auto path = join(dir, "manifest.json");
    if (!fs::exists(path)) throw InvalidInput("not a dataset directory (no manifest.json): " + dir);
    return read_json(path);
}

Dataset load_dataset(const std::string& dir) {
    const auto m = load_manifest(dir);
    Dataset d;
    try {
        d.size = m.at("samples").get<std::size_t>();
        d.scaler = voxel::ScalerStats::from_json(m.at("scaler"));
        d.out_of_range = m.value("out_of_range", std::size_t{0});
        if (m.contains("tags")) d.tags = m.at("tags").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(dir + "/manifest.json: " + e.what());
    }
    const std::size_t n = d.size;
    d.emg = load_checked(dir, "E.pimf", dims({n, kEmgChannels, kStftFrames, kStftBins}));
    d.angles = load_checked(dir, "angles.pimf", dims({n, kNumGloveAngles}));
    d.rotations = load_checked(dir, "theta.pimf", dims({n, kNumArticulated, 3}));
    d.joints = load_checked(dir, "joints.pimf", dims({n, kNumJoints, 3}));
    d.pressure = load_checked(dir, "P.pimf", dims({n, kNumRegions}));
    d.labels = load_checked(dir, "C.pimf", dims({n, kNumRegions}));
    d.timestamps = load_checked(dir, "timestamps.pimf", dims({n}));
    if (!d.tags.empty() && d.tags.size() != n) throw ShapeError("manifest: tag count does not match samples");
    return d;
}

Inference infer(nn::PiMForceModel& model, const voxel::ScalerStats& scaler, const sync::TimedStream& emg,
                const sync::TimedStream& pose, PoseKind kind, const PipelineConfig& cfg) {
    emg.validate();
    pose.validate();
    if (emg.arity != kEmgChannels) throw ShapeError("infer: sEMG stream must have 8 channels");
    const std::size_t want = kind == PoseKind::Glove ? kNumGloveAngles : kNumJoints * 3;
    if (pose.arity != want)
        throw ShapeError("infer: pose stream has " + std::to_string(pose.arity) + " columns, expected " +
                         std::to_string(want));
    if (cfg.stride == 0) throw InvalidInput("infer: stride must be positive");
    if (emg.size() == 0 || pose.size() == 0) throw InvalidInput("infer: empty stream");
    const auto skel = cfg.skeleton_path.empty() ? handkin::HandSkeleton::reference()
                                                : handkin::HandSkeleton::load(cfg.skeleton_path);

    const double lo = std::max(emg.timestamps.front(), pose.timestamps.front());
    const double hi = std::min(emg.timestamps.back(), pose.timestamps.back());
    if (!(hi > lo)) throw InvalidInput("infer: streams do not overlap in time");
    const auto first = static_cast<std::size_t>(
        std::lower_bound(emg.timestamps.begin(), emg.timestamps.end(), lo) - emg.timestamps.begin());
    std::vector<std::size_t> starts;
    std::vector<double> anchors;
    for (std::size_t s = first; s + kEmgWindow <= emg.size(); s += cfg.stride) {
        const double end = emg.timestamps[s + kEmgWindow - 1];
        if (end > hi) break;
        starts.push_back(s);
        anchors.push_back(end);
    }
    Inference r;
    if (starts.empty()) return r;

    const auto pose_at = kind == PoseKind::Glove ? sync::linear_resample(pose, anchors)
                                                 : sync::nearest_resample(pose, anchors);
    const auto es = sync::to_emg_stream(emg);
    nn::TrainingSet t;
    t.size = starts.size();
    t.pressure.assign(t.size * kNumRegions, 0.0);
    t.labels.assign(t.size * kNumRegions, 0.0);
    for (std::size_t k = 0; k < starts.size(); ++k) {
        const auto spec = semgproc::stft(semgproc::window_at(es, starts[k]), cfg.stft);
        t.emg.insert(t.emg.end(), spec.values.begin(), spec.values.end());
        const auto row = pose_at.row(k);
        handkin::JointSet js;
        if (kind == PoseKind::Glove) {
            handkin::GloveAngles a;
            std::copy(row.begin(), row.end(), a.values.begin());
            js = handkin::forward_kinematics(handkin::glove_to_rotations(a), skel);
        } else {
            for (std::size_t j = 0; j < kNumJoints; ++j)
                for (std::size_t a = 0; a < 3; ++a) js.joints[j][a] = row[j * 3 + a];
            if (kind == PoseKind::Detector)
                js = handkin::canonicalize(js, skel);
            else if (!handkin::is_canonical(js, skel))
                throw InvalidInput("infer: pose at t=" + std::to_string(anchors[k]) +
                                   " is not canonical; pass it as a detector pose");
        }
        const auto g = voxel::scale_joints(js, scaler).joints;
        for (const auto& j : g.joints) t.joints.insert(t.joints.end(), j.begin(), j.end());
    }
    r.timestamps = anchors;
    r.c_hat = nn::predict(model, t, cfg.sigma);
    const double p_max = model.config().p_max;
    r.p_hat.resize(r.c_hat.size());
    for (std::size_t i = 0; i < r.c_hat.size(); ++i) r.p_hat[i] = 2.0 * p_max * std::max(0.0, r.c_hat[i] - 0.5);
    return r;
}

sync::TimedStream read_pose_json(const std::string& path) {
    const auto j = read_json(path);
    sync::TimedStream s;
    try {
        const auto ts = j.at("timestamps").get<std::vector<double>>();
        const bool angles = j.contains("angles");
        const auto& rows = angles ? j.at("angles") : j.at("joints");
        if (rows.size() != ts.size()) throw InvalidInput(path + ": timestamps and pose rows differ in length");
        s.arity = angles ? kNumGloveAngles : kNumJoints * 3;
        std::vector<double> flat;
        for (std::size_t i = 0; i < ts.size(); ++i) {
            flat.clear();
            for (const auto& v : rows[i]) {
                if (v.is_array())
                    for (const auto& x : v) flat.push_back(x.get<double>());
                else
                    flat.push_back(v.get<double>());
            }
            if (flat.size() != s.arity)
                throw InvalidInput(path + ": pose row " + std::to_string(i) + " has " + std::to_string(flat.size()) +
                                   " values, expected " + std::to_string(s.arity));
            s.push(ts[i], flat);
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(path + ": " + e.what());
    }
    return s;
}

void write_inference_csv(const std::string& path, const Inference& r) {
    sync::TimedStream s;
    s.arity = 2 * kNumRegions;
    std::vector<double> row(s.arity);
    for (std::size_t i = 0; i < r.timestamps.size(); ++i) {
        std::copy_n(&r.c_hat[i * kNumRegions], kNumRegions, row.begin());
        std::copy_n(&r.p_hat[i * kNumRegions], kNumRegions, row.begin() + kNumRegions);
        s.push(r.timestamps[i], row);
    }
    auto cols = io::numbered("C", kNumRegions);
    for (auto& c : io::numbered("P", kNumRegions)) cols.push_back(c);
    io::write_timed_csv(path, s, cols);
}

}  // namespace pimforce::pipeline
