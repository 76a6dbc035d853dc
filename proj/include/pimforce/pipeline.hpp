#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pimforce/handkin.hpp"
#include "pimforce/nn/train.hpp"
#include "pimforce/pressure.hpp"
#include "pimforce/semgproc.hpp"
#include "pimforce/sync.hpp"
#include "pimforce/synthgen.hpp"
#include "pimforce/voxel.hpp"

namespace pimforce::pipeline {

struct PipelineConfig {
    std::size_t stride = semgproc::kDefaultStride;
    semgproc::StftConfig stft;
    double sigma = 1.0;
    // Write the dense N x 21 x 48^3 heatmap tensor (f32). Otherwise only the
    // joints are stored and training voxelizes on the fly.
    bool materialize_heatmaps = false;
    // When set, raw sensor values are conductances mapped through the curve.
    std::optional<pressure::CalibrationCurve> calibration;
    // When set, used instead of fitting the scaler on this session.
    std::optional<voxel::ScalerStats> scaler;
    std::string skeleton_path;
    std::string region_map_path;

    nlohmann::json to_json() const;
    static PipelineConfig from_json(const nlohmann::json& j);
};

// The three recorded streams of one session as written to disk.
struct RawSession {
    sync::TimedStream emg;   // arity 8
    sync::TimedStream pose;  // arity 20, glove angles
    std::vector<pressure::RawPressureFrame> pressure;
    std::optional<nlohmann::json> latents;  // synthetic sessions only
};

inline constexpr const char* kEmgFile = "emg.csv";
inline constexpr const char* kPoseFile = "pose.csv";
inline constexpr const char* kPressureFile = "pressure.csv";
inline constexpr const char* kLatentsFile = "latents.json";

void save_session(const std::string& dir, const synthgen::Session& s);
RawSession load_session(const std::string& dir);
RawSession to_raw(const synthgen::Session& s);

struct Dataset {
    std::size_t size = 0;
    std::vector<double> timestamps;  // N
    std::vector<double> emg;         // N x 8 x 32 x 64
    std::vector<double> angles;      // N x 20
    std::vector<double> rotations;   // N x 15 x 3
    std::vector<double> joints;      // N x 21 x 3, canonical frame
    std::vector<double> pressure;    // N x 9
    std::vector<double> labels;      // N x 9
    std::vector<std::string> tags;   // N posture names, or empty
    voxel::ScalerStats scaler;
    std::size_t out_of_range = 0;    // samples extrapolated past the grid range

    // Network view with joints mapped to grid coordinates by `s`.
    nn::TrainingSet training_set(const voxel::ScalerStats& s) const;
    nn::TrainingSet training_set() const { return training_set(scaler); }
};

// Calibration, aggregation, clip/floor, sync, STFT, FK and scaling.
Dataset preprocess(const RawSession& raw, const PipelineConfig& cfg);

// Writes E, angles, rotations, joints, P, C, timestamps (and H when
// cfg.materialize_heatmaps) plus manifest.json. `extra` is merged into the
// manifest.
void save_dataset(const std::string& dir, const Dataset& d, const PipelineConfig& cfg,
                  const nlohmann::json& extra = nlohmann::json::object());
Dataset load_dataset(const std::string& dir);
nlohmann::json load_manifest(const std::string& dir);

// How the pose stream passed to `infer` is encoded.
enum class PoseKind {
    Glove,      // 20 glove angles per tick, mapped through FK
    Canonical,  // 21 x 3 joints already in the canonical frame; checked
    Detector,   // 21 x 3 joints in an arbitrary frame; canonicalized
};

struct Inference {
    std::vector<double> timestamps;  // window end times
    std::vector<double> c_hat;       // N x 9 contact probabilities
    std::vector<double> p_hat;       // N x 9 newtons
};

// Frames the sEMG stream over its overlap with the pose stream and runs the
// model per window. Glove angles are interpolated linearly at each anchor,
// joint positions take the nearest tick so canonical poses stay canonical.
// Throws InvalidInput when a Canonical pose fails the canonical-frame check.
Inference infer(nn::PiMForceModel& model, const voxel::ScalerStats& scaler, const sync::TimedStream& emg,
                const sync::TimedStream& pose, PoseKind kind, const PipelineConfig& cfg = {});

// Pose JSON: {"timestamps": [...], "angles": [[20]...]} or
// {"timestamps": [...], "joints": [[21][3]...]} (rows of 63 also accepted).
sync::TimedStream read_pose_json(const std::string& path);

void write_inference_csv(const std::string& path, const Inference& r);

}  // namespace pimforce::pipeline
