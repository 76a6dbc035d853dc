#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pimforce/common.hpp"
#include "pimforce/handkin.hpp"
#include "pimforce/pressure.hpp"
#include "pimforce/sync.hpp"

namespace pimforce::synthgen {

struct PostureSpec {
    std::string name;
    std::string type;                            // plane, pinch or grasp
    std::array<double, kNumRegions> weights{};  // 0 outside the contact mask
    handkin::GloveAngles angles;                 // prototype pose
    std::array<double, kEmgChannels> emg_weights{};

    bool in_mask(std::size_t region) const { return weights[region] > 0.0; }
};

struct PostureLibrary {
    handkin::GloveAngles rest;
    std::vector<PostureSpec> postures;

    // The library shipped in assets/postures.json, compiled in.
    static const PostureLibrary& builtin();
    static PostureLibrary from_json(const nlohmann::json& j);
    static PostureLibrary load(const std::string& path);
    nlohmann::json to_json() const;

    // Throws InvalidInput for an unknown name.
    const PostureSpec& find(const std::string& name) const;
};

struct SynthConfig {
    std::uint64_t seed = 0;
    std::vector<std::string> postures;  // empty: the whole library in order
    double segment_duration = 20.0;     // seconds per posture
    double transition = 1.0;            // pose change at each segment start

    // Press cycles: raised-cosine ramps around a hold, then a rest.
    double ramp = 0.15;
    double hold_min = 0.8, hold_max = 1.2;
    double rest_min = 0.8, rest_max = 1.4;
    double level_min = 0.4, level_max = 1.0;
    double amplitude = 18.0;  // newtons at level 1 and weight 1

    double emg_floor = 0.02;   // modulation depth at rest
    double emg_gain = 1.0;
    double emg_noise = 0.005;  // additive white noise
    double emg_lead = 0.064;   // sEMG precedes force by this many seconds
    double pose_jitter = 0.02; // radians

    double emg_rate = kEmgRate;
    double pose_rate = kPoseRate;
    double pressure_rate = kPressureRate;

    std::string postures_path;  // empty: builtin library

    void validate() const;
    nlohmann::json to_json() const;
    static SynthConfig from_json(const nlohmann::json& j);
};

struct Cycle {
    double start = 0.0;  // ramp-up begins
    double hold = 0.0;
    double level = 0.0;
};

struct Segment {
    std::string posture;
    double start = 0.0;
    double end = 0.0;
    std::vector<Cycle> cycles;
};

struct Session {
    SynthConfig config;
    sync::TimedStream emg;       // arity 8
    sync::TimedStream pose;      // arity 20, glove angles
    sync::TimedStream pressure;  // arity 9, clipped region pressures
    std::vector<pressure::RawPressureFrame> raw_pressure;
    std::vector<Segment> segments;

    double duration() const;
    // Latent activation in [0, 1].
    double activation(double t) const;
    // Unclipped region pressure of the generative model.
    std::array<double, kNumRegions> region_pressure(double t) const;
    const std::string& posture_at(double t) const;
    nlohmann::json latents_json() const;

    const PostureLibrary& library() const { return *library_; }

private:
    friend Session generate_session(const SynthConfig& cfg);
    std::shared_ptr<const PostureLibrary> library_;
    double ramp_ = 0.15;
    double amplitude_ = 18.0;
};

// Deterministic given cfg.seed. Throws InvalidInput on unknown postures.
Session generate_session(const SynthConfig& cfg);

}  // namespace pimforce::synthgen
