#include "pimforce/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "pimforce/postures_asset.hpp"
#include "pimforce/rng.hpp"

namespace pimforce::synthgen {

namespace {

constexpr double kPi = std::numbers::pi;
// Neighbouring sensors of a region read this fraction of the region value.
constexpr double kNeighbourShare = 0.6;

double smoothstep(double u) {
    u = std::clamp(u, 0.0, 1.0);
    return u * u * (3.0 - 2.0 * u);
}

double raised_cosine(double u) { return 0.5 - 0.5 * std::cos(kPi * std::clamp(u, 0.0, 1.0)); }

std::size_t tick_count(double duration, double rate) {
    return static_cast<std::size_t>(std::floor(duration * rate + 1e-9));
}

// Second-order band-pass (constant peak gain), Direct Form I.
struct Biquad {
    double b0, b1, b2, a1, a2;
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;

    Biquad(double f0, double q, double fs) {
        const double w = 2.0 * kPi * f0 / fs;
        const double alpha = std::sin(w) / (2.0 * q);
        const double a0 = 1.0 + alpha;
        b0 = alpha / a0;
        b1 = 0.0;
        b2 = -alpha / a0;
        a1 = -2.0 * std::cos(w) / a0;
        a2 = (1.0 - alpha) / a0;
    }
    double operator()(double x) {
        const double y = b0 * x + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = x;
        y2 = y1;
        y1 = y;
        return y;
    }
};

}  // namespace

const PostureLibrary& PostureLibrary::builtin() {
    static const PostureLibrary lib = from_json(nlohmann::json::parse(kPosturesJson));
    return lib;
}

PostureLibrary PostureLibrary::from_json(const nlohmann::json& j) {
    PostureLibrary lib;
    try {
        const auto rest = j.at("rest_angles").get<std::vector<double>>();
        if (rest.size() != kNumGloveAngles) throw InvalidInput("postures: rest_angles needs 20 values");
        std::copy(rest.begin(), rest.end(), lib.rest.values.begin());
        for (const auto& p : j.at("postures")) {
            PostureSpec s;
            s.name = p.at("name").get<std::string>();
            s.type = p.value("type", std::string("grasp"));
            for (const auto& [region, w] : p.at("regions").items()) {
                const auto& names = pressure::region_names();
                auto it = std::find(names.begin(), names.end(), region);
                if (it == names.end()) throw InvalidInput("postures: unknown region '" + region + "' in " + s.name);
                const double v = w.get<double>();
                if (!(v > 0.0 && v <= 1.0)) throw InvalidInput("postures: region weight outside (0, 1] in " + s.name);
                s.weights[static_cast<std::size_t>(it - names.begin())] = v;
            }
            const auto a = p.at("angles").get<std::vector<double>>();
            if (a.size() != kNumGloveAngles) throw InvalidInput("postures: " + s.name + " needs 20 angles");
            std::copy(a.begin(), a.end(), s.angles.values.begin());
            const auto e = p.at("emg_weights").get<std::vector<double>>();
            if (e.size() != kEmgChannels) throw InvalidInput("postures: " + s.name + " needs 8 emg weights");
            std::copy(e.begin(), e.end(), s.emg_weights.begin());
            lib.postures.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("postures: ") + e.what());
    }
    if (lib.postures.empty()) throw InvalidInput("postures: library is empty");
    return lib;
}

PostureLibrary PostureLibrary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("postures: cannot open " + path);
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidInput("postures: " + path + ": " + e.what());
    }
}

nlohmann::json PostureLibrary::to_json() const {
    nlohmann::json j;
    j["rest_angles"] = rest.values;
    j["postures"] = nlohmann::json::array();
    for (const auto& p : postures) {
        nlohmann::json regions = nlohmann::json::object();
        for (std::size_t r = 0; r < kNumRegions; ++r)
            if (p.in_mask(r)) regions[pressure::region_names()[r]] = p.weights[r];
        j["postures"].push_back(
            {{"name", p.name}, {"type", p.type}, {"regions", regions}, {"angles", p.angles.values},
             {"emg_weights", p.emg_weights}});
    }
    return j;
}

const PostureSpec& PostureLibrary::find(const std::string& name) const {
    for (const auto& p : postures)
        if (p.name == name) return p;
    throw InvalidInput("unknown posture '" + name + "'");
}

void SynthConfig::validate() const {
    auto positive = [](double v, const char* what) {
        if (!(v > 0.0) || !std::isfinite(v)) throw InvalidInput(std::string("synth config: ") + what + " must be positive");
    };
    positive(segment_duration, "segment_duration");
    positive(ramp, "ramp");
    positive(amplitude, "amplitude");
    positive(emg_rate, "emg_rate");
    positive(pose_rate, "pose_rate");
    positive(pressure_rate, "pressure_rate");
    if (transition < 0.0 || transition >= segment_duration)
        throw InvalidInput("synth config: transition must lie in [0, segment_duration)");
    if (hold_min < 0.0 || hold_max < hold_min || rest_min < 0.0 || rest_max < rest_min)
        throw InvalidInput("synth config: hold/rest ranges are inverted or negative");
    if (level_min < 0.0 || level_max > 1.0 || level_max < level_min)
        throw InvalidInput("synth config: levels must satisfy 0 <= min <= max <= 1");
    if (emg_floor < 0.0 || emg_gain < 0.0 || emg_noise < 0.0 || pose_jitter < 0.0 || emg_lead < 0.0)
        throw InvalidInput("synth config: noise and gain terms must be non-negative");
}

nlohmann::json SynthConfig::to_json() const {
    return {{"seed", seed},
            {"postures", postures},
            {"segment_duration", segment_duration},
            {"transition", transition},
            {"ramp", ramp},
            {"hold_min", hold_min},
            {"hold_max", hold_max},
            {"rest_min", rest_min},
            {"rest_max", rest_max},
            {"level_min", level_min},
            {"level_max", level_max},
            {"amplitude", amplitude},
            {"emg_floor", emg_floor},
            {"emg_gain", emg_gain},
            {"emg_noise", emg_noise},
            {"emg_lead", emg_lead},
            {"pose_jitter", pose_jitter},
            {"emg_rate", emg_rate},
            {"pose_rate", pose_rate},
            {"pressure_rate", pressure_rate},
            {"postures_path", postures_path}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
    SynthConfig c;
    auto get = [&j](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    try {
        get("seed", c.seed);
        get("postures", c.postures);
        get("segment_duration", c.segment_duration);
        get("transition", c.transition);
        get("ramp", c.ramp);
        get("hold_min", c.hold_min);
        get("hold_max", c.hold_max);
        get("rest_min", c.rest_min);
        get("rest_max", c.rest_max);
        get("level_min", c.level_min);
        get("level_max", c.level_max);
        get("amplitude", c.amplitude);
        get("emg_floor", c.emg_floor);
        get("emg_gain", c.emg_gain);
        get("emg_noise", c.emg_noise);
        get("emg_lead", c.emg_lead);
        get("pose_jitter", c.pose_jitter);
        get("emg_rate", c.emg_rate);
        get("pose_rate", c.pose_rate);
        get("pressure_rate", c.pressure_rate);
        get("postures_path", c.postures_path);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("synth config: ") + e.what());
    }
    c.validate();
    return c;
}

double Session::duration() const { return segments.empty() ? 0.0 : segments.back().end; }

namespace {

const Segment* segment_at(const std::vector<Segment>& segs, double t) {
    for (const auto& s : segs)
        if (t < s.end) return &s;
    return segs.empty() ? nullptr : &segs.back();
}

}  // namespace

double Session::activation(double t) const {
    const Segment* s = segment_at(segments, t);
    if (!s) return 0.0;
    for (const auto& c : s->cycles) {
        const double u = t - c.start;
        if (u < 0.0) break;
        if (u < ramp_) return c.level * raised_cosine(u / ramp_);
        if (u < ramp_ + c.hold) return c.level;
        if (u < 2.0 * ramp_ + c.hold) return c.level * raised_cosine((2.0 * ramp_ + c.hold - u) / ramp_);
    }
    return 0.0;
}

std::array<double, kNumRegions> Session::region_pressure(double t) const {
    std::array<double, kNumRegions> out{};
    const Segment* s = segment_at(segments, t);
    if (!s) return out;
    const PostureSpec& p = library_->find(s->posture);
    const double a = activation(t);
    for (std::size_t r = 0; r < kNumRegions; ++r) out[r] = amplitude_ * p.weights[r] * a;
    return out;
}

const std::string& Session::posture_at(double t) const {
    const Segment* s = segment_at(segments, t);
    if (!s) throw InvalidInput("posture_at: empty session");
    return s->posture;
}

nlohmann::json Session::latents_json() const {
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& s : segments) {
        nlohmann::json cycles = nlohmann::json::array();
        for (const auto& c : s.cycles) cycles.push_back({{"start", c.start}, {"hold", c.hold}, {"level", c.level}});
        const PostureSpec& p = library_->find(s.posture);
        segs.push_back({{"posture", s.posture},
                        {"start", s.start},
                        {"end", s.end},
                        {"weights", p.weights},
                        {"prototype", p.angles.values},
                        {"emg_weights", p.emg_weights},
                        {"cycles", cycles}});
    }
    return {{"config", config.to_json()}, {"ramp", ramp_}, {"amplitude", amplitude_}, {"segments", segs}};
}

Session generate_session(const SynthConfig& cfg) {
    cfg.validate();
    Session s;
    s.config = cfg;
    s.ramp_ = cfg.ramp;
    s.amplitude_ = cfg.amplitude;
    s.library_ = cfg.postures_path.empty()
                     ? std::shared_ptr<const PostureLibrary>(&PostureLibrary::builtin(), [](const PostureLibrary*) {})
                     : std::make_shared<const PostureLibrary>(PostureLibrary::load(cfg.postures_path));
    const PostureLibrary& lib = *s.library_;

    std::vector<std::string> names = cfg.postures;
    if (names.empty())
        for (const auto& p : lib.postures) names.push_back(p.name);
    for (const auto& n : names) lib.find(n);

    Rng rng(cfg.seed);

    // Press cycles. The activation is zero through each transition and
    // every cycle ends before its segment does.
    for (std::size_t k = 0; k < names.size(); ++k) {
        Segment seg;
        seg.posture = names[k];
        seg.start = static_cast<double>(k) * cfg.segment_duration;
        seg.end = seg.start + cfg.segment_duration;
        double t = seg.start + cfg.transition + rng.uniform(cfg.rest_min, cfg.rest_max) * 0.5;
        while (true) {
            Cycle c;
            c.start = t;
            c.hold = rng.uniform(cfg.hold_min, cfg.hold_max);
            c.level = rng.uniform(cfg.level_min, cfg.level_max);
            const double rest = rng.uniform(cfg.rest_min, cfg.rest_max);
            if (c.start + 2.0 * cfg.ramp + c.hold > seg.end - cfg.emg_lead) break;
            seg.cycles.push_back(c);
            t = c.start + 2.0 * cfg.ramp + c.hold + rest;
        }
        s.segments.push_back(std::move(seg));
    }
    const double duration = s.duration();

    // Pose: hold the prototype, moving through the rest pose at each
    // segment start, plus slow sinusoidal jitter.
    std::array<std::array<double, 4>, kNumGloveAngles> jitter{};
    for (auto& j : jitter) {
        j[0] = rng.uniform(0.1, 0.5);        // Hz
        j[1] = rng.uniform(0.0, 2.0 * kPi);  // phase
        j[2] = rng.uniform(0.5, 1.3);
        j[3] = rng.uniform(0.0, 2.0 * kPi);
    }
    s.pose.arity = kNumGloveAngles;
    const std::size_t n_pose = tick_count(duration, cfg.pose_rate);
    std::array<double, kNumGloveAngles> row{};
    for (std::size_t i = 0; i < n_pose; ++i) {
        const double t = static_cast<double>(i) / cfg.pose_rate;
        const Segment* seg = segment_at(s.segments, t);
        const std::size_t k = static_cast<std::size_t>(seg - s.segments.data());
        const auto& cur = lib.find(seg->posture).angles.values;
        const auto& prev = k == 0 ? lib.rest.values : lib.find(s.segments[k - 1].posture).angles.values;
        const double u = cfg.transition > 0.0 ? (t - seg->start) / cfg.transition : 1.0;
        for (std::size_t a = 0; a < kNumGloveAngles; ++a) {
            double v;
            if (u < 0.5)
                v = prev[a] + (lib.rest.values[a] - prev[a]) * smoothstep(2.0 * u);
            else
                v = lib.rest.values[a] + (cur[a] - lib.rest.values[a]) * smoothstep(2.0 * u - 1.0);
            const auto& j = jitter[a];
            v += cfg.pose_jitter * 0.5 *
                 (std::sin(2.0 * kPi * j[0] * t + j[1]) + std::sin(2.0 * kPi * j[2] * t + j[3]));
            row[a] = v;
        }
        s.pose.push(t, row);
    }

    // Pressure at the glove rate: the generative region values, spread over
    // each region's sensors, and the clipped region stream.
    const pressure::RegionMap map = pressure::RegionMap::reference();
    s.pressure.arity = kNumRegions;
    const std::size_t n_press = tick_count(duration, cfg.pressure_rate);
    for (std::size_t i = 0; i < n_press; ++i) {
        const double t = static_cast<double>(i) / cfg.pressure_rate;
        const auto vals = s.region_pressure(t);
        pressure::RawPressureFrame raw;
        raw.timestamp = t;
        for (std::size_t r = 0; r < kNumRegions; ++r) {
            bool first = true;
            for (auto n : map.glove_nodes[r]) {
                raw.glove[n] = first ? vals[r] : kNeighbourShare * vals[r];
                first = false;
            }
            for (auto f : map.fsrs[r]) {
                raw.fsr[f] = first ? vals[r] : kNeighbourShare * vals[r];
                first = false;
            }
        }
        s.raw_pressure.push_back(raw);
        std::array<double, kNumRegions> clipped{};
        for (std::size_t r = 0; r < kNumRegions; ++r) clipped[r] = pressure::clip_floor_value(vals[r]);
        s.pressure.push(t, clipped);
    }

    // sEMG: unit-RMS band-limited noise per channel, amplitude-modulated by
    // the posture's channel weights times the activation slightly ahead.
    const std::size_t n_emg = tick_count(duration, cfg.emg_rate);
    std::vector<double> carrier(n_emg * kEmgChannels);
    for (std::size_t c = 0; c < kEmgChannels; ++c) {
        Biquad bp(120.0, 0.6, cfg.emg_rate);
        double ss = 0.0;
        for (std::size_t i = 0; i < n_emg; ++i) {
            const double v = bp(rng.normal());
            carrier[i * kEmgChannels + c] = v;
            ss += v * v;
        }
        const double scale = n_emg ? 1.0 / std::sqrt(ss / static_cast<double>(n_emg)) : 1.0;
        for (std::size_t i = 0; i < n_emg; ++i) carrier[i * kEmgChannels + c] *= scale;
    }
    s.emg.arity = kEmgChannels;
    s.emg.timestamps.resize(n_emg);
    s.emg.values.resize(n_emg * kEmgChannels);
    for (std::size_t i = 0; i < n_emg; ++i) {
        const double t = static_cast<double>(i) / cfg.emg_rate;
        const double a = s.activation(t + cfg.emg_lead);
        const PostureSpec& p = lib.find(segment_at(s.segments, t)->posture);
        s.emg.timestamps[i] = t;
        for (std::size_t c = 0; c < kEmgChannels; ++c)
            s.emg.values[i * kEmgChannels + c] =
                (cfg.emg_floor + cfg.emg_gain * p.emg_weights[c] * a) * carrier[i * kEmgChannels + c] +
                cfg.emg_noise * rng.normal();
    }
    return s;
}

}  // namespace pimforce::synthgen
