#include "pimforce/sync.hpp"

#include <algorithm>
#include <cmath>

namespace pimforce::sync {

void TimedStream::push(double t, std::span<const double> v) {
    if (arity == 0) arity = v.size();
    if (v.size() != arity) throw InvalidInput("timed stream: ragged payload");
    if (!timestamps.empty() && !(t > timestamps.back()))
        throw InvalidInput("timed stream: timestamps must be strictly increasing");
    timestamps.push_back(t);
    values.insert(values.end(), v.begin(), v.end());
}

void TimedStream::validate() const {
    if (values.size() != timestamps.size() * arity)
        throw InvalidInput("timed stream: payload size does not match arity");
    for (std::size_t i = 0; i < timestamps.size(); ++i) {
        if (!std::isfinite(timestamps[i])) throw InvalidInput("timed stream: non-finite time");
        if (i > 0 && !(timestamps[i] > timestamps[i - 1]))
            throw InvalidInput("timed stream: timestamps must be strictly increasing");
    }
}

TimedStream linear_resample(const TimedStream& s, std::span<const double> targets) {
    if (s.size() == 0) throw InvalidInput("linear_resample: empty stream");
    const double t0 = s.timestamps.front(), t1 = s.timestamps.back();
    TimedStream out;
    out.arity = s.arity;
    out.timestamps.assign(targets.begin(), targets.end());
    out.values.resize(targets.size() * s.arity);
    for (std::size_t k = 0; k < targets.size(); ++k) {
        const double t = targets[k];
        if (!(t >= t0 && t <= t1))
            throw InvalidInput("linear_resample: target outside the source range");
        // First tick strictly after t; the bracket is [hi-1, hi].
        const auto it = std::upper_bound(s.timestamps.begin(), s.timestamps.end(), t);
        const std::size_t hi = static_cast<std::size_t>(it - s.timestamps.begin());
        double* dst = &out.values[k * s.arity];
        const std::size_t lo = hi - 1;
        if (hi == s.size() || s.timestamps[lo] == t) {
            std::copy_n(&s.values[lo * s.arity], s.arity, dst);
            continue;
        }
        const double w = (t - s.timestamps[lo]) / (s.timestamps[hi] - s.timestamps[lo]);
        const double* a = &s.values[lo * s.arity];
        const double* b = &s.values[hi * s.arity];
        for (std::size_t c = 0; c < s.arity; ++c) dst[c] = a[c] + w * (b[c] - a[c]);
    }
    return out;
}

TimedStream nearest_resample(const TimedStream& s, std::span<const double> targets) {
    if (s.size() == 0) throw InvalidInput("nearest_resample: empty stream");
    TimedStream out;
    out.arity = s.arity;
    out.timestamps.assign(targets.begin(), targets.end());
    out.values.resize(targets.size() * s.arity);
    for (std::size_t k = 0; k < targets.size(); ++k) {
        const double t = targets[k];
        const auto it = std::lower_bound(s.timestamps.begin(), s.timestamps.end(), t);
        std::size_t idx = static_cast<std::size_t>(it - s.timestamps.begin());
        if (idx == s.size()) {
            idx = s.size() - 1;
        } else if (idx > 0) {
            const double before = t - s.timestamps[idx - 1];
            const double after = s.timestamps[idx] - t;
            if (before <= after) idx = idx - 1;
        }
        std::copy_n(&s.values[idx * s.arity], s.arity, &out.values[k * s.arity]);
    }
    return out;
}

semgproc::EmgStream to_emg_stream(const TimedStream& s) {
    if (s.arity != kEmgChannels) throw ShapeError("emg stream must have 8 channels");
    return {s.timestamps, s.values};
}

std::vector<AlignedSample> assemble_dataset(const TimedStream& emg, const TimedStream& pose,
                                            const TimedStream& pressure,
                                            const FramingConfig& cfg) {
    if (emg.arity != kEmgChannels) throw ShapeError("emg stream must have 8 channels");
    if (pose.arity != kNumGloveAngles) throw ShapeError("pose stream must have 20 angles");
    if (pressure.arity != kNumRegions) throw ShapeError("pressure stream must have 9 regions");
    if (cfg.stride == 0) throw InvalidInput("framing stride must be positive");
    if (emg.size() == 0 || pose.size() == 0 || pressure.size() == 0)
        throw InvalidInput("assemble_dataset: empty stream");

    const double lo = std::max({emg.timestamps.front(), pose.timestamps.front(),
                                pressure.timestamps.front()});
    const double hi = std::min({emg.timestamps.back(), pose.timestamps.back(),
                                pressure.timestamps.back()});
    if (!(hi > lo)) throw InvalidInput("assemble_dataset: streams do not overlap in time");

    const auto first_it = std::lower_bound(emg.timestamps.begin(), emg.timestamps.end(), lo);
    const std::size_t first = static_cast<std::size_t>(first_it - emg.timestamps.begin());

    std::vector<std::size_t> starts;
    std::vector<double> anchors;
    for (std::size_t s = first; s + kEmgWindow <= emg.size(); s += cfg.stride) {
        const double end = emg.timestamps[s + kEmgWindow - 1];
        if (end > hi) break;
        starts.push_back(s);
        anchors.push_back(end);
    }
    if (starts.empty()) return {};

    const TimedStream pose_at = linear_resample(pose, anchors);
    const TimedStream press_at = nearest_resample(pressure, anchors);
    const semgproc::EmgStream es = to_emg_stream(emg);

    std::vector<AlignedSample> out;
    out.reserve(starts.size());
    for (std::size_t k = 0; k < starts.size(); ++k) {
        AlignedSample a;
        a.timestamp = anchors[k];
        a.window = semgproc::window_at(es, starts[k]);
        std::copy_n(&pose_at.values[k * kNumGloveAngles], kNumGloveAngles, a.angles.values.begin());
        a.rotations = handkin::glove_to_rotations(a.angles);
        a.pressure.timestamp = anchors[k];
        std::copy_n(&press_at.values[k * kNumRegions], kNumRegions, a.pressure.values.begin());
        a.labels = pressure::labels(a.pressure);
        out.push_back(std::move(a));
    }
    return out;
}

}  // namespace pimforce::sync
