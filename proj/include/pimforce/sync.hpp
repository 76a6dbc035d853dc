#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pimforce/common.hpp"
#include "pimforce/handkin.hpp"
#include "pimforce/pressure.hpp"
#include "pimforce/semgproc.hpp"

namespace pimforce::sync {

// Strictly increasing timestamps with a fixed-arity vector payload per tick,
// stored row-major.
struct TimedStream {
    std::size_t arity = 0;
    std::vector<double> timestamps;
    std::vector<double> values;

    std::size_t size() const { return timestamps.size(); }
    std::span<const double> row(std::size_t i) const {
        return {values.data() + i * arity, arity};
    }
    void push(double t, std::span<const double> v);
    // Throws InvalidInput on non-increasing timestamps or a ragged payload.
    void validate() const;
};

// Componentwise linear interpolation; targets outside [first, last] throw.
TimedStream linear_resample(const TimedStream& s, std::span<const double> targets);

// Payload of the temporally closest source tick, ties to the earlier tick.
TimedStream nearest_resample(const TimedStream& s, std::span<const double> targets);

struct AlignedSample {
    double timestamp = 0.0;  // end time of the sEMG window
    semgproc::SemgWindow window;
    handkin::GloveAngles angles;
    handkin::JointRotations rotations;
    pressure::RegionPressure pressure;
    pressure::RegionLabels labels;
};

struct FramingConfig {
    std::size_t stride = semgproc::kDefaultStride;
};

// `emg` has arity 8, `pose` arity 20 (glove angles), `pressure` arity 9
// (clipped region pressures). Windows are framed from the first sEMG sample
// inside the mutual overlap; each window's end time anchors a pose sample
// (linear) and a pressure frame (nearest). Windows whose span leaves the
// overlap are dropped.
std::vector<AlignedSample> assemble_dataset(const TimedStream& emg, const TimedStream& pose,
                                            const TimedStream& pressure,
                                            const FramingConfig& cfg = {});

semgproc::EmgStream to_emg_stream(const TimedStream& s);

}  // namespace pimforce::sync
