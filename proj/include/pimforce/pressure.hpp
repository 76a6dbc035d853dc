#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pimforce/common.hpp"

namespace pimforce::pressure {

enum class Region : std::size_t {
    Thumb = 0,
    Index,
    Middle,
    Ring,
    Pinky,
    PalmUpperRight,
    PalmUpperLeft,
    PalmLowerRight,
    PalmLowerLeft,
};

const std::array<std::string, kNumRegions>& region_names();

// force = slope * g + quadratic * g^2, with g the sensor conductance (1/ohm).
struct CalibrationCurve {
    double slope = 0.0;
    double quadratic = 0.0;
    double residual_rms = 0.0;
    double max_conductance = 0.0;  // upper end of the fitted range

    double force(double conductance) const;
    nlohmann::json to_json() const;
    static CalibrationCurve from_json(const nlohmann::json& j);
};

struct CalibrationSample {
    double conductance = 0.0;
    double force = 0.0;
};

// Least squares through the origin. With `quadratic` the fit adds a g^2
// term, falling back to the linear fit when the quadratic is not monotone
// over the fitted range.
CalibrationCurve fit_calibration(std::span<const CalibrationSample> samples,
                                 bool quadratic = false);

// Sensor membership of each region: glove node ids and fingertip FSR ids.
struct RegionMap {
    std::array<std::vector<std::size_t>, kNumRegions> glove_nodes;
    std::array<std::vector<std::size_t>, kNumRegions> fsrs;

    static RegionMap reference();
    static RegionMap from_json(const nlohmann::json& j);
    static RegionMap load(const std::string& path);
    nlohmann::json to_json() const;
    void validate() const;
};

struct RawPressureFrame {
    double timestamp = 0.0;
    std::array<double, kGloveNodes> glove{};
    std::array<double, kFingertipFsrs> fsr{};
};

struct RegionPressure {
    double timestamp = 0.0;
    std::array<double, kNumRegions> values{};
};

struct RegionLabels {
    std::array<bool, kNumRegions> present{};
};

// Max over each region's member sensors.
RegionPressure aggregate_regions(const RawPressureFrame& f,
                                 const RegionMap& map = RegionMap::reference());

double clip_floor_value(double v);
RegionPressure clip_floor(const RegionPressure& p);

RegionLabels labels(const RegionPressure& p);

}  // namespace pimforce::pressure
