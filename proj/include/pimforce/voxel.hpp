#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pimforce/common.hpp"
#include "pimforce/handkin.hpp"

namespace pimforce::voxel {

// Per-axis extrema of a training set's joint coordinates.
struct ScalerStats {
    Vec3 min{};
    Vec3 max{};

    nlohmann::json to_json() const;
    static ScalerStats from_json(const nlohmann::json& j);
};

struct ScaledJoints {
    handkin::JointSet joints;  // grid coordinates
    bool out_of_range = false;
};

// Throws InvalidInput on empty input or a degenerate axis.
ScalerStats fit_scaler(std::span<const handkin::JointSet> sets);

// Affine map of each axis so the dataset min lands on 12 and the max on 36.
// Values outside the fitted range extrapolate and set `out_of_range`.
ScaledJoints scale_joints(const handkin::JointSet& j, const ScalerStats& s);
handkin::JointSet unscale_joints(const handkin::JointSet& grid, const ScalerStats& s);

// 21 x 48 x 48 x 48 Gaussian heatmaps, channel-major then (x, y, z) with z
// fastest. Voxel centers sit at integer coordinates.
struct HeatmapVolume {
    static constexpr std::size_t kChannelSize = kGrid * kGrid * kGrid;
    std::vector<double> values;  // kNumJoints * kChannelSize

    double at(std::size_t joint, std::size_t x, std::size_t y, std::size_t z) const {
        return values[joint * kChannelSize + (x * kGrid + y) * kGrid + z];
    }
};

HeatmapVolume voxelize(const handkin::JointSet& grid_joints, double sigma = 1.0);

// Writes the volume of `grid_joints` into `out` (length kNumJoints * 48^3),
// as float or double.
template <typename T>
void voxelize_into(const handkin::JointSet& grid_joints, double sigma, std::span<T> out);

// One-dimensional Gaussian profiles per joint and axis: out[(j*3 + axis)*48 + i]
// = exp(-(i - c)^2 / (2 sigma^2)). The heatmap is their outer product, which
// the network's separable stem exploits.
std::vector<double> heatmap_profiles(const handkin::JointSet& grid_joints, double sigma = 1.0);

}  // namespace pimforce::voxel
