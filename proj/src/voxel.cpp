#include "pimforce/voxel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

namespace pimforce::voxel {

nlohmann::json ScalerStats::to_json() const {
    return {{"min", std::vector<double>(min.begin(), min.end())},
            {"max", std::vector<double>(max.begin(), max.end())}};
}

ScalerStats ScalerStats::from_json(const nlohmann::json& j) {
    ScalerStats s;
    const auto lo = j.at("min").get<std::vector<double>>();
    const auto hi = j.at("max").get<std::vector<double>>();
    if (lo.size() != 3 || hi.size() != 3) throw InvalidInput("scaler json: expected 3 axes");
    for (int a = 0; a < 3; ++a) {
        s.min[a] = lo[a];
        s.max[a] = hi[a];
        if (!(s.max[a] > s.min[a])) throw InvalidInput("scaler json: max must exceed min");
    }
    return s;
}

ScalerStats fit_scaler(std::span<const handkin::JointSet> sets) {
    if (sets.empty()) throw InvalidInput("fit_scaler: empty input");
    ScalerStats s;
    s.min.fill(std::numeric_limits<double>::infinity());
    s.max.fill(-std::numeric_limits<double>::infinity());
    for (const auto& set : sets) {
        for (const auto& p : set.joints) {
            for (int a = 0; a < 3; ++a) {
                if (!std::isfinite(p[a])) throw InvalidInput("fit_scaler: non-finite joint");
                s.min[a] = std::min(s.min[a], p[a]);
                s.max[a] = std::max(s.max[a], p[a]);
            }
        }
    }
    for (int a = 0; a < 3; ++a)
        if (!(s.max[a] > s.min[a]))
            throw InvalidInput("fit_scaler: degenerate axis " + std::to_string(a));
    return s;
}

ScaledJoints scale_joints(const handkin::JointSet& j, const ScalerStats& s) {
    ScaledJoints out;
    out.joints.frame = j.frame;
    const double span = kGridHigh - kGridLow;
    for (std::size_t k = 0; k < kNumJoints; ++k) {
        for (int a = 0; a < 3; ++a) {
            const double v = j.joints[k][a];
            if (v < s.min[a] || v > s.max[a]) out.out_of_range = true;
            out.joints.joints[k][a] = kGridLow + span * (v - s.min[a]) / (s.max[a] - s.min[a]);
        }
    }
    return out;
}

handkin::JointSet unscale_joints(const handkin::JointSet& grid, const ScalerStats& s) {
    handkin::JointSet out;
    out.frame = grid.frame;
    const double span = kGridHigh - kGridLow;
    for (std::size_t k = 0; k < kNumJoints; ++k)
        for (int a = 0; a < 3; ++a)
            out.joints[k][a] =
                s.min[a] + (grid.joints[k][a] - kGridLow) * (s.max[a] - s.min[a]) / span;
    return out;
}

template <typename T>
void voxelize_into(const handkin::JointSet& grid_joints, double sigma, std::span<T> out) {
    if (out.size() != kNumJoints * HeatmapVolume::kChannelSize)
        throw ShapeError("voxelize: output buffer has wrong size");
    if (!(sigma > 0.0)) throw InvalidInput("voxelize: sigma must be positive");
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    std::array<double, kGrid> dx2{}, dy2{}, dz2{};
    for (std::size_t k = 0; k < kNumJoints; ++k) {
        const auto& c = grid_joints.joints[k];
        for (std::size_t i = 0; i < kGrid; ++i) {
            const double v = static_cast<double>(i);
            dx2[i] = (v - c[0]) * (v - c[0]);
            dy2[i] = (v - c[1]) * (v - c[1]);
            dz2[i] = (v - c[2]) * (v - c[2]);
        }
        T* ch = out.data() + k * HeatmapVolume::kChannelSize;
        for (std::size_t x = 0; x < kGrid; ++x)
            for (std::size_t y = 0; y < kGrid; ++y) {
                const double dxy = dx2[x] + dy2[y];
                T* row = ch + (x * kGrid + y) * kGrid;
                for (std::size_t z = 0; z < kGrid; ++z)
                    row[z] = static_cast<T>(std::exp(-(dxy + dz2[z]) * inv2s2));
            }
    }
}

template void voxelize_into<double>(const handkin::JointSet&, double, std::span<double>);
template void voxelize_into<float>(const handkin::JointSet&, double, std::span<float>);

HeatmapVolume voxelize(const handkin::JointSet& grid_joints, double sigma) {
    HeatmapVolume h;
    h.values.resize(kNumJoints * HeatmapVolume::kChannelSize);
    voxelize_into<double>(grid_joints, sigma, h.values);
    return h;
}

std::vector<double> heatmap_profiles(const handkin::JointSet& grid_joints, double sigma) {
    if (!(sigma > 0.0)) throw InvalidInput("heatmap_profiles: sigma must be positive");
    std::vector<double> out(kNumJoints * 3 * kGrid);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (std::size_t k = 0; k < kNumJoints; ++k)
        for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t i = 0; i < kGrid; ++i) {
                const double d = static_cast<double>(i) - grid_joints.joints[k][a];
                out[(k * 3 + a) * kGrid + i] = std::exp(-d * d * inv2s2);
            }
    return out;
}

}  // namespace pimforce::voxel
