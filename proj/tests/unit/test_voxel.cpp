#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include <nlohmann/json.hpp>

#include "pimforce/rng.hpp"
#include "pimforce/voxel.hpp"

using namespace pimforce;
using namespace pimforce::voxel;

namespace {

handkin::JointSet all_at(double x, double y, double z) {
    handkin::JointSet j;
    for (auto& p : j.joints) p = {x, y, z};
    return j;
}

handkin::JointSet random_set(Rng& rng, double lo, double hi) {
    handkin::JointSet j;
    for (auto& p : j.joints)
        for (auto& v : p) v = rng.uniform(lo, hi);
    return j;
}

}  // namespace

TEST_CASE("scaler holds the per-axis extrema") {
    handkin::JointSet a = all_at(0, 0, 0);
    a.joints[0] = {-1, 2, 3};
    a.joints[1] = {1, -2, -3};
    const ScalerStats s = fit_scaler(std::vector<handkin::JointSet>{a});
    CHECK(s.min == Vec3{-1, -2, -3});
    CHECK(s.max == Vec3{1, 2, 3});

    Rng rng(1);
    std::vector<handkin::JointSet> sets;
    for (int i = 0; i < 50; ++i) sets.push_back(random_set(rng, -5, 5));
    const auto fit = fit_scaler(sets);
    Vec3 lo{1e9, 1e9, 1e9}, hi{-1e9, -1e9, -1e9};
    for (const auto& js : sets)
        for (const auto& p : js.joints)
            for (int d = 0; d < 3; ++d) {
                lo[d] = std::min(lo[d], p[d]);
                hi[d] = std::max(hi[d], p[d]);
            }
    CHECK(fit.min == lo);
    CHECK(fit.max == hi);
}

TEST_CASE("scaler rejects empty and degenerate input") {
    CHECK_THROWS_AS(fit_scaler(std::vector<handkin::JointSet>{}), InvalidInput);
    CHECK_THROWS_AS(fit_scaler(std::vector<handkin::JointSet>{all_at(1, 2, 3)}), InvalidInput);
}

TEST_CASE("scaling maps the range onto [12, 36] and extrapolates with a flag") {
    ScalerStats s{{-1, 0, 10}, {1, 4, 20}};
    auto r = scale_joints(all_at(-1, 0, 10), s);
    CHECK(r.joints.joints[0] == Vec3{12, 12, 12});
    CHECK_FALSE(r.out_of_range);
    r = scale_joints(all_at(0, 2, 15), s);
    CHECK(r.joints.joints[0] == Vec3{24, 24, 24});
    r = scale_joints(all_at(3, 4, 20), s);
    CHECK(r.joints.joints[0][0] == doctest::Approx(60.0));
    CHECK(r.out_of_range);

    Rng rng(2);
    for (int i = 0; i < 20; ++i) {
        const auto j = random_set(rng, -3, 3);
        const auto back = unscale_joints(scale_joints(j, s).joints, s);
        for (std::size_t k = 0; k < kNumJoints; ++k)
            for (int d = 0; d < 3; ++d) CHECK(std::abs(back.joints[k][d] - j.joints[k][d]) <= 1e-12);
    }
}

TEST_CASE("heatmap peak, unit offset and channel sum") {
    const auto h = voxelize(all_at(24, 24, 24));
    CHECK(h.values.size() == kNumJoints * HeatmapVolume::kChannelSize);
    CHECK(h.at(0, 24, 24, 24) == 1.0);
    CHECK(h.at(0, 25, 24, 24) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
    CHECK(std::abs(h.at(3, 24, 24, 24) - 1.0) == 0.0);

    Rng rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        const double x = rng.uniform(12, 36), y = rng.uniform(12, 36), z = rng.uniform(12, 36);
        const auto v = voxelize(all_at(x, y, z));
        double sum = 0;
        for (std::size_t i = 0; i < HeatmapVolume::kChannelSize; ++i) sum += v.values[i];
        CHECK(std::abs(sum - oracle::heatmap_sum(x, y, z, 1.0)) <= 1e-6);
        CHECK(std::abs(sum - std::pow(2 * std::numbers::pi, 1.5)) <= 1e-6);
    }
}

TEST_CASE("heatmap values stay in [0, 1], decay and shift with the joint") {
    const auto a = voxelize(all_at(20, 22, 24));
    const auto b = voxelize(all_at(21, 22, 24));
    for (double v : a.values) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(a.at(0, 20, 22, 24) > a.at(0, 21, 22, 24));
    CHECK(a.at(0, 21, 22, 24) > a.at(0, 22, 22, 24));
    CHECK(a.at(0, 22, 22, 24) > a.at(0, 23, 23, 24));
    for (std::size_t x = 0; x + 1 < kGrid; ++x)
        for (std::size_t y = 0; y < kGrid; y += 7)
            for (std::size_t z = 0; z < kGrid; z += 5) CHECK(b.at(0, x + 1, y, z) == a.at(0, x, y, z));
}

TEST_CASE("profiles are the separable factors of the heatmap") {
    Rng rng(9);
    const auto j = random_set(rng, 14, 34);
    const auto h = voxelize(j, 1.3);
    const auto p = heatmap_profiles(j, 1.3);
    for (std::size_t k = 0; k < kNumJoints; k += 4)
        for (std::size_t x = 0; x < kGrid; x += 3)
            for (std::size_t y = 0; y < kGrid; y += 5)
                for (std::size_t z = 0; z < kGrid; z += 2) {
                    const double prod = p[(k * 3 + 0) * kGrid + x] * p[(k * 3 + 1) * kGrid + y] * p[(k * 3 + 2) * kGrid + z];
                    CHECK(std::abs(prod - h.at(k, x, y, z)) <= 1e-15);
                }
}

TEST_CASE("float and double volumes agree") {
    Rng rng(6);
    const auto j = random_set(rng, 12, 36);
    std::vector<float> f(kNumJoints * HeatmapVolume::kChannelSize);
    voxelize_into<float>(j, 1.0, f);
    const auto d = voxelize(j);
    for (std::size_t i = 0; i < f.size(); i += 97) CHECK(f[i] == static_cast<float>(d.values[i]));
}

TEST_CASE("scaler json round trip") {
    ScalerStats s{{-1.25, 0.5, 3}, {2, 4.75, 9}};
    const auto b = ScalerStats::from_json(s.to_json());
    CHECK(b.min == s.min);
    CHECK(b.max == s.max);
}
