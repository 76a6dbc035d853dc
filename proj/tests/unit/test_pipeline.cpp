#include <doctest.h>

#include <cmath>
#include <filesystem>

#include <Eigen/Geometry>

#include "pimforce/io/tensor_file.hpp"
#include "pimforce/nn/model.hpp"
#include "pimforce/pipeline.hpp"
#include "pimforce/rng.hpp"

using namespace pimforce;
namespace fs = std::filesystem;

namespace {

synthgen::Session short_session(std::uint64_t seed, double duration = 3.0) {
    synthgen::SynthConfig c;
    c.seed = seed;
    c.postures = {"I-Press", "Medium Wrap"};
    c.segment_duration = duration;
    return synthgen::generate_session(c);
}

nn::ModelConfig tiny() {
    nn::ModelConfig c = nn::ModelConfig::desk();
    c.emg_encoder = {4, 4, 4};
    c.emg_decoder = {4, 4, 1};
    c.resnet_layers = {1, 1};
    c.resnet_channels = {4, 6};
    c.feature_dim = 8;
    c.fusion_width = 6;
    return c;
}

// Windows of 1248 samples at the given stride that start at or after the
// overlap start and end at or before the overlap end.
std::size_t expected_windows(const std::vector<double>& t_emg, double lo, double hi, std::size_t stride) {
    std::size_t first = 0;
    while (first < t_emg.size() && t_emg[first] < lo) ++first;
    std::size_t n = 0;
    for (std::size_t s = first; s + 1248 <= t_emg.size(); s += stride) {
        if (t_emg[s + 1247] > hi) break;
        ++n;
    }
    return n;
}

std::string temp_dir(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("pimforce_pipe_" + name);
    fs::remove_all(p);
    return p.string();
}

}  // namespace

TEST_CASE("preprocess produces the network tensor shapes") {
    const auto s = short_session(5);
    const auto raw = pipeline::to_raw(s);
    pipeline::PipelineConfig cfg;
    const auto d = pipeline::preprocess(raw, cfg);

    const double lo = std::max({s.emg.timestamps.front(), s.pose.timestamps.front(), s.raw_pressure.front().timestamp});
    const double hi = std::min({s.emg.timestamps.back(), s.pose.timestamps.back(), s.raw_pressure.back().timestamp});
    const std::size_t n = expected_windows(s.emg.timestamps, lo, hi, cfg.stride);
    REQUIRE(n > 0);
    CHECK(d.size == n);
    CHECK(d.emg.size() == n * 8 * 32 * 64);
    CHECK(d.angles.size() == n * 20);
    CHECK(d.rotations.size() == n * 15 * 3);
    CHECK(d.joints.size() == n * 21 * 3);
    CHECK(d.pressure.size() == n * 9);
    CHECK(d.labels.size() == n * 9);
    CHECK(d.tags.size() == n);
    for (std::size_t i = 0; i < d.pressure.size(); ++i) {
        CHECK(d.pressure[i] >= 0.0);
        CHECK(d.pressure[i] <= 20.0);
        CHECK(d.labels[i] == (d.pressure[i] > 0.0 ? 1.0 : 0.0));
    }
    for (std::size_t i = 0; i < n; ++i) {
        handkin::JointSet js;
        for (std::size_t j = 0; j < 21; ++j)
            for (std::size_t a = 0; a < 3; ++a) js.joints[j][a] = d.joints[(i * 21 + j) * 3 + a];
        CHECK(handkin::is_canonical(js));
    }
}

TEST_CASE("saved datasets round trip and report their sample count") {
    const auto s = short_session(6);
    pipeline::PipelineConfig cfg;
    cfg.materialize_heatmaps = true;
    const auto d = pipeline::preprocess(pipeline::to_raw(s), cfg);
    const auto dir = temp_dir("ds");
    pipeline::save_dataset(dir, d, cfg);

    const auto m = pipeline::load_manifest(dir);
    CHECK(m.at("samples").get<std::size_t>() == d.size);
    CHECK(m.at("heatmaps") == "materialized");
    const auto h = io::load_tensor((fs::path(dir) / "H.pimf").string());
    CHECK(h.dtype == io::DType::F32);
    CHECK(h.dims == std::vector<std::uint32_t>{static_cast<std::uint32_t>(d.size), 21, 48, 48, 48});
    const auto e = io::load_tensor((fs::path(dir) / "E.pimf").string());
    CHECK(e.dims == std::vector<std::uint32_t>{static_cast<std::uint32_t>(d.size), 8, 32, 64});

    const auto back = pipeline::load_dataset(dir);
    CHECK(back.size == d.size);
    CHECK(back.emg == d.emg);
    CHECK(back.joints == d.joints);
    CHECK(back.pressure == d.pressure);
    CHECK(back.labels == d.labels);
    CHECK(back.tags == d.tags);
    CHECK(back.scaler.to_json() == d.scaler.to_json());
    fs::remove_all(dir);
}

TEST_CASE("sessions round trip through disk") {
    const auto s = short_session(7, 2.0);
    const auto dir = temp_dir("session");
    pipeline::save_session(dir, s);
    const auto raw = pipeline::load_session(dir);
    CHECK(raw.emg.values == s.emg.values);
    CHECK(raw.pose.values == s.pose.values);
    CHECK(raw.pressure.size() == s.raw_pressure.size());
    CHECK(raw.latents.has_value());
    const auto a = pipeline::preprocess(raw, {});
    const auto b = pipeline::preprocess(pipeline::to_raw(s), {});
    CHECK(a.emg == b.emg);
    CHECK(a.pressure == b.pressure);
    fs::remove(fs::path(dir) / pipeline::kPoseFile);
    CHECK_THROWS_AS(pipeline::load_session(dir), InvalidInput);
    fs::remove_all(dir);
}

TEST_CASE("streams without overlap are rejected") {
    auto raw = pipeline::to_raw(short_session(8, 2.0));
    for (auto& t : raw.pose.timestamps) t += 1000.0;
    CHECK_THROWS_AS(pipeline::preprocess(raw, {}), InvalidInput);
}

TEST_CASE("inference agrees for glove, canonical and detector poses") {
    const auto s = short_session(9, 2.0);
    nn::PiMForceModel m(tiny(), 4);
    const voxel::ScalerStats scaler = pipeline::preprocess(pipeline::to_raw(s), {}).scaler;

    const auto probe = pipeline::infer(m, scaler, s.emg, s.pose, pipeline::PoseKind::Glove);
    REQUIRE(!probe.timestamps.empty());

    // Pose ticks placed exactly at the window anchors so every encoding
    // samples the same pose. The original end ticks keep the overlap, and
    // so the windows, unchanged.
    std::vector<double> ticks = {s.pose.timestamps.front()};
    ticks.insert(ticks.end(), probe.timestamps.begin(), probe.timestamps.end());
    if (ticks.back() < s.pose.timestamps.back()) ticks.push_back(s.pose.timestamps.back());
    if (ticks[1] == ticks[0]) ticks.erase(ticks.begin());
    const auto glove = sync::linear_resample(s.pose, ticks);
    sync::TimedStream canonical, detector;
    canonical.arity = detector.arity = 63;
    Rng rng(10);
    std::vector<double> row(63), moved(63);
    for (std::size_t k = 0; k < glove.size(); ++k) {
        handkin::GloveAngles a;
        const auto g = glove.row(k);
        std::copy(g.begin(), g.end(), a.values.begin());
        const auto js = handkin::forward_kinematics(handkin::glove_to_rotations(a));
        const Eigen::Quaterniond q = Eigen::Quaterniond(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized();
        const double scale = rng.uniform(20.0, 120.0);
        const Eigen::Vector3d shift(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(300, 600));
        for (std::size_t j = 0; j < 21; ++j) {
            const Eigen::Vector3d p(js.joints[j][0], js.joints[j][1], js.joints[j][2]);
            const Eigen::Vector3d r = scale * (q * p) + shift;
            for (std::size_t ax = 0; ax < 3; ++ax) {
                row[j * 3 + ax] = p[static_cast<Eigen::Index>(ax)];
                moved[j * 3 + ax] = r[static_cast<Eigen::Index>(ax)];
            }
        }
        canonical.push(glove.timestamps[k], row);
        detector.push(glove.timestamps[k], moved);
    }

    const auto rg = pipeline::infer(m, scaler, s.emg, glove, pipeline::PoseKind::Glove);
    const auto rc = pipeline::infer(m, scaler, s.emg, canonical, pipeline::PoseKind::Canonical);
    const auto rd = pipeline::infer(m, scaler, s.emg, detector, pipeline::PoseKind::Detector);
    REQUIRE(rg.c_hat.size() == rc.c_hat.size());
    REQUIRE(rg.c_hat.size() == rd.c_hat.size());
    REQUIRE(rg.timestamps == probe.timestamps);
    double worst_c = 0.0, worst_d = 0.0;
    for (std::size_t i = 0; i < rg.c_hat.size(); ++i) {
        worst_c = std::max(worst_c, std::abs(rg.c_hat[i] - rc.c_hat[i]));
        worst_d = std::max(worst_d, std::abs(rg.c_hat[i] - rd.c_hat[i]));
    }
    CHECK(worst_c <= 1e-6);
    CHECK(worst_d <= 1e-6);
    for (std::size_t i = 0; i < rg.p_hat.size(); ++i) {
        CHECK(rg.p_hat[i] >= 0.0);
        CHECK(rg.p_hat[i] <= 20.0);
    }

    CHECK_THROWS_AS(pipeline::infer(m, scaler, s.emg, detector, pipeline::PoseKind::Canonical), InvalidInput);
    CHECK_THROWS_AS(pipeline::infer(m, scaler, s.emg, detector, pipeline::PoseKind::Glove), ShapeError);
}

TEST_CASE("pipeline config round trips through json") {
    pipeline::PipelineConfig c;
    c.stride = 64;
    c.sigma = 1.5;
    c.materialize_heatmaps = true;
    const auto back = pipeline::PipelineConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    auto bad = c.to_json();
    bad["stride"] = 0;
    CHECK_THROWS_AS(pipeline::PipelineConfig::from_json(bad), InvalidInput);
}
