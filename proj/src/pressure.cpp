#include "pimforce/pressure.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace pimforce::pressure {

const std::array<std::string, kNumRegions>& region_names() {
    static const std::array<std::string, kNumRegions> names = {
        "thumb",   "index",   "middle",  "ring",    "pinky",
        "palm_ur", "palm_ul", "palm_lr", "palm_ll",
    };
    return names;
}

double CalibrationCurve::force(double conductance) const {
    if (conductance <= 0.0) return 0.0;
    return std::max(0.0, slope * conductance + quadratic * conductance * conductance);
}

nlohmann::json CalibrationCurve::to_json() const {
    return {{"slope", slope},
            {"quadratic", quadratic},
            {"residual_rms", residual_rms},
            {"max_conductance", max_conductance}};
}

CalibrationCurve CalibrationCurve::from_json(const nlohmann::json& j) {
    CalibrationCurve c;
    c.slope = j.at("slope").get<double>();
    c.quadratic = j.value("quadratic", 0.0);
    c.residual_rms = j.value("residual_rms", 0.0);
    c.max_conductance = j.value("max_conductance", 0.0);
    return c;
}

namespace {

double rms_residual(std::span<const CalibrationSample> s, const CalibrationCurve& c) {
    double acc = 0.0;
    for (const auto& x : s) {
        const double r = c.slope * x.conductance + c.quadratic * x.conductance * x.conductance -
                         x.force;
        acc += r * r;
    }
    return std::sqrt(acc / static_cast<double>(s.size()));
}

}  // namespace

CalibrationCurve fit_calibration(std::span<const CalibrationSample> samples, bool quadratic) {
    std::set<double> distinct;
    double gmax = 0.0;
    for (const auto& s : samples) {
        if (!std::isfinite(s.conductance) || !std::isfinite(s.force) || s.conductance < 0.0)
            throw InvalidInput("calibration: samples must be finite with conductance >= 0");
        distinct.insert(s.conductance);
        gmax = std::max(gmax, s.conductance);
    }
    if (distinct.size() < 2 || !(gmax > 0.0))
        throw InvalidInput("calibration: need at least two distinct conductance values");

    double s2 = 0.0, s3 = 0.0, s4 = 0.0, sf1 = 0.0, sf2 = 0.0;
    for (const auto& s : samples) {
        const double g = s.conductance;
        s2 += g * g;
        s3 += g * g * g;
        s4 += g * g * g * g;
        sf1 += g * s.force;
        sf2 += g * g * s.force;
    }

    CalibrationCurve lin;
    lin.slope = sf1 / s2;
    lin.max_conductance = gmax;
    lin.residual_rms = rms_residual(samples, lin);
    if (!quadratic) return lin;

    const double det = s2 * s4 - s3 * s3;
    if (std::abs(det) <= 1e-12 * s2 * s4) return lin;
    CalibrationCurve q;
    q.slope = (sf1 * s4 - sf2 * s3) / det;
    q.quadratic = (s2 * sf2 - s3 * sf1) / det;
    q.max_conductance = gmax;
    // Derivative slope + 2 q g is linear in g; checking both ends covers the range.
    if (q.slope < 0.0 || q.slope + 2.0 * q.quadratic * gmax < 0.0) return lin;
    q.residual_rms = rms_residual(samples, q);
    return q;
}

RegionMap RegionMap::reference() {
    // Glove node ids follow the vendor's 65-node layout: one tip node per
    // finger strip and eleven palm nodes split over the four quadrants.
    RegionMap m;
    m.glove_nodes = {{
        {4},             // thumb tip
        {17},            // index tip
        {30},            // middle tip
        {43},            // ring tip
        {56},            // pinky tip
        {57, 58, 59},    // palm upper right
        {60, 61, 62},    // palm upper left
        {63, 64, 52},    // palm lower right
        {53, 54},        // palm lower left
    }};
    m.fsrs = {{{0}, {1}, {2}, {3}, {4}, {}, {}, {}, {}}};
    return m;
}

void RegionMap::validate() const {
    std::set<std::size_t> nodes, fsr_ids;
    for (std::size_t r = 0; r < kNumRegions; ++r) {
        if (glove_nodes[r].empty() && fsrs[r].empty())
            throw InvalidInput("region map: region " + region_names()[r] + " has no sensors");
        for (auto n : glove_nodes[r]) {
            if (n >= kGloveNodes) throw InvalidInput("region map: glove node out of range");
            if (!nodes.insert(n).second)
                throw InvalidInput("region map: glove node assigned twice");
        }
        for (auto f : fsrs[r]) {
            if (f >= kFingertipFsrs) throw InvalidInput("region map: fsr out of range");
            if (!fsr_ids.insert(f).second) throw InvalidInput("region map: fsr assigned twice");
        }
    }
}

RegionMap RegionMap::from_json(const nlohmann::json& j) {
    RegionMap m;
    const auto& regions = j.at("regions");
    for (std::size_t r = 0; r < kNumRegions; ++r) {
        const auto& e = regions.at(region_names()[r]);
        m.glove_nodes[r] = e.value("glove_nodes", std::vector<std::size_t>{});
        m.fsrs[r] = e.value("fsrs", std::vector<std::size_t>{});
    }
    m.validate();
    return m;
}

RegionMap RegionMap::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open region map: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("region map json: " + std::string(e.what()));
    }
    return from_json(j);
}

nlohmann::json RegionMap::to_json() const {
    nlohmann::json regions = nlohmann::json::object();
    for (std::size_t r = 0; r < kNumRegions; ++r)
        regions[region_names()[r]] = {{"glove_nodes", glove_nodes[r]}, {"fsrs", fsrs[r]}};
    return {{"regions", regions}};
}

RegionPressure aggregate_regions(const RawPressureFrame& f, const RegionMap& map) {
    RegionPressure p;
    p.timestamp = f.timestamp;
    for (std::size_t r = 0; r < kNumRegions; ++r) {
        double v = 0.0;
        for (auto n : map.glove_nodes[r]) v = std::max(v, f.glove[n]);
        for (auto s : map.fsrs[r]) v = std::max(v, f.fsr[s]);
        p.values[r] = v;
    }
    return p;
}

double clip_floor_value(double v) {
    if (v > kPressureMax) return kPressureMax;
    if (v < kPressureFloor) return 0.0;
    return v;
}

RegionPressure clip_floor(const RegionPressure& p) {
    RegionPressure out = p;
    for (auto& v : out.values) v = clip_floor_value(v);
    return out;
}

RegionLabels labels(const RegionPressure& p) {
    RegionLabels l;
    for (std::size_t r = 0; r < kNumRegions; ++r) l.present[r] = p.values[r] > 0.0;
    return l;
}

}  // namespace pimforce::pressure
