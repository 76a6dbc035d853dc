#include "pimforce/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <memory>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "pimforce/pressure.hpp"

namespace pimforce::eval {

namespace {

constexpr std::size_t I = kNumRegions;

std::size_t frames_of(std::size_t n, const char* what) {
    if (n % I) throw ShapeError(std::string(what) + ": length " + std::to_string(n) + " is not a multiple of 9");
    return n / I;
}

template <typename A, typename B>
std::size_t check_pair(std::span<const A> a, std::span<const B> b, const char* what) {
    if (a.size() != b.size())
        throw ShapeError(std::string(what) + ": shapes differ (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
    return frames_of(a.size(), what);
}

double sse(std::span<const double> p, std::span<const double> q) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - q[i]) * (p[i] - q[i]);
    return s;
}

nlohmann::json metrics_json(const Metrics& m, double p_max) {
    nlohmann::json j = {{"frames", m.frames},
                        {"nrmse", m.nrmse},
                        {"mae_newton", m.mae},
                        {"mae_percent_of_pmax", 100.0 * m.mae / p_max},
                        {"accuracy", m.accuracy},
                        {"mse", m.mse}};
    j["r2"] = m.r2 ? nlohmann::json(*m.r2) : nlohmann::json(nullptr);
    return j;
}

}  // namespace

double r_squared(std::span<const double> p, std::span<const double> p_hat) {
    const std::size_t t = check_pair(p, p_hat, "r_squared");
    if (t < 2) throw UndefinedMetric("r_squared: need at least two frames");
    std::array<double, I> mean{};
    for (std::size_t f = 0; f < t; ++f)
        for (std::size_t i = 0; i < I; ++i) mean[i] += p[f * I + i];
    for (auto& m : mean) m /= static_cast<double>(t);
    double sst = 0.0;
    for (std::size_t f = 0; f < t; ++f)
        for (std::size_t i = 0; i < I; ++i) sst += (p[f * I + i] - mean[i]) * (p[f * I + i] - mean[i]);
    if (sst == 0.0) throw UndefinedMetric("r_squared: ground truth has zero variance");
    return 1.0 - sse(p, p_hat) / sst;
}

double nrmse(std::span<const double> p, std::span<const double> p_hat, double p_max) {
    check_pair(p, p_hat, "nrmse");
    if (p.empty()) throw UndefinedMetric("nrmse: no frames");
    return std::sqrt(sse(p, p_hat) / static_cast<double>(p.size())) / p_max;
}

double mae(std::span<const double> p, std::span<const double> p_hat) {
    check_pair(p, p_hat, "mae");
    if (p.empty()) throw UndefinedMetric("mae: no frames");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - p_hat[i]);
    return s / static_cast<double>(p.size());
}

double accuracy(std::span<const std::uint8_t> c, std::span<const std::uint8_t> c_hat) {
    const std::size_t t = check_pair(c, c_hat, "accuracy");
    if (t == 0) throw UndefinedMetric("accuracy: no frames");
    std::size_t good = 0;
    for (std::size_t f = 0; f < t; ++f) {
        bool all = true;
        for (std::size_t i = 0; i < I; ++i) all = all && (c[f * I + i] == c_hat[f * I + i]);
        good += all;
    }
    return static_cast<double>(good) / static_cast<double>(t);
}

std::vector<std::uint8_t> threshold(std::span<const double> probs, double cut) {
    std::vector<std::uint8_t> out(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] > cut;
    return out;
}

Metrics metrics_for(std::span<const double> p, std::span<const double> p_hat, std::span<const std::uint8_t> c,
                    std::span<const std::uint8_t> c_hat, double p_max) {
    Metrics m;
    m.frames = check_pair(p, p_hat, "metrics");
    check_pair(c, c_hat, "metrics");
    if (c.size() != p.size()) throw ShapeError("metrics: label and pressure shapes differ");
    try {
        m.r2 = r_squared(p, p_hat);
    } catch (const UndefinedMetric&) {
        m.r2.reset();
    }
    m.nrmse = nrmse(p, p_hat, p_max);
    m.mae = mae(p, p_hat);
    m.accuracy = accuracy(c, c_hat);
    m.mse = sse(p, p_hat) / static_cast<double>(p.size());
    return m;
}

namespace {

Metrics region_metrics(std::span<const double> p, std::span<const double> p_hat, std::span<const std::uint8_t> c,
                       std::span<const std::uint8_t> c_hat, std::size_t region, double p_max) {
    const std::size_t t = p.size() / I;
    Metrics m;
    m.frames = t;
    double mean = 0.0, err2 = 0.0, abs_err = 0.0;
    std::size_t good = 0;
    for (std::size_t f = 0; f < t; ++f) {
        const std::size_t k = f * I + region;
        mean += p[k];
        err2 += (p[k] - p_hat[k]) * (p[k] - p_hat[k]);
        abs_err += std::abs(p[k] - p_hat[k]);
        good += c[k] == c_hat[k];
    }
    const double n = static_cast<double>(t);
    mean /= n;
    double sst = 0.0;
    for (std::size_t f = 0; f < t; ++f) sst += (p[f * I + region] - mean) * (p[f * I + region] - mean);
    if (t >= 2 && sst > 0.0) m.r2 = 1.0 - err2 / sst;
    m.mse = err2 / n;
    m.nrmse = std::sqrt(m.mse) / p_max;
    m.mae = abs_err / n;
    m.accuracy = static_cast<double>(good) / n;
    return m;
}

}  // namespace

EvalReport evaluate(std::span<const double> p, std::span<const double> p_hat, std::span<const std::uint8_t> c,
                    std::span<const std::uint8_t> c_hat, const std::vector<std::string>* tags, double p_max) {
    EvalReport rep;
    rep.p_max = p_max;
    rep.pooled = metrics_for(p, p_hat, c, c_hat, p_max);
    const std::size_t t = rep.pooled.frames;
    for (std::size_t i = 0; i < I; ++i)
        rep.regions.emplace_back(pressure::region_names()[i], region_metrics(p, p_hat, c, c_hat, i, p_max));
    if (!tags) return rep;
    if (tags->size() != t)
        throw ShapeError("evaluate: " + std::to_string(tags->size()) + " posture tags for " + std::to_string(t) +
                         " frames");
    const auto& vocab = posture_vocabulary();
    std::unordered_map<std::string, std::size_t> order;
    for (std::size_t k = 0; k < vocab.size(); ++k) order[vocab[k]] = k;
    std::vector<std::vector<std::size_t>> members(vocab.size());
    for (std::size_t f = 0; f < t; ++f) {
        auto it = order.find((*tags)[f]);
        if (it == order.end()) throw InvalidInput("evaluate: unknown posture tag '" + (*tags)[f] + "'");
        members[it->second].push_back(f);
    }
    for (std::size_t k = 0; k < vocab.size(); ++k) {
        if (members[k].empty()) continue;
        const std::size_t n = members[k].size() * I;
        std::vector<double> gp(n), gq(n);
        std::vector<std::uint8_t> gc(n), gch(n);
        for (std::size_t a = 0; a < members[k].size(); ++a)
            for (std::size_t i = 0; i < I; ++i) {
                const std::size_t src = members[k][a] * I + i;
                gp[a * I + i] = p[src];
                gq[a * I + i] = p_hat[src];
                gc[a * I + i] = c[src];
                gch[a * I + i] = c_hat[src];
            }
        rep.postures.emplace_back(vocab[k], metrics_for(gp, gq, gc, gch, p_max));
    }
    return rep;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    j["p_max"] = p_max;
    j["pooled"] = metrics_json(pooled, p_max);
    j["regions"] = nlohmann::json::object();
    for (const auto& [name, m] : regions) j["regions"][name] = metrics_json(m, p_max);
    j["postures"] = nlohmann::json::array();
    for (const auto& [name, m] : postures) {
        auto e = metrics_json(m, p_max);
        e["posture"] = name;
        j["postures"].push_back(e);
    }
    return j;
}

std::string EvalReport::table() const {
    std::ostringstream os;
    char buf[64];
    auto pct = [&](std::optional<double> v) {
        if (!v) return std::string("n/a");
        std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
        return std::string(buf);
    };
    auto col = [&](const std::string& s, int w) {
        std::snprintf(buf, sizeof buf, "%*s", w, s.c_str());
        return std::string(buf);
    };
    os << "frames " << pooled.frames << "\n";
    os << "R2(%) " << pct(pooled.r2) << "  NRMSE(%) " << pct(pooled.nrmse) << "  Acc(%) " << pct(pooled.accuracy)
       << "  MAE(N) ";
    std::snprintf(buf, sizeof buf, "%.3f", pooled.mae);
    os << buf << "  MAE(%Pmax) " << pct(pooled.mae / p_max) << "\n\n";

    os << col("metric", 10);
    for (const auto& [name, m] : regions) os << col(name, 9);
    os << "\n";
    const char* rows[] = {"R2(%)", "NRMSE(%)", "Acc(%)", "MAE(N)"};
    for (int r = 0; r < 4; ++r) {
        os << col(rows[r], 10);
        for (const auto& [name, m] : regions) {
            std::string v;
            if (r == 0) v = pct(m.r2);
            if (r == 1) v = pct(m.nrmse);
            if (r == 2) v = pct(m.accuracy);
            if (r == 3) {
                std::snprintf(buf, sizeof buf, "%.3f", m.mae);
                v = buf;
            }
            os << col(v, 9);
        }
        os << "\n";
    }
    if (!postures.empty()) {
        os << "\n" << col("posture", 20) << col("frames", 8) << col("R2(%)", 9) << col("NRMSE(%)", 9)
           << col("Acc(%)", 9) << "\n";
        for (const auto& [name, m] : postures)
            os << col(name, 20) << col(std::to_string(m.frames), 8) << col(pct(m.r2), 9) << col(pct(m.nrmse), 9)
               << col(pct(m.accuracy), 9) << "\n";
    }
    return os.str();
}

const std::vector<std::string>& posture_vocabulary() {
    static const std::vector<std::string> names = {
        "I-Press",       "M-Press",     "R-Press",         "P-Press",      "TI-Press",
        "IM-Press",      "Palm-Press",  "TI-Pinch",        "TM-Pinch",     "TIM-Pinch",
        "TIMR-Pinch",    "TIMRP-Pinch", "Palmar Pinch",    "Lateral",      "Sphere 3 Finger",
        "Power Sphere",  "Ring",        "Medium Wrap",     "Fixed Hook",   "Quadpod",
        "Parallel Extension", "Adducted Thumb"};
    return names;
}

}  // namespace pimforce::eval
