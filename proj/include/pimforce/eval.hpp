#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pimforce/common.hpp"

namespace pimforce::eval {

// All matrices are T x 9, row-major.

// 1 - SSE / SST pooled over frames and regions, with SST taken about each
// region's own mean. Throws UndefinedMetric for T < 2 or zero SST.
double r_squared(std::span<const double> p, std::span<const double> p_hat);

// RMSE over all entries divided by p_max.
double nrmse(std::span<const double> p, std::span<const double> p_hat, double p_max = kPressureMax);

double mae(std::span<const double> p, std::span<const double> p_hat);

// Fraction of frames whose 9 statuses all match.
double accuracy(std::span<const std::uint8_t> c, std::span<const std::uint8_t> c_hat);

// Contact status (0/1) implied by predicted probabilities: c_hat > cut.
std::vector<std::uint8_t> threshold(std::span<const double> probs, double cut = 0.5);

struct Metrics {
    std::size_t frames = 0;
    std::optional<double> r2;  // empty when undefined for the group
    double nrmse = 0.0;
    double mae = 0.0;  // newtons
    double accuracy = 0.0;
    double mse = 0.0;  // newtons squared
};

struct EvalReport {
    Metrics pooled;
    double p_max = kPressureMax;
    // Column statistics for each region in the fixed region order; accuracy
    // here is per-region status accuracy.
    std::vector<std::pair<std::string, Metrics>> regions;
    // Per posture in vocabulary order; only postures present in the data.
    std::vector<std::pair<std::string, Metrics>> postures;

    nlohmann::json to_json() const;
    std::string table() const;
};

// Computes the pooled metrics, the per-region table and, when `tags` is
// given (one posture name per frame), the per-posture table. Unknown tags
// throw InvalidInput.
EvalReport evaluate(std::span<const double> p, std::span<const double> p_hat,
                    std::span<const std::uint8_t> c, std::span<const std::uint8_t> c_hat,
                    const std::vector<std::string>* tags = nullptr, double p_max = kPressureMax);

Metrics metrics_for(std::span<const double> p, std::span<const double> p_hat,
                    std::span<const std::uint8_t> c, std::span<const std::uint8_t> c_hat, double p_max = kPressureMax);

// The 22 posture names in table order.
const std::vector<std::string>& posture_vocabulary();

}  // namespace pimforce::eval
