#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pimforce/nn/model.hpp"

namespace pimforce::nn {

struct LossBreakdown {
    Tensor total;  // differentiable L
    double classification = 0.0;
    double regression = 0.0;
    double lambda = 1.0;
};

// L = L_c + lambda * L_r with L_c the mean binary cross-entropy of c_hat
// against c and L_r the mean squared error of 2 p_max relu(c_hat - 0.5)
// against p. With lambda == 0 the regression term is left out of the graph.
LossBreakdown joint_loss(const Tensor& c_hat, std::span<const double> c, std::span<const double> p,
                         double lambda, double p_max, double eps = 1e-7);

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    // false: L2 added to the gradient; true: AdamW-style shrinkage.
    bool decoupled = false;
};

class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg);
    // Parameters without a gradient buffer are treated as having zero gradient.
    void step();
    std::size_t steps() const { return t_; }
    void set_lr(double lr) { cfg_.lr = lr; }

private:
    std::vector<Tensor> params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch = 64;
    double lambda = 1.0;
    std::uint64_t seed = 0;
    AdamConfig adam;
    double sigma = 1.0;  // heatmap width in voxels
    // "constant", or "cosine": per-step decay from lr to zero over the run.
    std::string lr_schedule = "constant";

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

// Aligned samples ready for the network.
struct TrainingSet {
    std::size_t size = 0;
    std::vector<double> emg;       // size x 8 x 32 x 64
    std::vector<double> joints;    // size x 21 x 3, grid coordinates
    std::vector<double> pressure;  // size x 9, newtons
    std::vector<double> labels;    // size x 9, 0 or 1

    void validate() const;
};

// Builds network inputs for the listed samples.
Tensor gather_emg(const TrainingSet& d, std::span<const std::size_t> idx);
HandInput gather_hand(const TrainingSet& d, std::span<const std::size_t> idx, double sigma);

struct EpochStats {
    double loss = 0.0;
    double classification = 0.0;
    double regression = 0.0;
    std::size_t batches = 0;
};

struct TrainResult {
    std::vector<EpochStats> history;
};

// Shuffled mini-batch Adam. Batches of fewer than two samples are dropped
// since batch norm needs a batch statistic. Deterministic given the seed.
TrainResult train(PiMForceModel& model, const TrainingSet& data, const TrainConfig& cfg,
                  const std::function<void(std::size_t, const EpochStats&)>& on_epoch = {});

// Evaluation-mode forward pass in chunks; returns C-hat, size x 9.
std::vector<double> predict(PiMForceModel& model, const TrainingSet& data, double sigma = 1.0,
                            std::size_t chunk = 64);

}  // namespace pimforce::nn
