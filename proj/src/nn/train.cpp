#include "pimforce/nn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "pimforce/common.hpp"
#include "pimforce/handkin.hpp"
#include "pimforce/rng.hpp"
#include "pimforce/voxel.hpp"

namespace pimforce::nn {

namespace {
constexpr std::size_t kEmgSize = kEmgChannels * kStftFrames * kStftBins;
constexpr std::size_t kJointSize = kNumJoints * 3;
// Offsets the shuffling stream from the initialization stream.
constexpr std::uint64_t kShuffleStream = 0x5deece66dULL;
}  // namespace

LossBreakdown joint_loss(const Tensor& c_hat, std::span<const double> c, std::span<const double> p,
                         double lambda, double p_max, double eps) {
    if (c.size() != c_hat.numel() || p.size() != c_hat.numel())
        throw ShapeError("joint_loss: targets do not match predictions " + shape_str(c_hat.shape()));
    LossBreakdown out;
    out.lambda = lambda;
    Tensor lc = binary_cross_entropy(c_hat, c, eps);
    out.classification = lc.item();
    if (lambda == 0.0) {
        NoGradGuard guard;
        out.regression = mse(pressure_from_probs(c_hat, p_max), p).item();
        out.total = lc;
        return out;
    }
    Tensor lr = mse(pressure_from_probs(c_hat, p_max), p);
    out.regression = lr.item();
    out.total = add(lc, scale(lr, lambda));
    return out;
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto w = params_[i].data();
        const auto g = params_[i].grad_view();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
            double gk = g.empty() ? 0.0 : g[k];
            if (!cfg_.decoupled) gk += cfg_.weight_decay * w[k];
            m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
            v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            if (cfg_.decoupled) w[k] -= cfg_.lr * cfg_.weight_decay * w[k];
            w[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

nlohmann::json TrainConfig::to_json() const {
    return {{"epochs", epochs},
            {"batch", batch},
            {"lambda", lambda},
            {"seed", seed},
            {"lr", adam.lr},
            {"beta1", adam.beta1},
            {"beta2", adam.beta2},
            {"adam_eps", adam.eps},
            {"weight_decay", adam.weight_decay},
            {"decoupled_weight_decay", adam.decoupled},
            {"sigma", sigma},
            {"lr_schedule", lr_schedule}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    auto get = [&j](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    try {
        get("epochs", c.epochs);
        get("batch", c.batch);
        get("lambda", c.lambda);
        get("seed", c.seed);
        get("lr", c.adam.lr);
        get("beta1", c.adam.beta1);
        get("beta2", c.adam.beta2);
        get("adam_eps", c.adam.eps);
        get("weight_decay", c.adam.weight_decay);
        get("decoupled_weight_decay", c.adam.decoupled);
        get("sigma", c.sigma);
        get("lr_schedule", c.lr_schedule);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("train config: ") + e.what());
    }
    if (c.batch < 2) throw InvalidInput("train config: batch must be >= 2");
    if (!(c.adam.lr > 0.0)) throw InvalidInput("train config: lr must be positive");
    if (c.lambda < 0.0) throw InvalidInput("train config: lambda must be >= 0");
    if (!(c.sigma > 0.0)) throw InvalidInput("train config: sigma must be positive");
    if (c.lr_schedule != "constant" && c.lr_schedule != "cosine")
        throw InvalidInput("train config: lr_schedule must be constant or cosine");
    return c;
}

void TrainingSet::validate() const {
    if (emg.size() != size * kEmgSize || joints.size() != size * kJointSize ||
        pressure.size() != size * kNumRegions || labels.size() != size * kNumRegions)
        throw ShapeError("training set: buffer sizes do not match " + std::to_string(size) + " samples");
}

Tensor gather_emg(const TrainingSet& d, std::span<const std::size_t> idx) {
    std::vector<double> v(idx.size() * kEmgSize);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(d.emg.begin() + static_cast<std::ptrdiff_t>(idx[i] * kEmgSize), kEmgSize,
                    v.begin() + static_cast<std::ptrdiff_t>(i * kEmgSize));
    return Tensor::from({idx.size(), kEmgChannels, kStftFrames, kStftBins}, std::move(v));
}

HandInput gather_hand(const TrainingSet& d, std::span<const std::size_t> idx, double sigma) {
    constexpr std::size_t per = kNumJoints * 3 * kGrid;
    std::vector<double> v(idx.size() * per);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        handkin::JointSet js;
        for (std::size_t k = 0; k < kNumJoints; ++k)
            for (std::size_t a = 0; a < 3; ++a) js.joints[k][a] = d.joints[idx[i] * kJointSize + k * 3 + a];
        const auto prof = voxel::heatmap_profiles(js, sigma);
        std::copy(prof.begin(), prof.end(), v.begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    HandInput h;
    h.profiles = Tensor::from({idx.size(), kNumJoints, 3, kGrid}, std::move(v));
    return h;
}

namespace {

std::vector<double> gather_rows(const std::vector<double>& src, std::span<const std::size_t> idx) {
    std::vector<double> out(idx.size() * kNumRegions);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(idx[i] * kNumRegions), kNumRegions,
                    out.begin() + static_cast<std::ptrdiff_t>(i * kNumRegions));
    return out;
}

}  // namespace

TrainResult train(PiMForceModel& model, const TrainingSet& data, const TrainConfig& cfg,
                  const std::function<void(std::size_t, const EpochStats&)>& on_epoch) {
    data.validate();
    if (data.size < 2) throw InvalidInput("train: need at least two samples");
    if (cfg.batch < 2) throw InvalidInput("train: batch must be >= 2");

    std::vector<Tensor> params;
    for (auto& p : model.parameters()) params.push_back(p.tensor);
    Adam opt(params, cfg.adam);
    Rng shuffle_rng(cfg.seed ^ kShuffleStream);
    std::vector<std::size_t> order(data.size);
    std::iota(order.begin(), order.end(), 0);

    std::size_t per_epoch = data.size / cfg.batch;
    if (data.size % cfg.batch >= 2) ++per_epoch;
    const double total_steps = static_cast<double>(per_epoch * cfg.epochs);
    const bool cosine = cfg.lr_schedule == "cosine";

    model.set_training(true);
    TrainResult result;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        EpochStats stats;
        for (std::size_t start = 0; start < data.size; start += cfg.batch) {
            const std::size_t end = std::min(data.size, start + cfg.batch);
            if (end - start < 2) break;
            std::span<const std::size_t> idx(order.data() + start, end - start);
            if (cosine)
                opt.set_lr(cfg.adam.lr * 0.5 *
                           (1.0 + std::cos(std::numbers::pi * static_cast<double>(opt.steps()) / total_steps)));
            model.zero_grad();
            const Tensor c_hat = model.forward(gather_emg(data, idx), gather_hand(data, idx, cfg.sigma));
            const auto c = gather_rows(data.labels, idx);
            const auto p = gather_rows(data.pressure, idx);
            LossBreakdown loss = joint_loss(c_hat, c, p, cfg.lambda, model.config().p_max);
            loss.total.backward();
            opt.step();
            stats.loss += loss.total.item();
            stats.classification += loss.classification;
            stats.regression += loss.regression;
            ++stats.batches;
        }
        if (stats.batches) {
            const double n = static_cast<double>(stats.batches);
            stats.loss /= n;
            stats.classification /= n;
            stats.regression /= n;
        }
        result.history.push_back(stats);
        if (on_epoch) on_epoch(epoch, stats);
    }
    model.set_training(false);
    return result;
}

std::vector<double> predict(PiMForceModel& model, const TrainingSet& data, double sigma, std::size_t chunk) {
    data.validate();
    const bool was_training = model.training();
    model.set_training(false);
    NoGradGuard guard;
    std::vector<double> out(data.size * kNumRegions);
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size; start += chunk) {
        const std::size_t end = std::min(data.size, start + chunk);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Tensor c = model.forward(gather_emg(data, idx), gather_hand(data, idx, sigma));
        std::copy(c.data().begin(), c.data().end(),
                  out.begin() + static_cast<std::ptrdiff_t>(start * kNumRegions));
    }
    model.set_training(was_training);
    return out;
}

}  // namespace pimforce::nn
