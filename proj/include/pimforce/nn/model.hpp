#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pimforce/nn/ops.hpp"
#include "pimforce/nn/tensor.hpp"
#include "pimforce/rng.hpp"

namespace pimforce::nn {

struct ModelConfig {
    std::string preset = "paper";

    // sEMG branch. Each encoder block is conv3x3-BN-ReLU-maxpool with a
    // square pool of the listed factor; each decoder block is
    // conv3x3-BN-ReLU-upsample.
    std::vector<std::size_t> emg_encoder = {32, 128, 256};
    std::vector<std::size_t> emg_pool = {2, 2, 4};
    std::vector<std::size_t> emg_decoder = {256, 128, 1};
    std::vector<std::size_t> emg_upsample = {2, 2, 1};
    std::string emg_upsample_mode = "nearest";  // or "linear"

    // Pose branch: 3-D ResNet with basic blocks.
    std::vector<std::size_t> resnet_layers = {3, 4, 6, 3};
    std::vector<std::size_t> resnet_channels = {64, 128, 256, 512};
    std::size_t stem_kernel = 7;
    std::size_t stem_stride = 2;
    bool stem_pool = true;

    std::size_t feature_dim = 512;
    std::size_t fusion_width = 256;
    bool conv_bias = false;

    std::size_t regions = 9;
    double p_max = 20.0;

    double bn_momentum = 0.1;
    double bn_eps = 1e-5;

    static ModelConfig paper();
    static ModelConfig desk();
    // Throws InvalidInput when a width is zero or the lists disagree.
    void validate() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Pose input: either dense heatmaps [N, 21, 48, 48, 48] or their separable
// per-axis profiles [N, 21, 3, 48]. Both produce identical stem outputs.
struct HandInput {
    Tensor dense;
    Tensor profiles;
};

struct ParamCounts {
    std::size_t emg = 0;
    std::size_t hand = 0;
    std::size_t fusion = 0;
    std::size_t total() const { return emg + hand + fusion; }
};

class PiMForceModel {
public:
    PiMForceModel(const ModelConfig& cfg, std::uint64_t seed);
    PiMForceModel(const PiMForceModel&) = delete;
    PiMForceModel& operator=(const PiMForceModel&) = delete;
    PiMForceModel(PiMForceModel&&) = default;

    const ModelConfig& config() const { return cfg_; }

    void set_training(bool t) { training_ = t; }
    bool training() const { return training_; }

    // e: [B, 8, 32, 64] -> [B, feature_dim]
    Tensor emg_forward(const Tensor& e) const;
    // -> [B, feature_dim]
    Tensor hand_forward(const HandInput& h) const;
    // -> C-hat [B, regions], sigmoid outputs
    Tensor fusion_forward(const Tensor& f_emg, const Tensor& f_hand) const;
    Tensor forward(const Tensor& e, const HandInput& h) const;

    std::vector<NamedTensor>& parameters() { return params_; }
    const std::vector<NamedTensor>& parameters() const { return params_; }
    // Batch-norm running statistics.
    std::vector<NamedTensor>& buffers() { return buffers_; }
    const std::vector<NamedTensor>& buffers() const { return buffers_; }

    ParamCounts parameter_counts() const;

    void zero_grad();

    struct Conv {
        Tensor w, b;
        WindowSpec spec;
    };
    struct Norm {
        Tensor gamma, beta, mean, var;
    };
    struct Dense {
        Tensor w, b;
    };
    struct Block {
        Conv conv1, conv2;
        Norm bn1, bn2;
        bool has_down = false;
        Conv down;
        Norm down_bn;
    };

private:
    class Builder;

    Tensor apply(const Conv& c, const Tensor& x) const;
    Tensor apply(const Norm& n, const Tensor& x) const;
    Tensor apply(const Dense& d, const Tensor& x) const;
    Tensor apply(const Block& b, const Tensor& x) const;

    ModelConfig cfg_;
    bool training_ = true;
    std::vector<NamedTensor> params_;
    std::vector<NamedTensor> buffers_;

    std::vector<Conv> emg_enc_conv_, emg_dec_conv_;
    std::vector<Norm> emg_enc_bn_, emg_dec_bn_;
    Dense emg_fc_;
    std::size_t emg_flat_ = 0;

    Conv stem_;
    Norm stem_bn_;
    std::vector<Block> blocks_;
    Dense hand_fc_;

    Dense fuse1_, fuse2_, head_;
    Norm fuse1_bn_, fuse2_bn_;
};

}  // namespace pimforce::nn
