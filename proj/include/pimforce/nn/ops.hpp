#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "pimforce/nn/tensor.hpp"

namespace pimforce::nn {

using Dims3 = std::array<std::size_t, 3>;

// Spatial geometry of a convolution or pooling window. 2-D tensors are
// treated as 3-D with a unit leading spatial dimension, so only the trailing
// two entries matter for them.
struct WindowSpec {
    Dims3 stride{1, 1, 1};
    Dims3 pad{0, 0, 0};
};

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor reshape(const Tensor& x, Shape shape);
Tensor mean_all(const Tensor& x);

// x [N, F], weight [O, F], bias [O] (may be undefined).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Concatenates [N, F1] and [N, F2] along features.
Tensor concat_features(const Tensor& a, const Tensor& b);

// x [N, C, (D,) H, W], weight [O, C, (KD,) KH, KW], bias [O] or undefined.
Tensor conv(const Tensor& x, const Tensor& weight, const Tensor& bias, const WindowSpec& spec);

// First convolution of the pose branch evaluated on separable Gaussian
// heatmaps. profiles [N, K, 3, G] holds per-channel 1-D profiles along
// (x, y, z); the implied input is their outer product [N, K, G, G, G].
// Gradients flow to `weight` only.
Tensor separable_conv3d(const Tensor& profiles, const Tensor& weight, const WindowSpec& spec);

struct BatchNormState {
    std::vector<double>* running_mean = nullptr;
    std::vector<double>* running_var = nullptr;
    double momentum = 0.1;
    double eps = 1e-5;
};

// Normalizes over every axis except 1. In training mode batch statistics are
// used and the running statistics are updated.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  const BatchNormState& state, bool training);

// Max pooling with implicit -inf padding; the first maximum wins ties.
Tensor max_pool(const Tensor& x, const Dims3& kernel, const WindowSpec& spec);

// Nearest-neighbour upsampling by integer factors per spatial axis.
Tensor upsample_nearest(const Tensor& x, const Dims3& factor);

// Bilinear (4-D) or trilinear (5-D) upsampling with half-pixel centers and
// clamped edges.
Tensor upsample_linear(const Tensor& x, const Dims3& factor);

// Mean over all spatial positions: [N, C, ...] -> [N, C].
Tensor global_avg_pool(const Tensor& x);

// 2 * p_max * relu(c - 0.5).
Tensor pressure_from_probs(const Tensor& c, double p_max);

// Mean binary cross-entropy with probabilities clamped to [eps, 1 - eps].
Tensor binary_cross_entropy(const Tensor& probs, std::span<const double> targets,
                            double eps = 1e-7);

// Mean squared error against fixed targets.
Tensor mse(const Tensor& pred, std::span<const double> targets);

// Output spatial size of a convolution or pooling window.
std::size_t window_out(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

}  // namespace pimforce::nn
