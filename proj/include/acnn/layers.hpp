#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "acnn/feature_map.hpp"
#include "acnn/rng.hpp"

namespace acnn {

enum class ActivationKind : std::uint8_t { Identity = 0, ReLU = 1, LeakyReLU = 2 };

struct Activation {
  ActivationKind kind = ActivationKind::ReLU;
  // Negative-side slope; only read for LeakyReLU.
  double slope = 1.0 / 3.0;

  static Activation identity() { return {ActivationKind::Identity, 0.0}; }
  static Activation relu() { return {ActivationKind::ReLU, 0.0}; }
  static Activation leaky(double slope = 1.0 / 3.0) { return {ActivationKind::LeakyReLU, slope}; }

  bool operator==(const Activation&) const = default;
};

struct ConvGeometry {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  // floor((in + 2p - k) / r) + 1, or 0 when the kernel does not fit.
  std::size_t output_size(std::size_t in) const;
  std::size_t weight_count() const { return out_channels * in_channels * kernel * kernel; }
  bool operator==(const ConvGeometry&) const = default;
};

// Weights laid out (out-channel, in-channel, kernel row, kernel column).
template <typename T>
struct ConvParams {
  ConvGeometry geometry;
  Activation activation;
  std::vector<T> weights;
  std::vector<T> bias;

  static ConvParams zeros(const ConvGeometry& g, Activation act);

  T& weight(std::size_t o, std::size_t u, std::size_t h, std::size_t w) {
    return weights[((o * geometry.in_channels + u) * geometry.kernel + h) * geometry.kernel + w];
  }
  const T& weight(std::size_t o, std::size_t u, std::size_t h, std::size_t w) const {
    return weights[((o * geometry.in_channels + u) * geometry.kernel + h) * geometry.kernel + w];
  }
};

template <typename T>
struct ConvGradients {
  std::vector<T> weights;
  std::vector<T> bias;
};

template <typename T>
struct ConvBackwardResult {
  BasicFeatureMap<T> grad_input;
  ConvGradients<T> grads;
};

struct PoolGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t padding = 1;

  // Padding used when none is given: 1 for 3x3 windows, 0 for 2x2.
  static std::size_t default_padding(std::size_t kernel) { return kernel > 0 ? (kernel - 1) / 2 : 0; }
  std::size_t output_size(std::size_t in) const;
  bool operator==(const PoolGeometry&) const = default;
};

// Argmax locations recorded by maxpool_forward: one in-plane index (row * W + col) of the
// input for every output element, in output order.
struct Switches {
  Dims input_dims;
  Dims output_dims;
  std::vector<std::uint32_t> index;

  std::size_t row(std::size_t flat) const { return index[flat] / input_dims.width; }
  std::size_t col(std::size_t flat) const { return index[flat] % input_dims.width; }
  bool operator==(const Switches&) const = default;
};

template <typename T>
struct MaxPoolResult {
  BasicFeatureMap<T> output;
  Switches switches;
};

template <typename T>
struct DropoutResult {
  BasicFeatureMap<T> output;
  // Per-unit multiplier: 0 for dropped units, 1/(1-rate) for survivors, 1 at inference.
  BasicFeatureMap<T> mask;
};

template <typename T>
struct LossResult {
  double loss = 0.0;
  BasicFeatureMap<T> grad_logits;
};

constexpr double kInfinityNorm = std::numeric_limits<double>::infinity();

// Activations

template <typename T>
T activate(T x, const Activation& act);
template <typename T>
T activation_derivative(T pre, const Activation& act);
template <typename T>
BasicFeatureMap<T> apply_activation(const BasicFeatureMap<T>& pre, const Activation& act);
template <typename T>
BasicFeatureMap<T> activation_backward(const BasicFeatureMap<T>& pre, const BasicFeatureMap<T>& grad_out,
                                       const Activation& act);

// Convolution

template <typename T>
BasicFeatureMap<T> conv2d_preactivation(const BasicFeatureMap<T>& input, const ConvParams<T>& params);
template <typename T>
BasicFeatureMap<T> conv2d_forward(const BasicFeatureMap<T>& input, const ConvParams<T>& params);
// Gradients of the activated output. `pre_activation` is recomputed when null.
template <typename T>
ConvBackwardResult<T> conv2d_backward(const BasicFeatureMap<T>& input, const ConvParams<T>& params,
                                      const BasicFeatureMap<T>& grad_out,
                                      const BasicFeatureMap<T>* pre_activation = nullptr);
// Transposed convolution of a pre-activation gradient back to input space (weights only).
template <typename T>
BasicFeatureMap<T> conv2d_backward_data(const BasicFeatureMap<T>& grad_pre, const ConvParams<T>& params,
                                        const Dims& input_dims);

// Pooling

template <typename T>
BasicFeatureMap<T> pnorm_pool_forward(const BasicFeatureMap<T>& input, const PoolGeometry& geom, double p);
template <typename T>
BasicFeatureMap<T> pnorm_pool_forward(const BasicFeatureMap<T>& input, std::size_t k, std::size_t r, double p) {
  return pnorm_pool_forward(input, PoolGeometry{k, r, PoolGeometry::default_padding(k)}, p);
}
template <typename T>
BasicFeatureMap<T> pnorm_pool_backward(const BasicFeatureMap<T>& input, const BasicFeatureMap<T>& output,
                                       const BasicFeatureMap<T>& grad_out, const PoolGeometry& geom, double p);

template <typename T>
MaxPoolResult<T> maxpool_forward(const BasicFeatureMap<T>& input, const PoolGeometry& geom);
template <typename T>
MaxPoolResult<T> maxpool_forward(const BasicFeatureMap<T>& input, std::size_t k, std::size_t r) {
  return maxpool_forward(input, PoolGeometry{k, r, PoolGeometry::default_padding(k)});
}
template <typename T>
BasicFeatureMap<T> maxpool_backward(const BasicFeatureMap<T>& grad_out, const Switches& switches,
                                    const Dims& input_dims);
// Spreads each output gradient evenly over the valid cells of its window (no switches).
template <typename T>
BasicFeatureMap<T> window_uniform_backward(const BasicFeatureMap<T>& grad_out, const Dims& input_dims,
                                           const PoolGeometry& geom);

// Dropout (inverted)

template <typename T>
DropoutResult<T> dropout_forward(const BasicFeatureMap<T>& input, double rate, Rng& rng, bool training);
template <typename T>
BasicFeatureMap<T> dropout_backward(const BasicFeatureMap<T>& grad_out, const BasicFeatureMap<T>& mask);

// Global average pooling

template <typename T>
BasicFeatureMap<T> global_avg_pool(const BasicFeatureMap<T>& input);
template <typename T>
BasicFeatureMap<T> global_avg_pool_backward(const BasicFeatureMap<T>& grad_out, const Dims& input_dims);

// Mean cross-entropy over the batch of softmax(logits); logits must be spatially 1x1.
template <typename T>
LossResult<T> softmax_cross_entropy(const BasicFeatureMap<T>& logits, std::span<const int> labels);
template <typename T>
BasicFeatureMap<T> softmax(const BasicFeatureMap<T>& logits);

}  // namespace acnn
