#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "acnn/feature_map.hpp"
#include "acnn/layers.hpp"
#include "acnn/rng.hpp"

namespace acnn {

enum class LayerKind : std::uint8_t { Conv = 0, MaxPool = 1, PNormPool = 2, Dropout = 3, GlobalAvg = 4, SoftmaxCE = 5 };

std::string_view to_string(LayerKind kind);

// Declarative description of one layer. Only the fields relevant to `kind` are read.
struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  std::size_t out_channels = 0;  // Conv
  std::size_t kernel = 1;        // Conv, pools
  std::size_t stride = 1;        // Conv, pools
  std::size_t padding = 0;       // Conv, pools
  Activation activation;         // Conv
  double rate = 0.0;             // Dropout
  double p = kInfinityNorm;      // PNormPool

  static LayerSpec conv(std::size_t out, std::size_t k, std::size_t stride, std::size_t padding,
                        Activation act = Activation::relu());
  static LayerSpec maxpool(std::size_t k, std::size_t stride, std::size_t padding);
  static LayerSpec pnorm(std::size_t k, std::size_t stride, std::size_t padding, double p);
  static LayerSpec dropout(double rate);
  static LayerSpec global_avg();
  static LayerSpec softmax();

  PoolGeometry pool() const { return {kernel, stride, padding}; }
  std::string describe() const;
  bool operator==(const LayerSpec&) const = default;
};

// Sequential network: an input shape, an ordered layer list ending in SoftmaxCE, and one
// ConvParams per convolution layer.
template <typename T>
class BasicModel {
 public:
  // Validates channel chaining and spatial sizes; parameters start at zero.
  BasicModel(std::string arch_id, std::size_t in_channels, std::size_t in_height, std::size_t in_width,
             std::vector<LayerSpec> layers);

  const std::string& arch_id() const { return arch_id_; }
  // Input shape with batch 1.
  const Dims& input_dims() const { return input_dims_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t layer_count() const { return layers_.size(); }
  std::size_t num_classes() const { return num_classes_; }

  bool is_conv(std::size_t i) const { return layers_.at(i).kind == LayerKind::Conv; }
  ConvParams<T>& conv(std::size_t i);
  const ConvParams<T>& conv(std::size_t i) const;
  std::vector<std::size_t> conv_layers() const;

  // Output dims of every layer for the given batch size.
  std::vector<Dims> shape_trace(std::size_t batch = 1) const;

  template <typename U>
  BasicModel<U> cast() const {
    BasicModel<U> out(arch_id_, input_dims_.channels, input_dims_.height, input_dims_.width, layers_);
    for (std::size_t i : conv_layers()) {
      auto& dst = out.conv(i);
      const auto& src = conv(i);
      for (std::size_t k = 0; k < src.weights.size(); ++k) dst.weights[k] = static_cast<U>(src.weights[k]);
      for (std::size_t k = 0; k < src.bias.size(); ++k) dst.bias[k] = static_cast<U>(src.bias[k]);
    }
    return out;
  }

 private:
  std::string arch_id_;
  Dims input_dims_;
  std::vector<LayerSpec> layers_;
  std::vector<ConvParams<T>> params_;  // aligned with layers_; empty for non-conv layers
  std::size_t num_classes_ = 0;
};

using Model = BasicModel<float>;
using Model64 = BasicModel<double>;

enum class Mode { Train, Eval };

// Everything a backward pass or a visualization needs from a forward pass.
template <typename T>
struct ForwardTrace {
  Mode mode = Mode::Eval;
  BasicFeatureMap<T> input;
  std::vector<BasicFeatureMap<T>> outputs;          // outputs[i] is the output of layer i
  std::vector<BasicFeatureMap<T>> pre_activations;  // conv layers only
  std::vector<Switches> switches;                   // max-pool layers only
  std::vector<BasicFeatureMap<T>> dropout_masks;    // dropout layers only

  const BasicFeatureMap<T>& layer_input(std::size_t i) const { return i == 0 ? input : outputs.at(i - 1); }
  // Input of the final SoftmaxCE layer, shaped (batch, classes, 1, 1).
  const BasicFeatureMap<T>& logits() const { return outputs.at(outputs.size() - 2); }
};

template <typename T>
struct ModelGradients {
  double loss = 0.0;
  std::vector<ConvGradients<T>> layers;  // aligned with model layers; empty for non-conv
  BasicFeatureMap<T> input;              // gradient with respect to the input batch
};

// Runs layers [0, stop_after] (all layers by default). Dropout layer i draws from rng.split(i)
// in Train mode; Eval mode never touches the generator.
template <typename T>
ForwardTrace<T> model_forward(const BasicModel<T>& model, const BasicFeatureMap<T>& batch, Mode mode,
                              const Rng& rng, std::optional<std::size_t> stop_after = std::nullopt);
template <typename T>
ForwardTrace<T> model_forward(const BasicModel<T>& model, const BasicFeatureMap<T>& batch) {
  return model_forward(model, batch, Mode::Eval, Rng(0));
}

// Exact gradients of the mean cross-entropy for a full forward trace.
template <typename T>
ModelGradients<T> model_backward(const BasicModel<T>& model, const ForwardTrace<T>& trace,
                                 std::span<const int> labels);

std::size_t count_parameters(const Model& model);
std::size_t count_parameters(const Model64& model);

// Zero-mean Gaussian weights with std sqrt(2 / (in_channels * k * k)); zero biases.
void initialize_weights(Model& model, Rng& rng);

// Replaces every stride-2 convolution by its stride-1 version followed by a 2x2/2 max-pool
// whose padding (0 or 1) preserves the original output size. Weights are copied unchanged.
template <typename T>
BasicModel<T> pool_surgery(const BasicModel<T>& model);

enum class Architecture {
  ModelA, ModelB, ModelC,
  StridedA, StridedB, StridedC,
  ConvPoolA, ConvPoolB, ConvPoolC,
  AllCnnA, AllCnnB, AllCnnC,
  LargeAllCnn, ImageNetAllCnn,
};

std::string_view to_string(Architecture arch);
// Accepts canonical ids ("all-cnn-c") and common aliases ("allcnn-c", "c", "strided-a").
Architecture parse_architecture(std::string_view id);
std::span<const Architecture> all_architectures();

// Hidden channel counts are multiplied by `scale`, rounded to the nearest multiple of 4
// (minimum 4). The class count is never scaled.
Model build_architecture(Architecture arch, std::size_t classes = 10, double scale = 1.0);
Model build_architecture(std::string_view id, std::size_t classes = 10, double scale = 1.0);
std::size_t scale_channels(std::size_t channels, double scale);

}  // namespace acnn
