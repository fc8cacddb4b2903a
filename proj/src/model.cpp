#include "acnn/model.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <sstream>

namespace acnn {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::PNormPool: return "pnormpool";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::GlobalAvg: return "global_avg";
    case LayerKind::SoftmaxCE: return "softmax";
  }
  return "unknown";
}

LayerSpec LayerSpec::conv(std::size_t out, std::size_t k, std::size_t stride, std::size_t padding, Activation act) {
  LayerSpec s;
  s.kind = LayerKind::Conv;
  s.out_channels = out;
  s.kernel = k;
  s.stride = stride;
  s.padding = padding;
  s.activation = act;
  return s;
}

LayerSpec LayerSpec::maxpool(std::size_t k, std::size_t stride, std::size_t padding) {
  LayerSpec s;
  s.kind = LayerKind::MaxPool;
  s.kernel = k;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::pnorm(std::size_t k, std::size_t stride, std::size_t padding, double p) {
  LayerSpec s = maxpool(k, stride, padding);
  s.kind = LayerKind::PNormPool;
  s.p = p;
  return s;
}

LayerSpec LayerSpec::dropout(double rate) {
  LayerSpec s;
  s.kind = LayerKind::Dropout;
  s.rate = rate;
  return s;
}

LayerSpec LayerSpec::global_avg() {
  LayerSpec s;
  s.kind = LayerKind::GlobalAvg;
  return s;
}

LayerSpec LayerSpec::softmax() {
  LayerSpec s;
  s.kind = LayerKind::SoftmaxCE;
  return s;
}

std::string LayerSpec::describe() const {
  std::ostringstream os;
  switch (kind) {
    case LayerKind::Conv: {
      os << kernel << "x" << kernel << " conv " << out_channels;
      switch (activation.kind) {
        case ActivationKind::ReLU: os << " ReLU"; break;
        case ActivationKind::LeakyReLU: os << " LeakyReLU"; break;
        case ActivationKind::Identity: break;
      }
      os << " stride " << stride << " pad " << padding;
      break;
    }
    case LayerKind::MaxPool:
      os << kernel << "x" << kernel << " max-pooling stride " << stride << " pad " << padding;
      break;
    case LayerKind::PNormPool:
      os << kernel << "x" << kernel << " " << p << "-norm pooling stride " << stride << " pad " << padding;
      break;
    case LayerKind::Dropout: os << "dropout " << rate; break;
    case LayerKind::GlobalAvg: os << "global averaging"; break;
    case LayerKind::SoftmaxCE: os << "softmax"; break;
  }
  return os.str();
}

template <typename T>
BasicModel<T>::BasicModel(std::string arch_id, std::size_t in_channels, std::size_t in_height,
                          std::size_t in_width, std::vector<LayerSpec> layers)
    : arch_id_(std::move(arch_id)), input_dims_{1, in_channels, in_height, in_width}, layers_(std::move(layers)) {
  require_positive_dims(input_dims_);
  if (layers_.empty() || layers_.back().kind != LayerKind::SoftmaxCE) {
    throw Error(ErrorCode::BadConfig, "model must end with a softmax layer");
  }
  params_.resize(layers_.size());
  std::size_t channels = in_channels;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& s = layers_[i];
    switch (s.kind) {
      case LayerKind::Conv:
        if (s.out_channels == 0 || s.kernel == 0 || s.stride == 0) {
          throw Error(ErrorCode::BadConfig, "layer " + std::to_string(i) + ": invalid convolution");
        }
        params_[i] = ConvParams<T>::zeros({channels, s.out_channels, s.kernel, s.stride, s.padding}, s.activation);
        channels = s.out_channels;
        break;
      case LayerKind::Dropout:
        if (!(s.rate >= 0.0 && s.rate < 1.0)) throw Error(ErrorCode::BadRate, "layer " + std::to_string(i));
        break;
      case LayerKind::SoftmaxCE:
        if (i + 1 != layers_.size()) throw Error(ErrorCode::BadConfig, "softmax must be the last layer");
        break;
      default: break;
    }
  }
  const auto trace = shape_trace(1);
  const Dims logits = layers_.size() >= 2 ? trace[trace.size() - 2] : input_dims_;
  if (logits.height != 1 || logits.width != 1) {
    throw Error(ErrorCode::ShapeMismatch, arch_id_ + ": softmax input must be 1x1, got " + logits.to_string());
  }
  num_classes_ = logits.channels;
}

template <typename T>
ConvParams<T>& BasicModel<T>::conv(std::size_t i) {
  if (!is_conv(i)) throw Error(ErrorCode::BadConfig, "layer " + std::to_string(i) + " is not a convolution");
  return params_[i];
}

template <typename T>
const ConvParams<T>& BasicModel<T>::conv(std::size_t i) const {
  if (!is_conv(i)) throw Error(ErrorCode::BadConfig, "layer " + std::to_string(i) + " is not a convolution");
  return params_[i];
}

template <typename T>
std::vector<std::size_t> BasicModel<T>::conv_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (is_conv(i)) out.push_back(i);
  return out;
}

template <typename T>
std::vector<Dims> BasicModel<T>::shape_trace(std::size_t batch) const {
  std::vector<Dims> out;
  out.reserve(layers_.size());
  Dims d = input_dims_;
  d.batch = batch;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& s = layers_[i];
    switch (s.kind) {
      case LayerKind::Conv: {
        const ConvGeometry& g = params_[i].geometry;
        d = {batch, g.out_channels, g.output_size(d.height), g.output_size(d.width)};
        break;
      }
      case LayerKind::MaxPool:
      case LayerKind::PNormPool: {
        const PoolGeometry g = s.pool();
        d = {batch, d.channels, g.output_size(d.height), g.output_size(d.width)};
        break;
      }
      case LayerKind::GlobalAvg: d = {batch, d.channels, 1, 1}; break;
      case LayerKind::Dropout:
      case LayerKind::SoftmaxCE: break;
    }
    if (d.height == 0 || d.width == 0) {
      throw Error(ErrorCode::EmptyOutput, arch_id_ + ": layer " + std::to_string(i) + " (" + s.describe() +
                                              ") has empty output");
    }
    out.push_back(d);
  }
  return out;
}

template <typename T>
ForwardTrace<T> model_forward(const BasicModel<T>& model, const BasicFeatureMap<T>& batch, Mode mode,
                              const Rng& rng, std::optional<std::size_t> stop_after) {
  const Dims expected = model.input_dims();
  const Dims got = batch.dims();
  if (got.channels != expected.channels || got.height != expected.height || got.width != expected.width) {
    throw Error(ErrorCode::ShapeMismatch,
                model.arch_id() + " expects input " + expected.to_string() + ", got " + got.to_string());
  }
  const std::size_t n = model.layer_count();
  const std::size_t last = stop_after ? std::min(*stop_after, n - 1) : n - 1;
  ForwardTrace<T> trace;
  trace.mode = mode;
  trace.input = batch;
  trace.outputs.resize(last + 1);
  trace.pre_activations.resize(last + 1);
  trace.switches.resize(last + 1);
  trace.dropout_masks.resize(last + 1);
  for (std::size_t i = 0; i <= last; ++i) {
    const LayerSpec& s = model.layer(i);
    const BasicFeatureMap<T>& in = trace.layer_input(i);
    switch (s.kind) {
      case LayerKind::Conv: {
        trace.pre_activations[i] = conv2d_preactivation(in, model.conv(i));
        trace.outputs[i] = apply_activation(trace.pre_activations[i], s.activation);
        break;
      }
      case LayerKind::MaxPool: {
        auto r = maxpool_forward(in, s.pool());
        trace.outputs[i] = std::move(r.output);
        trace.switches[i] = std::move(r.switches);
        break;
      }
      case LayerKind::PNormPool: trace.outputs[i] = pnorm_pool_forward(in, s.pool(), s.p); break;
      case LayerKind::Dropout: {
        Rng layer_rng = rng.split(i);
        auto r = dropout_forward(in, s.rate, layer_rng, mode == Mode::Train);
        trace.outputs[i] = std::move(r.output);
        trace.dropout_masks[i] = std::move(r.mask);
        break;
      }
      case LayerKind::GlobalAvg: trace.outputs[i] = global_avg_pool(in); break;
      case LayerKind::SoftmaxCE: trace.outputs[i] = softmax(in); break;
    }
    require_finite(trace.outputs[i], "layer output");
  }
  return trace;
}

template <typename T>
ModelGradients<T> model_backward(const BasicModel<T>& model, const ForwardTrace<T>& trace,
                                 std::span<const int> labels) {
  const std::size_t n = model.layer_count();
  if (trace.outputs.size() != n) throw Error(ErrorCode::ShapeMismatch, "backward needs a complete forward trace");
  ModelGradients<T> result;
  result.layers.resize(n);
  LossResult<T> loss = softmax_cross_entropy(trace.logits(), labels);
  result.loss = loss.loss;
  BasicFeatureMap<T> grad = std::move(loss.grad_logits);
  for (std::size_t i = n - 1; i-- > 0;) {
    const LayerSpec& s = model.layer(i);
    const BasicFeatureMap<T>& in = trace.layer_input(i);
    switch (s.kind) {
      case LayerKind::Conv: {
        auto r = conv2d_backward(in, model.conv(i), grad, &trace.pre_activations[i]);
        result.layers[i] = std::move(r.grads);
        grad = std::move(r.grad_input);
        break;
      }
      case LayerKind::MaxPool: grad = maxpool_backward(grad, trace.switches[i], in.dims()); break;
      case LayerKind::PNormPool: grad = pnorm_pool_backward(in, trace.outputs[i], grad, s.pool(), s.p); break;
      case LayerKind::Dropout: grad = dropout_backward(grad, trace.dropout_masks[i]); break;
      case LayerKind::GlobalAvg: grad = global_avg_pool_backward(grad, in.dims()); break;
      case LayerKind::SoftmaxCE: break;
    }
  }
  result.input = std::move(grad);
  return result;
}

namespace {

template <typename T>
std::size_t count_parameters_impl(const BasicModel<T>& model) {
  std::size_t total = 0;
  for (std::size_t i : model.conv_layers()) {
    const ConvGeometry& g = model.conv(i).geometry;
    total += g.weight_count() + g.out_channels;
  }
  return total;
}

}  // namespace

std::size_t count_parameters(const Model& model) { return count_parameters_impl(model); }
std::size_t count_parameters(const Model64& model) { return count_parameters_impl(model); }

void initialize_weights(Model& model, Rng& rng) {
  for (std::size_t i : model.conv_layers()) {
    auto& p = model.conv(i);
    const ConvGeometry& g = p.geometry;
    const double stddev = std::sqrt(2.0 / static_cast<double>(g.in_channels * g.kernel * g.kernel));
    for (auto& w : p.weights) w = static_cast<float>(stddev * rng.normal());
    std::fill(p.bias.begin(), p.bias.end(), 0.0f);
  }
}

template <typename T>
BasicModel<T> pool_surgery(const BasicModel<T>& model) {
  const auto trace = model.shape_trace(1);
  std::vector<LayerSpec> layers;
  std::vector<std::pair<std::size_t, std::size_t>> copies;  // (new index, old index) of conv layers
  Dims in = model.input_dims();
  bool changed = false;
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    LayerSpec s = model.layer(i);
    if (s.kind == LayerKind::Conv) copies.emplace_back(layers.size(), i);
    if (s.kind == LayerKind::Conv && s.stride == 2) {
      changed = true;
      s.stride = 1;
      const ConvGeometry dense{in.channels, s.out_channels, s.kernel, 1, s.padding};
      const std::size_t dh = dense.output_size(in.height);
      const std::size_t dw = dense.output_size(in.width);
      const Dims& target = trace[i];
      std::optional<std::size_t> padding;
      for (std::size_t p : {0u, 1u}) {
        const PoolGeometry pg{2, 2, p};
        if (pg.output_size(dh) == target.height && pg.output_size(dw) == target.width) {
          padding = p;
          break;
        }
      }
      if (!padding) {
        throw Error(ErrorCode::ShapeMismatch, "layer " + std::to_string(i) +
                                                  ": no 2x2 max-pool reproduces the strided output size");
      }
      layers.push_back(s);
      layers.push_back(LayerSpec::maxpool(2, 2, *padding));
    } else {
      layers.push_back(s);
    }
    in = trace[i];
  }
  if (!changed) throw Error(ErrorCode::NoStridedLayers, model.arch_id() + " has no stride-2 convolutions");
  BasicModel<T> out(model.arch_id() + "+pool-surgery", model.input_dims().channels, model.input_dims().height,
                    model.input_dims().width, std::move(layers));
  for (auto [dst, src] : copies) {
    out.conv(dst).weights = model.conv(src).weights;
    out.conv(dst).bias = model.conv(src).bias;
  }
  return out;
}

// Architecture builders

namespace {

constexpr std::array<Architecture, 14> kArchitectures = {
    Architecture::ModelA,    Architecture::ModelB,    Architecture::ModelC,      Architecture::StridedA,
    Architecture::StridedB,  Architecture::StridedC,  Architecture::ConvPoolA,   Architecture::ConvPoolB,
    Architecture::ConvPoolC, Architecture::AllCnnA,   Architecture::AllCnnB,     Architecture::AllCnnC,
    Architecture::LargeAllCnn, Architecture::ImageNetAllCnn};

enum class Variant { Base, Strided, ConvPool, AllCnn };

struct ConvStep {
  std::size_t kernel;
  std::size_t channels;
};

// Tables 1 and 2 share a two-stage body; only the per-stage convolutions differ.
struct BaseBody {
  std::vector<ConvStep> stage1;
  std::vector<ConvStep> stage2;
};

BaseBody base_body(char base) {
  switch (base) {
    case 'A': return {{{5, 96}}, {{5, 192}}};
    case 'B': return {{{5, 96}, {1, 96}}, {{5, 192}, {1, 192}}};
    default: return {{{3, 96}, {3, 96}}, {{3, 192}, {3, 192}}};
  }
}

std::vector<LayerSpec> cifar_layers(char base, Variant variant, std::size_t classes, double scale) {
  const BaseBody body = base_body(base);
  std::vector<LayerSpec> layers;
  layers.push_back(LayerSpec::dropout(0.2));
  for (const auto* stage : {&body.stage1, &body.stage2}) {
    std::size_t channels = 0;
    for (std::size_t i = 0; i < stage->size(); ++i) {
      const ConvStep step = (*stage)[i];
      channels = scale_channels(step.channels, scale);
      const bool last = i + 1 == stage->size();
      const std::size_t stride = (variant == Variant::Strided && last) ? 2 : 1;
      layers.push_back(LayerSpec::conv(channels, step.kernel, stride, step.kernel / 2));
    }
    switch (variant) {
      case Variant::Base: layers.push_back(LayerSpec::maxpool(3, 2, 1)); break;
      case Variant::Strided: break;
      case Variant::ConvPool:
        layers.push_back(LayerSpec::conv(channels, 3, 1, 1));
        layers.push_back(LayerSpec::maxpool(3, 2, 1));
        break;
      case Variant::AllCnn: layers.push_back(LayerSpec::conv(channels, 3, 2, 1)); break;
    }
    layers.push_back(LayerSpec::dropout(0.5));
  }
  const std::size_t top = scale_channels(192, scale);
  layers.push_back(LayerSpec::conv(top, 3, 1, 0));
  layers.push_back(LayerSpec::conv(top, 1, 1, 0));
  layers.push_back(LayerSpec::conv(classes, 1, 1, 0));
  layers.push_back(LayerSpec::global_avg());
  layers.push_back(LayerSpec::softmax());
  return layers;
}

std::vector<LayerSpec> large_layers(std::size_t classes, double scale) {
  struct Row {
    std::size_t kernel, channels, stride;
    double dropout;
  };
  static constexpr Row rows[] = {
      {2, 320, 1, 0.0},  {2, 320, 1, 0.0},  {2, 320, 2, 0.0},  {2, 640, 1, 0.1},  {2, 640, 1, 0.1},
      {2, 640, 2, 0.0},  {2, 960, 1, 0.2},  {2, 960, 1, 0.2},  {2, 960, 2, 0.0},  {2, 1280, 1, 0.3},
      {2, 1280, 1, 0.3}, {2, 1280, 2, 0.0}, {2, 1600, 1, 0.4}, {2, 1600, 1, 0.4}, {2, 1600, 2, 0.0},
      {2, 1920, 1, 0.5}, {1, 1920, 1, 0.5},
  };
  std::vector<LayerSpec> layers;
  for (const Row& r : rows) {
    layers.push_back(LayerSpec::conv(scale_channels(r.channels, scale), r.kernel, r.stride, 0, Activation::leaky()));
    if (r.dropout > 0.0) layers.push_back(LayerSpec::dropout(r.dropout));
  }
  // The 1x1 spatial output feeds a linear classifier ahead of the softmax.
  layers.push_back(LayerSpec::conv(classes, 1, 1, 0, Activation::identity()));
  layers.push_back(LayerSpec::softmax());
  return layers;
}

std::vector<LayerSpec> imagenet_layers(std::size_t classes, double scale) {
  auto c = [scale](std::size_t ch) { return scale_channels(ch, scale); };
  return {
      LayerSpec::conv(c(96), 11, 4, 0),
      LayerSpec::conv(c(96), 1, 1, 0),
      LayerSpec::conv(c(96), 3, 2, 1),
      LayerSpec::conv(c(256), 5, 1, 2),
      LayerSpec::conv(c(256), 1, 1, 0),
      LayerSpec::conv(c(256), 3, 2, 0),
      LayerSpec::conv(c(384), 3, 1, 1),
      LayerSpec::conv(c(384), 1, 1, 0),
      LayerSpec::conv(c(384), 3, 2, 0),
      LayerSpec::dropout(0.5),
      LayerSpec::conv(c(1024), 3, 1, 1),
      LayerSpec::conv(c(1024), 1, 1, 0),
      LayerSpec::conv(classes, 1, 1, 0),
      LayerSpec::global_avg(),
      LayerSpec::softmax(),
  };
}

std::string normalize_id(std::string_view id) {
  std::string out;
  for (char ch : id) {
    if (ch == '_' || ch == ' ') ch = '-';
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  return out;
}

}  // namespace

std::size_t scale_channels(std::size_t channels, double scale) {
  if (scale == 1.0) return channels;
  const double rounded = std::round(static_cast<double>(channels) * scale / 4.0) * 4.0;
  return std::max<std::size_t>(4, static_cast<std::size_t>(rounded));
}

std::string_view to_string(Architecture arch) {
  switch (arch) {
    case Architecture::ModelA: return "model-a";
    case Architecture::ModelB: return "model-b";
    case Architecture::ModelC: return "model-c";
    case Architecture::StridedA: return "strided-cnn-a";
    case Architecture::StridedB: return "strided-cnn-b";
    case Architecture::StridedC: return "strided-cnn-c";
    case Architecture::ConvPoolA: return "convpool-cnn-a";
    case Architecture::ConvPoolB: return "convpool-cnn-b";
    case Architecture::ConvPoolC: return "convpool-cnn-c";
    case Architecture::AllCnnA: return "all-cnn-a";
    case Architecture::AllCnnB: return "all-cnn-b";
    case Architecture::AllCnnC: return "all-cnn-c";
    case Architecture::LargeAllCnn: return "large-all-cnn";
    case Architecture::ImageNetAllCnn: return "imagenet-all-cnn";
  }
  return "unknown";
}

std::span<const Architecture> all_architectures() { return kArchitectures; }

Architecture parse_architecture(std::string_view id) {
  const std::string key = normalize_id(id);
  for (Architecture a : kArchitectures)
    if (key == to_string(a)) return a;
  struct Alias {
    const char* name;
    Architecture arch;
  };
  static constexpr Alias aliases[] = {
      {"a", Architecture::ModelA},           {"b", Architecture::ModelB},
      {"c", Architecture::ModelC},           {"strided-a", Architecture::StridedA},
      {"strided-b", Architecture::StridedB}, {"strided-c", Architecture::StridedC},
      {"convpool-a", Architecture::ConvPoolA}, {"convpool-b", Architecture::ConvPoolB},
      {"convpool-c", Architecture::ConvPoolC}, {"allcnn-a", Architecture::AllCnnA},
      {"allcnn-b", Architecture::AllCnnB},   {"allcnn-c", Architecture::AllCnnC},
      {"large-allcnn", Architecture::LargeAllCnn}, {"large", Architecture::LargeAllCnn},
      {"imagenet-allcnn", Architecture::ImageNetAllCnn}, {"imagenet", Architecture::ImageNetAllCnn},
  };
  for (const Alias& a : aliases)
    if (key == a.name) return a.arch;
  throw Error(ErrorCode::UnknownArchitecture, "unknown architecture id '" + std::string(id) + "'");
}

Model build_architecture(Architecture arch, std::size_t classes, double scale) {
  if (!(scale > 0.0 && scale <= 1.0)) throw Error(ErrorCode::BadScale, "scale must lie in (0, 1]");
  if (classes != 10 && classes != 100 && classes != 1000) {
    throw Error(ErrorCode::BadClassCount, "classes must be 10, 100 or 1000");
  }
  const std::string id(to_string(arch));
  switch (arch) {
    case Architecture::ModelA: return Model(id, 3, 32, 32, cifar_layers('A', Variant::Base, classes, scale));
    case Architecture::ModelB: return Model(id, 3, 32, 32, cifar_layers('B', Variant::Base, classes, scale));
    case Architecture::ModelC: return Model(id, 3, 32, 32, cifar_layers('C', Variant::Base, classes, scale));
    case Architecture::StridedA: return Model(id, 3, 32, 32, cifar_layers('A', Variant::Strided, classes, scale));
    case Architecture::StridedB: return Model(id, 3, 32, 32, cifar_layers('B', Variant::Strided, classes, scale));
    case Architecture::StridedC: return Model(id, 3, 32, 32, cifar_layers('C', Variant::Strided, classes, scale));
    case Architecture::ConvPoolA: return Model(id, 3, 32, 32, cifar_layers('A', Variant::ConvPool, classes, scale));
    case Architecture::ConvPoolB: return Model(id, 3, 32, 32, cifar_layers('B', Variant::ConvPool, classes, scale));
    case Architecture::ConvPoolC: return Model(id, 3, 32, 32, cifar_layers('C', Variant::ConvPool, classes, scale));
    case Architecture::AllCnnA: return Model(id, 3, 32, 32, cifar_layers('A', Variant::AllCnn, classes, scale));
    case Architecture::AllCnnB: return Model(id, 3, 32, 32, cifar_layers('B', Variant::AllCnn, classes, scale));
    case Architecture::AllCnnC: return Model(id, 3, 32, 32, cifar_layers('C', Variant::AllCnn, classes, scale));
    case Architecture::LargeAllCnn: return Model(id, 3, 126, 126, large_layers(classes, scale));
    case Architecture::ImageNetAllCnn: return Model(id, 3, 224, 224, imagenet_layers(classes, scale));
  }
  throw Error(ErrorCode::UnknownArchitecture, "unhandled architecture");
}

Model build_architecture(std::string_view id, std::size_t classes, double scale) {
  return build_architecture(parse_architecture(id), classes, scale);
}

template class BasicModel<float>;
template class BasicModel<double>;
template ForwardTrace<float> model_forward(const BasicModel<float>&, const BasicFeatureMap<float>&, Mode,
                                           const Rng&, std::optional<std::size_t>);
template ForwardTrace<double> model_forward(const BasicModel<double>&, const BasicFeatureMap<double>&, Mode,
                                            const Rng&, std::optional<std::size_t>);
template ModelGradients<float> model_backward(const BasicModel<float>&, const ForwardTrace<float>&,
                                              std::span<const int>);
template ModelGradients<double> model_backward(const BasicModel<double>&, const ForwardTrace<double>&,
                                               std::span<const int>);
template BasicModel<float> pool_surgery(const BasicModel<float>&);
template BasicModel<double> pool_surgery(const BasicModel<double>&);

}  // namespace acnn
