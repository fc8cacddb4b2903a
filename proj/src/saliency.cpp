#include "acnn/saliency.hpp"

#include <algorithm>
#include <cstdio>
#include <string>
#include <tuple>

#include "acnn/binary_io.hpp"
#include "acnn/image_io.hpp"
#include "acnn/parallel.hpp"

namespace acnn {

std::string_view to_string(SaliencyRule rule) {
  switch (rule) {
    case SaliencyRule::Backprop: return "backprop";
    case SaliencyRule::Deconvnet: return "deconvnet";
    case SaliencyRule::Guided: return "guided";
  }
  return "unknown";
}

SaliencyRule parse_saliency_rule(std::string_view name) {
  for (SaliencyRule r : {SaliencyRule::Backprop, SaliencyRule::Deconvnet, SaliencyRule::Guided}) {
    if (to_string(r) == name) return r;
  }
  throw Error(ErrorCode::BadConfig, "unknown saliency rule '" + std::string(name) + "'");
}

template <typename T>
BasicFeatureMap<T> relu_backward_rule(SaliencyRule rule, const BasicFeatureMap<T>& f_bottom,
                                      const BasicFeatureMap<T>& r_top) {
  return activation_backward_rule(rule, f_bottom, r_top, Activation::relu());
}

template <typename T>
BasicFeatureMap<T> activation_backward_rule(SaliencyRule rule, const BasicFeatureMap<T>& pre,
                                            const BasicFeatureMap<T>& r_top, const Activation& act) {
  if (!(pre.dims() == r_top.dims())) {
    throw Error(ErrorCode::ShapeMismatch, "rule inputs " + pre.dims().to_string() + " vs " + r_top.dims().to_string());
  }
  BasicFeatureMap<T> out(r_top.dims());
  const bool identity = act.kind == ActivationKind::Identity;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T r = r_top[i];
    T v = r;
    if (!identity) {
      switch (rule) {
        case SaliencyRule::Backprop: v = r * activation_derivative(pre[i], act); break;
        case SaliencyRule::Deconvnet: v = r > T(0) ? r : T(0); break;
        case SaliencyRule::Guided: v = r > T(0) ? r * activation_derivative(pre[i], act) : T(0); break;
      }
    }
    out[i] = v;
  }
  return out;
}

namespace {

template <typename T>
bool has_maxpool(const BasicModel<T>& model) {
  return std::any_of(model.layers().begin(), model.layers().end(),
                     [](const LayerSpec& s) { return s.kind == LayerKind::MaxPool; });
}

}  // namespace

template <typename T>
Reconstruction<T> reconstruct(const BasicModel<T>& model, const BasicFeatureMap<T>* image, const NeuronRef& neuron,
                              SaliencyRule rule, bool use_switches) {
  const std::size_t n = model.layer_count();
  if (neuron.layer + 1 >= n) {
    throw Error(ErrorCode::BadNeuron, "layer " + std::to_string(neuron.layer) + " has no inspectable output");
  }
  if (use_switches && (image == nullptr || !has_maxpool(model))) {
    throw Error(ErrorCode::SwitchesUnavailable,
                image == nullptr ? "switches need a conditioning image" : "model has no max-pool layer");
  }
  const std::vector<Dims> shapes = model.shape_trace(1);
  const Dims out_dims = shapes[neuron.layer];
  if (neuron.channel >= out_dims.channels || (neuron.row && *neuron.row >= out_dims.height) ||
      (neuron.col && *neuron.col >= out_dims.width) || neuron.row.has_value() != neuron.col.has_value()) {
    throw Error(ErrorCode::BadNeuron, "neuron outside layer output " + out_dims.to_string());
  }

  std::optional<ForwardTrace<T>> trace;
  if (image != nullptr) {
    if (!(image->dims() == model.input_dims())) {
      throw Error(ErrorCode::ShapeMismatch, "reconstruct takes one image of " + model.input_dims().to_string());
    }
    trace = model_forward(model, *image, Mode::Eval, Rng(0), neuron.layer);
  }

  Reconstruction<T> result;
  if (neuron.row) {
    result.row = *neuron.row;
    result.col = *neuron.col;
  } else if (trace) {
    const auto& out = trace->outputs[neuron.layer];
    T best = out.at(0, neuron.channel, 0, 0);
    for (std::size_t h = 0; h < out_dims.height; ++h)
      for (std::size_t w = 0; w < out_dims.width; ++w)
        if (out.at(0, neuron.channel, h, w) > best) {
          best = out.at(0, neuron.channel, h, w);
          result.row = h;
          result.col = w;
        }
  } else {
    result.row = out_dims.height / 2;
    result.col = out_dims.width / 2;
  }
  if (trace) result.activation = static_cast<double>(trace->outputs[neuron.layer].at(0, neuron.channel, result.row, result.col));

  BasicFeatureMap<T> grad(out_dims);
  grad.at(0, neuron.channel, result.row, result.col) = T(1);
  result.grad_outputs.resize(neuron.layer + 1);
  for (std::size_t i = neuron.layer + 1; i-- > 0;) {
    result.grad_outputs[i] = grad;
    const LayerSpec& s = model.layer(i);
    const Dims in_dims = i == 0 ? model.input_dims() : shapes[i - 1];
    switch (s.kind) {
      case LayerKind::Conv: {
        const BasicFeatureMap<T> pre = trace ? trace->pre_activations[i] : BasicFeatureMap<T>(shapes[i]);
        grad = conv2d_backward_data(activation_backward_rule(rule, pre, grad, s.activation), model.conv(i), in_dims);
        break;
      }
      case LayerKind::MaxPool:
        grad = use_switches ? maxpool_backward(grad, trace->switches[i], in_dims)
                            : window_uniform_backward(grad, in_dims, s.pool());
        break;
      case LayerKind::PNormPool:
        grad = trace ? pnorm_pool_backward(trace->layer_input(i), trace->outputs[i], grad, s.pool(), s.p)
                     : window_uniform_backward(grad, in_dims, s.pool());
        break;
      case LayerKind::Dropout: break;
      case LayerKind::GlobalAvg: grad = global_avg_pool_backward(grad, in_dims); break;
      case LayerKind::SoftmaxCE: break;
    }
  }
  result.image = std::move(grad);
  return result;
}

ReceptiveField receptive_field(const Model& model, std::size_t layer) {
  if (layer + 1 >= model.layer_count()) throw Error(ErrorCode::BadNeuron, "layer has no spatial output");
  const std::vector<Dims> shapes = model.shape_trace(1);
  ReceptiveField rf;
  for (std::size_t i = 0; i <= layer; ++i) {
    const LayerSpec& s = model.layer(i);
    std::size_t k = 1, stride = 1, pad = 0;
    switch (s.kind) {
      case LayerKind::Conv:
      case LayerKind::MaxPool:
      case LayerKind::PNormPool:
        k = s.kernel;
        stride = s.stride;
        pad = s.padding;
        break;
      case LayerKind::GlobalAvg:
        k = i == 0 ? model.input_dims().height : shapes[i - 1].height;
        break;
      default: break;
    }
    rf.size += (k - 1) * rf.jump;
    rf.offset += pad * rf.jump;
    rf.jump *= stride;
  }
  return rf;
}

namespace {

struct Candidate {
  double activation;
  std::size_t image, row, col;
};

bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.activation != b.activation) return a.activation > b.activation;
  return std::tie(a.image, a.row, a.col) < std::tie(b.image, b.row, b.col);
}

FeatureMap crop_region(const Dataset& data, std::size_t image, std::size_t row, std::size_t col,
                       const ReceptiveField& rf) {
  const Dims d = data.images.dims();
  FeatureMap crop(Dims{1, d.channels, rf.size, rf.size});
  const long top = static_cast<long>(row * rf.jump) - static_cast<long>(rf.offset);
  const long left = static_cast<long>(col * rf.jump) - static_cast<long>(rf.offset);
  for (std::size_t c = 0; c < d.channels; ++c)
    for (std::size_t y = 0; y < rf.size; ++y) {
      const long sy = top + static_cast<long>(y);
      if (sy < 0 || sy >= static_cast<long>(d.height)) continue;
      for (std::size_t x = 0; x < rf.size; ++x) {
        const long sx = left + static_cast<long>(x);
        if (sx < 0 || sx >= static_cast<long>(d.width)) continue;
        crop.at(0, c, y, x) = data.images.at(image, c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
      }
    }
  return crop;
}

}  // namespace

std::vector<Patch> top_activating_patches(const Model& model, const Dataset& data, std::size_t layer,
                                          std::size_t channel, std::size_t n) {
  if (data.size() == 0) throw Error(ErrorCode::EmptyDataset, "no images to scan");
  if (n == 0) throw Error(ErrorCode::BadConfig, "need at least one patch");
  const ReceptiveField rf = receptive_field(model, layer);
  const Dims out_dims = model.shape_trace(1)[layer];
  if (channel >= out_dims.channels) throw Error(ErrorCode::BadNeuron, "channel outside layer output");

  constexpr std::size_t kChunk = 32;
  const std::size_t chunks = (data.size() + kChunk - 1) / kChunk;
  std::vector<std::vector<Candidate>> found(chunks);
  parallel_for(chunks, [&](std::size_t ci) {
    const std::size_t begin = ci * kChunk;
    const std::size_t count = std::min(kChunk, data.size() - begin);
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = begin + i;
    const FeatureMap batch = data.images.gather(idx);
    const auto trace = model_forward(model, batch, Mode::Eval, Rng(0), layer);
    const FeatureMap& out = trace.outputs[layer];
    std::vector<Candidate>& local = found[ci];
    for (std::size_t b = 0; b < count; ++b)
      for (std::size_t h = 0; h < out_dims.height; ++h)
        for (std::size_t w = 0; w < out_dims.width; ++w)
          local.push_back({static_cast<double>(out.at(b, channel, h, w)), begin + b, h, w});
    const std::size_t keep = std::min(n, local.size());
    std::partial_sort(local.begin(), local.begin() + static_cast<std::ptrdiff_t>(keep), local.end(), ranks_before);
    local.resize(keep);
  });
  std::vector<Candidate> all;
  for (auto& f : found) all.insert(all.end(), f.begin(), f.end());
  std::sort(all.begin(), all.end(), ranks_before);
  if (all.size() > n) all.resize(n);

  std::vector<Patch> patches;
  patches.reserve(all.size());
  for (const Candidate& c : all) {
    patches.push_back({c.image, c.row, c.col, c.activation, crop_region(data, c.image, c.row, c.col, rf)});
  }
  return patches;
}

void render_visualization(std::span<const FeatureMap> maps, std::span<const FeatureMap> crops,
                          std::size_t row_width, const std::filesystem::path& path) {
  if (maps.empty()) throw Error(ErrorCode::EmptyOutput, "nothing to render");
  if (!crops.empty() && crops.size() != maps.size()) {
    throw Error(ErrorCode::LengthMismatch, "need one crop per map");
  }
  if (row_width == 0) throw Error(ErrorCode::BadConfig, "row width must be positive");
  const std::size_t cols = std::min(row_width, maps.size());
  std::vector<Raster> tiles;
  const Raster blank{1, 1, 1, {0}};
  for (std::size_t start = 0; start < maps.size(); start += cols) {
    const std::size_t end = std::min(start + cols, maps.size());
    for (std::size_t i = start; i < start + cols; ++i) tiles.push_back(i < end ? to_raster(maps[i], 0, true) : blank);
    if (!crops.empty())
      for (std::size_t i = start; i < start + cols; ++i)
        tiles.push_back(i < end ? to_raster(crops[i], 0, true) : blank);
  }
  // Trailing placeholders would only pad the final row.
  while (crops.empty() && tiles.size() > maps.size()) tiles.pop_back();
  write_file_atomic(path, encode_pnm(tile_grid(tiles, cols)));
}

void write_manifest(std::span<const ManifestEntry> entries, const std::filesystem::path& path) {
  std::string csv = "neuron,image,activation,file\n";
  char buf[64];
  for (const ManifestEntry& e : entries) {
    std::snprintf(buf, sizeof buf, "%.9g", e.activation);
    csv += e.neuron + "," + (e.image ? std::to_string(*e.image) : std::string()) + "," + buf + "," + e.file + "\n";
  }
  write_text_atomic(path, csv);
}

#define ACNN_INSTANTIATE(T)                                                                                   \
  template BasicFeatureMap<T> relu_backward_rule(SaliencyRule, const BasicFeatureMap<T>&,                   \
                                                 const BasicFeatureMap<T>&);                                \
  template BasicFeatureMap<T> activation_backward_rule(SaliencyRule, const BasicFeatureMap<T>&,             \
                                                       const BasicFeatureMap<T>&, const Activation&);       \
  template Reconstruction<T> reconstruct(const BasicModel<T>&, const BasicFeatureMap<T>*, const NeuronRef&, \
                                         SaliencyRule, bool);

ACNN_INSTANTIATE(float)
ACNN_INSTANTIATE(double)
#undef ACNN_INSTANTIATE

}  // namespace acnn
