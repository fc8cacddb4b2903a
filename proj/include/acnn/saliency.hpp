#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "acnn/data.hpp"
#include "acnn/model.hpp"

namespace acnn {

enum class SaliencyRule { Backprop, Deconvnet, Guided };

std::string_view to_string(SaliencyRule rule);
// "backprop", "deconvnet" or "guided"; throws BadConfig otherwise.
SaliencyRule parse_saliency_rule(std::string_view name);

// Backward signal through a ReLU given its pre-activation f and the top signal R:
//   Backprop R*[f>0], Deconvnet R*[R>0], Guided R*[f>0]*[R>0].
template <typename T>
BasicFeatureMap<T> relu_backward_rule(SaliencyRule rule, const BasicFeatureMap<T>& f_bottom,
                                      const BasicFeatureMap<T>& r_top);

// Generalization used inside reconstruct(): Backprop multiplies by the true derivative of the
// layer's activation (so leaky units pass slope*R on the negative side), Deconvnet ignores the
// forward value, Guided additionally zeroes R <= 0. Identity activations pass R unchanged.
template <typename T>
BasicFeatureMap<T> activation_backward_rule(SaliencyRule rule, const BasicFeatureMap<T>& pre,
                                            const BasicFeatureMap<T>& r_top, const Activation& act);

// One unit of a layer's output. Without a position the largest activation of the channel is
// used (lowest row, then column, on ties); with no conditioning image that is the map centre.
struct NeuronRef {
  std::size_t layer = 0;
  std::size_t channel = 0;
  std::optional<std::size_t> row;
  std::optional<std::size_t> col;

  static NeuronRef at(std::size_t layer, std::size_t channel, std::size_t row, std::size_t col) {
    return {layer, channel, row, col};
  }
  static NeuronRef max_position(std::size_t layer, std::size_t channel) { return {layer, channel, {}, {}}; }
};

template <typename T>
struct Reconstruction {
  BasicFeatureMap<T> image;  // (1, C, H, W) in input space
  std::size_t row = 0;
  std::size_t col = 0;
  double activation = 0.0;  // forward value of the neuron (0 when unconditioned)
  // grad_outputs[i]: backward signal arriving at the output of layer i, for i <= neuron layer.
  std::vector<BasicFeatureMap<T>> grad_outputs;
};

// Seeds 1.0 at the neuron and propagates back to the input. Convolutions use the transposed
// kernel without bias; activations follow `rule`; max-pools route through the recorded
// switches when `use_switches`, otherwise spread uniformly over each window. p-norm pools use
// their true gradient when an image is given. Dropout is inactive (eval mode).
// With `image` null the pass is unconditioned: every pre-activation is taken as zero, so the
// forward-gated rules (Backprop, Guided) yield an all-zero map and only Deconvnet is informative.
// Errors: BadNeuron; SwitchesUnavailable when `use_switches` is set without an image or
// without any max-pool layer.
template <typename T>
Reconstruction<T> reconstruct(const BasicModel<T>& model, const BasicFeatureMap<T>* image, const NeuronRef& neuron,
                              SaliencyRule rule, bool use_switches);

// Square input region seen by one unit of `layer`: unit (i, j) covers rows
// [i*jump - offset, i*jump - offset + size) and likewise for columns.
struct ReceptiveField {
  std::size_t size = 1;
  std::size_t jump = 1;
  std::size_t offset = 0;
};

ReceptiveField receptive_field(const Model& model, std::size_t layer);

struct Patch {
  std::size_t image = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  double activation = 0.0;
  FeatureMap crop;  // (1, C, size, size), zero outside the image
};

// Ranks every spatial position of `channel` in `layer` over the dataset by activation
// (descending; ties by image, row, column) and returns the first n with receptive-field crops.
std::vector<Patch> top_activating_patches(const Model& model, const Dataset& data, std::size_t layer,
                                          std::size_t channel, std::size_t n);

// Writes a grid with `row_width` tiles per row, each tile normalized on its own. When crops are
// given (one per map) every row of maps is followed by the row of matching crops.
void render_visualization(std::span<const FeatureMap> maps, std::span<const FeatureMap> crops,
                          std::size_t row_width, const std::filesystem::path& path);

struct ManifestEntry {
  std::string neuron;
  std::optional<std::size_t> image;  // empty for unconditioned reconstructions
  double activation = 0.0;
  std::string file;
};

// CSV with header "neuron,image,activation,file".
void write_manifest(std::span<const ManifestEntry> entries, const std::filesystem::path& path);

}  // namespace acnn
