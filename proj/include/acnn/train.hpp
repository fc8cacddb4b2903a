#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "acnn/data.hpp"
#include "acnn/model.hpp"

namespace acnn {

// Heavy-ball update applied in place, accumulated in double:
//   v <- momentum * v - lr * (g + weight_decay * w);  w <- w + v
// Throws ShapeMismatch when the spans differ in length, NonFiniteGradient on NaN/Inf in g.
template <typename T>
void sgd_momentum_step(std::span<T> weights, std::span<const T> grads, std::span<T> velocity, double lr,
                       double momentum, double weight_decay);

struct OptimState {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.001;
  // Aligned with model layers; empty for non-conv layers.
  std::vector<std::vector<float>> velocity_weights;
  std::vector<std::vector<float>> velocity_bias;

  // Zero velocity shaped like the model's parameters.
  static OptimState for_model(const Model& model, double lr, double momentum, double weight_decay);
  // Throws BadConfig unless lr > 0, 0 <= momentum < 1 and weight_decay >= 0.
  void validate() const;
};

// One step over every conv layer. Weight decay applies to weights, never to biases.
void sgd_momentum_step(Model& model, const ModelGradients<float>& grads, OptimState& state);

struct Schedule {
  double base_lr = 0.05;
  double factor = 0.1;
  std::vector<std::size_t> milestones{200, 250, 300};

  // Throws BadConfig unless base_lr > 0, factor > 0 and milestones strictly increase.
  void validate() const;
};

// base_lr * factor^(number of milestones <= epoch), epochs counted from 0.
double schedule_lr(const Schedule& schedule, std::size_t epoch);

struct TrainConfig {
  std::size_t epochs = 350;
  std::size_t batch = 64;
  Schedule schedule;
  double momentum = 0.9;
  double weight_decay = 0.001;
  std::uint64_t seed = 1;  // shuffling, augmentation and dropout
  bool augment = true;

  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double test_error = 0.0;  // NaN when no test split was given
};

// Called after every epoch; useful for progress output and intermediate checkpoints.
using EpochCallback = std::function<void(const EpochMetrics&, const Model&)>;

// Mini-batch SGD over `train_set` reshuffled every epoch. The result depends only on the
// model passed in, the data and the config; the thread count does not change it.
// Throws DivergedLoss when the loss or any activation becomes non-finite.
std::vector<EpochMetrics> train(Model& model, const Dataset& train_set, const Dataset* test_set,
                                const TrainConfig& config, const EpochCallback& on_epoch = {});

// Fraction of argmax misclassifications in eval mode. Throws EmptyDataset.
double evaluate(const Model& model, const Dataset& data);

// Header "epoch,lr,train_loss,test_error", one row per epoch, %.9g formatting.
std::string metrics_csv(std::span<const EpochMetrics> rows);
void write_metrics_csv(std::span<const EpochMetrics> rows, const std::filesystem::path& path);

}  // namespace acnn
