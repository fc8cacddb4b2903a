#include "acnn/train.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <string>

#include "acnn/binary_io.hpp"
#include "acnn/parallel.hpp"

namespace acnn {

template <typename T>
void sgd_momentum_step(std::span<T> weights, std::span<const T> grads, std::span<T> velocity, double lr,
                       double momentum, double weight_decay) {
  if (weights.size() != grads.size() || weights.size() != velocity.size()) {
    throw Error(ErrorCode::ShapeMismatch, "parameter, gradient and velocity sizes differ");
  }
  for (T g : grads)
    if (!std::isfinite(static_cast<double>(g))) throw Error(ErrorCode::NonFiniteGradient, "gradient holds NaN or Inf");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double w = weights[i];
    const double v = momentum * static_cast<double>(velocity[i]) - lr * (static_cast<double>(grads[i]) + weight_decay * w);
    velocity[i] = static_cast<T>(v);
    weights[i] = static_cast<T>(w + v);
  }
}

template void sgd_momentum_step(std::span<float>, std::span<const float>, std::span<float>, double, double, double);
template void sgd_momentum_step(std::span<double>, std::span<const double>, std::span<double>, double, double,
                                double);

OptimState OptimState::for_model(const Model& model, double lr, double momentum, double weight_decay) {
  OptimState s;
  s.lr = lr;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  s.velocity_weights.resize(model.layer_count());
  s.velocity_bias.resize(model.layer_count());
  for (std::size_t i : model.conv_layers()) {
    s.velocity_weights[i].assign(model.conv(i).weights.size(), 0.0f);
    s.velocity_bias[i].assign(model.conv(i).bias.size(), 0.0f);
  }
  s.validate();
  return s;
}

void OptimState::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error(ErrorCode::BadConfig, "learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorCode::BadConfig, "momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw Error(ErrorCode::BadConfig, "weight decay must be non-negative");
  }
}

void sgd_momentum_step(Model& model, const ModelGradients<float>& grads, OptimState& state) {
  state.validate();
  if (grads.layers.size() != model.layer_count() || state.velocity_weights.size() != model.layer_count()) {
    throw Error(ErrorCode::ShapeMismatch, "gradients or optimizer state do not match the model");
  }
  for (std::size_t i : model.conv_layers()) {
    auto& p = model.conv(i);
    sgd_momentum_step<float>(p.weights, grads.layers[i].weights, state.velocity_weights[i], state.lr, state.momentum,
                             state.weight_decay);
    sgd_momentum_step<float>(p.bias, grads.layers[i].bias, state.velocity_bias[i], state.lr, state.momentum, 0.0);
  }
}

void Schedule::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw Error(ErrorCode::BadConfig, "base learning rate must be positive");
  if (!(factor > 0.0) || !std::isfinite(factor)) throw Error(ErrorCode::BadConfig, "schedule factor must be positive");
  for (std::size_t i = 1; i < milestones.size(); ++i)
    if (milestones[i] <= milestones[i - 1]) throw Error(ErrorCode::BadConfig, "milestones must strictly increase");
}

double schedule_lr(const Schedule& schedule, std::size_t epoch) {
  double lr = schedule.base_lr;
  for (std::size_t m : schedule.milestones)
    if (m <= epoch) lr *= schedule.factor;
  return lr;
}

void TrainConfig::validate() const {
  if (batch == 0) throw Error(ErrorCode::BadConfig, "batch size must be positive");
  schedule.validate();
  OptimState{schedule.base_lr, momentum, weight_decay, {}, {}}.validate();
}

namespace {

// Stream ids below the training seed.
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kAugmentStream = 2;
constexpr std::uint64_t kDropoutStream = 3;

std::vector<std::size_t> shuffled_order(std::size_t n, Rng rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

FeatureMap make_batch(const Dataset& data, std::span<const std::size_t> idx, bool augment_batch, const Rng& aug_rng) {
  FeatureMap batch = data.images.gather(idx);
  if (!augment_batch) return batch;
  const std::size_t sample = batch.dims().sample();
  parallel_for(idx.size(), [&](std::size_t b) {
    Rng r = aug_rng.split(idx[b]);
    const FeatureMap moved = augment(batch.sample(b), r);
    std::copy_n(moved.data(), sample, batch.sample_data(b));
  });
  return batch;
}

}  // namespace

std::vector<EpochMetrics> train(Model& model, const Dataset& train_set, const Dataset* test_set,
                                const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  std::vector<EpochMetrics> metrics;
  if (config.epochs == 0) return metrics;
  train_set.validate();
  if (train_set.images.dims().sample() != model.input_dims().sample()) {
    throw Error(ErrorCode::ShapeMismatch, "training images do not match the model input " + model.input_dims().to_string());
  }
  const Rng root(config.seed);
  OptimState state = OptimState::for_model(model, config.schedule.base_lr, config.momentum, config.weight_decay);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    state.lr = schedule_lr(config.schedule, epoch);
    const std::vector<std::size_t> order = shuffled_order(train_set.size(), root.split(kShuffleStream).split(epoch));
    const Rng aug_rng = root.split(kAugmentStream).split(epoch);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch, ++step) {
      const std::size_t count = std::min(config.batch, order.size() - begin);
      const std::span<const std::size_t> idx(order.data() + begin, count);
      const FeatureMap batch = make_batch(train_set, idx, config.augment, aug_rng);
      std::vector<int> labels(count);
      for (std::size_t i = 0; i < count; ++i) labels[i] = train_set.labels[idx[i]];
      ModelGradients<float> grads;
      try {
        const auto trace = model_forward(model, batch, Mode::Train, root.split(kDropoutStream).split(step));
        grads = model_backward(model, trace, labels);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFinite) throw;
        throw Error(ErrorCode::DivergedLoss, "epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                                                 ": " + e.what());
      }
      if (!std::isfinite(grads.loss)) {
        throw Error(ErrorCode::DivergedLoss, "epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                                                 ": loss is " + std::to_string(grads.loss));
      }
      sgd_momentum_step(model, grads, state);
      loss_sum += grads.loss * static_cast<double>(count);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = state.lr;
    m.train_loss = loss_sum / static_cast<double>(train_set.size());
    m.test_error = test_set ? evaluate(model, *test_set) : std::numeric_limits<double>::quiet_NaN();
    metrics.push_back(m);
    if (on_epoch) on_epoch(m, model);
  }
  return metrics;
}

double evaluate(const Model& model, const Dataset& data) {
  if (data.size() == 0) throw Error(ErrorCode::EmptyDataset, "cannot evaluate on an empty dataset");
  data.validate();
  constexpr std::size_t kChunk = 128;
  std::size_t wrong = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += kChunk) {
    const std::size_t count = std::min(kChunk, data.size() - begin);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), begin);
    const auto trace = model_forward(model, data.images.gather(idx));
    const FeatureMap& logits = trace.logits();
    const std::size_t classes = logits.dims().channels;
    for (std::size_t b = 0; b < count; ++b) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c)
        if (logits.at(b, c, 0, 0) > logits.at(b, best, 0, 0)) best = c;
      if (static_cast<int>(best) != data.labels[begin + b]) ++wrong;
    }
  }
  return static_cast<double>(wrong) / static_cast<double>(data.size());
}

std::string metrics_csv(std::span<const EpochMetrics> rows) {
  std::string csv = "epoch,lr,train_loss,test_error\n";
  char buf[128];
  for (const EpochMetrics& m : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g\n", m.epoch, m.lr, m.train_loss, m.test_error);
    csv += buf;
  }
  return csv;
}

void write_metrics_csv(std::span<const EpochMetrics> rows, const std::filesystem::path& path) {
  write_text_atomic(path, metrics_csv(rows));
}

}  // namespace acnn
