#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "acnn/feature_map.hpp"
#include "acnn/rng.hpp"

namespace acnn {

enum class Split { Train, Test };

struct Dataset {
  FeatureMap images;  // (N, C, H, W)
  std::vector<int> labels;
  std::size_t classes = 10;
  Split split = Split::Train;

  std::size_t size() const { return labels.size(); }
  Dataset slice(std::size_t begin, std::size_t count) const;
  Dataset select(std::span<const std::size_t> indices) const;
  // Throws EmptyDataset, LengthMismatch or BadLabel.
  void validate() const;
};

enum class CifarVariant { Cifar10, Cifar100 };

inline constexpr std::size_t kCifarImageBytes = 3 * 32 * 32;

// Record = label header (1 byte for CIFAR-10; coarse + fine bytes for CIFAR-100, fine kept)
// followed by 1024 red, 1024 green and 1024 blue bytes, each plane row-major. Pixels are
// scaled to [0, 1].
Dataset parse_cifar_records(std::span<const std::uint8_t> bytes, CifarVariant variant, Split split);
Dataset load_cifar_file(const std::filesystem::path& path, CifarVariant variant, Split split);
// data_batch_1..5.bin and test_batch.bin.
std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir);
// train.bin and test.bin.
std::pair<Dataset, Dataset> load_cifar100(const std::filesystem::path& dir);

struct PreprocConfig {
  bool gcn = true;
  double gcn_eps = 1e-8;
  bool zca = true;
  // ZCA regularizer as a fraction of the mean covariance eigenvalue.
  double zca_eps_relative = 0.01;
};

// Fitted on the training split only, then applied unchanged to any split.
struct PreprocStats {
  Dims image_dims;  // batch 1
  bool gcn = true;
  double gcn_eps = 1e-8;
  bool zca = true;
  double zca_eps = 0.0;  // absolute
  std::vector<double> mean;
  std::vector<double> zca_matrix;  // symmetric dim x dim, row-major

  std::size_t dim() const { return image_dims.sample(); }
};

// Per image: subtract the image mean and divide by max(std, eps).
FeatureMap global_contrast_normalize(const FeatureMap& images, double eps);

PreprocStats fit_preprocessing(const Dataset& train, const PreprocConfig& config = {});
FeatureMap apply_preprocessing(const PreprocStats& stats, const FeatureMap& images);
Dataset apply_preprocessing(const PreprocStats& stats, const Dataset& data);

void save_preproc_stats(const PreprocStats& stats, const std::filesystem::path& path);
PreprocStats load_preproc_stats(const std::filesystem::path& path);

struct AugmentDraw {
  bool flip = false;
  int dx = 0;
  int dy = 0;
};

// Flip (optional) then translate by (dx, dy): positive dx moves content right, positive dy
// moves it down; uncovered pixels are zero.
FeatureMap translate_flip(const FeatureMap& image, bool flip, int dx, int dy);
// Flip with probability 0.5, then dx and dy uniform on [-max_shift, max_shift].
AugmentDraw draw_augmentation(Rng& rng, int max_shift = 5);
FeatureMap augment(const FeatureMap& image, Rng& rng);

}  // namespace acnn
