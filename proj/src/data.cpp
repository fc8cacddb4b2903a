#include "acnn/data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "acnn/binary_io.hpp"

namespace acnn {

Dataset Dataset::slice(std::size_t begin, std::size_t count) const {
  if (begin + count > size()) throw Error(ErrorCode::ShapeMismatch, "dataset slice out of range");
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = begin + i;
  return select(idx);
}

Dataset Dataset::select(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw Error(ErrorCode::EmptyDataset, "selection of zero samples");
  Dataset out;
  out.images = images.gather(indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  out.classes = classes;
  out.split = split;
  return out;
}

void Dataset::validate() const {
  if (labels.empty()) throw Error(ErrorCode::EmptyDataset, "dataset has no samples");
  if (images.dims().batch != labels.size()) {
    throw Error(ErrorCode::LengthMismatch, "dataset holds " + std::to_string(images.dims().batch) + " images but " +
                                               std::to_string(labels.size()) + " labels");
  }
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= classes) throw Error(ErrorCode::BadLabel, std::to_string(l));
}

Dataset parse_cifar_records(std::span<const std::uint8_t> bytes, CifarVariant variant, Split split) {
  const std::size_t header = variant == CifarVariant::Cifar10 ? 1 : 2;
  const std::size_t record = header + kCifarImageBytes;
  if (bytes.empty() || bytes.size() % record != 0) {
    throw Error(ErrorCode::BadRecordLength, std::to_string(bytes.size()) + " bytes is not a multiple of the " +
                                                std::to_string(record) + "-byte record");
  }
  const std::size_t n = bytes.size() / record;
  Dataset ds;
  ds.classes = variant == CifarVariant::Cifar10 ? 10 : 100;
  ds.split = split;
  ds.images = FeatureMap(Dims{n, 3, 32, 32});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * record;
    ds.labels[i] = rec[header - 1];
    float* dst = ds.images.sample_data(i);
    for (std::size_t k = 0; k < kCifarImageBytes; ++k) dst[k] = static_cast<float>(rec[header + k]) / 255.0f;
  }
  ds.validate();
  return ds;
}

Dataset load_cifar_file(const std::filesystem::path& path, CifarVariant variant, Split split) {
  return parse_cifar_records(read_file(path), variant, split);
}

namespace {

Dataset concat_datasets(std::vector<Dataset> parts) {
  std::vector<FeatureMap> maps;
  Dataset out;
  out.classes = parts.front().classes;
  out.split = parts.front().split;
  for (auto& p : parts) {
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    maps.push_back(std::move(p.images));
  }
  out.images = concat_batch<float>(maps);
  return out;
}

void require_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::IoError, "data directory not found: " + dir.string());
}

}  // namespace

std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir) {
  require_dir(dir);
  std::vector<Dataset> train;
  for (int i = 1; i <= 5; ++i) {
    train.push_back(load_cifar_file(dir / ("data_batch_" + std::to_string(i) + ".bin"), CifarVariant::Cifar10,
                                    Split::Train));
  }
  Dataset test = load_cifar_file(dir / "test_batch.bin", CifarVariant::Cifar10, Split::Test);
  return {concat_datasets(std::move(train)), std::move(test)};
}

std::pair<Dataset, Dataset> load_cifar100(const std::filesystem::path& dir) {
  require_dir(dir);
  return {load_cifar_file(dir / "train.bin", CifarVariant::Cifar100, Split::Train),
          load_cifar_file(dir / "test.bin", CifarVariant::Cifar100, Split::Test)};
}

FeatureMap global_contrast_normalize(const FeatureMap& images, double eps) {
  FeatureMap out(images.dims());
  const std::size_t dim = images.dims().sample();
  for (std::size_t b = 0; b < images.dims().batch; ++b) {
    const float* src = images.sample_data(b);
    double mean = 0.0;
    for (std::size_t i = 0; i < dim; ++i) mean += src[i];
    mean /= static_cast<double>(dim);
    double var = 0.0;
    for (std::size_t i = 0; i < dim; ++i) var += (src[i] - mean) * (src[i] - mean);
    const double scale = std::max(std::sqrt(var / static_cast<double>(dim)), eps);
    float* dst = out.sample_data(b);
    for (std::size_t i = 0; i < dim; ++i) dst[i] = static_cast<float>((src[i] - mean) / scale);
  }
  return out;
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
constexpr std::size_t kChunk = 1024;

RowMat load_rows(const FeatureMap& images, std::size_t begin, std::size_t count) {
  const std::size_t dim = images.dims().sample();
  RowMat x(count, dim);
  for (std::size_t r = 0; r < count; ++r) {
    const float* src = images.sample_data(begin + r);
    for (std::size_t c = 0; c < dim; ++c) x(r, c) = src[c];
  }
  return x;
}

}  // namespace

PreprocStats fit_preprocessing(const Dataset& train, const PreprocConfig& config) {
  train.validate();
  PreprocStats stats;
  stats.image_dims = train.images.dims();
  stats.image_dims.batch = 1;
  stats.gcn = config.gcn;
  stats.gcn_eps = config.gcn_eps;
  stats.zca = config.zca;
  const FeatureMap normalized = config.gcn ? global_contrast_normalize(train.images, config.gcn_eps) : train.images;
  const std::size_t n = train.size();
  const std::size_t dim = stats.dim();

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  for (std::size_t b = 0; b < n; ++b) {
    const float* src = normalized.sample_data(b);
    for (std::size_t c = 0; c < dim; ++c) mean[c] += src[c];
  }
  mean /= static_cast<double>(n);
  stats.mean.assign(mean.data(), mean.data() + dim);
  if (!config.zca) return stats;

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const std::size_t count = std::min(kChunk, n - begin);
    RowMat x = load_rows(normalized, begin, count);
    x.rowwise() -= mean.transpose();
    cov.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
  }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw Error(ErrorCode::DegenerateCovariance, "eigen-decomposition failed");
  const Eigen::VectorXd lambda = eig.eigenvalues().cwiseMax(0.0);
  const double mean_lambda = lambda.mean();
  if (!(mean_lambda > 0.0) || !std::isfinite(mean_lambda)) {
    throw Error(ErrorCode::DegenerateCovariance, "training covariance has no variance");
  }
  stats.zca_eps = config.zca_eps_relative * mean_lambda;
  // Directions with numerically zero variance are dropped rather than amplified.
  const double floor = 1e-12 * lambda.maxCoeff();
  Eigen::VectorXd scale(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    const double l = lambda[i] + stats.zca_eps;
    scale[i] = (lambda[i] <= floor && stats.zca_eps == 0.0) ? 0.0 : 1.0 / std::sqrt(l);
  }
  const Eigen::MatrixXd& u = eig.eigenvectors();
  RowMat w = u * scale.asDiagonal() * u.transpose();
  w = (0.5 * (w + w.transpose())).eval();
  stats.zca_matrix.assign(w.data(), w.data() + dim * dim);
  return stats;
}

FeatureMap apply_preprocessing(const PreprocStats& stats, const FeatureMap& images) {
  Dims d = images.dims();
  if (d.sample() != stats.dim() || d.channels != stats.image_dims.channels) {
    throw Error(ErrorCode::ShapeMismatch, "preprocessing fitted for " + stats.image_dims.to_string() +
                                              ", applied to " + d.to_string());
  }
  const FeatureMap normalized = stats.gcn ? global_contrast_normalize(images, stats.gcn_eps) : images;
  const std::size_t dim = stats.dim();
  const Eigen::Map<const Eigen::RowVectorXd> mean(stats.mean.data(), dim);
  FeatureMap out(d);
  std::optional<Eigen::Map<const RowMat>> w;
  if (stats.zca) w.emplace(stats.zca_matrix.data(), dim, dim);
  for (std::size_t begin = 0; begin < d.batch; begin += kChunk) {
    const std::size_t count = std::min(kChunk, d.batch - begin);
    RowMat x = load_rows(normalized, begin, count);
    x.rowwise() -= mean;
    RowMat y = w ? RowMat(x * (*w)) : x;
    for (std::size_t r = 0; r < count; ++r) {
      float* dst = out.sample_data(begin + r);
      for (std::size_t c = 0; c < dim; ++c) dst[c] = static_cast<float>(y(r, c));
    }
  }
  require_finite(out, "preprocessing output");
  return out;
}

Dataset apply_preprocessing(const PreprocStats& stats, const Dataset& data) {
  Dataset out;
  out.images = apply_preprocessing(stats, data.images);
  out.labels = data.labels;
  out.classes = data.classes;
  out.split = data.split;
  return out;
}

namespace {

constexpr char kStatsMagic[4] = {'A', 'C', 'N', 'P'};
constexpr std::uint32_t kStatsVersion = 1;

}  // namespace

void save_preproc_stats(const PreprocStats& stats, const std::filesystem::path& path) {
  ByteWriter w;
  w.raw(std::string_view(kStatsMagic, 4));
  w.u32(kStatsVersion);
  w.u32(static_cast<std::uint32_t>(stats.image_dims.channels));
  w.u32(static_cast<std::uint32_t>(stats.image_dims.height));
  w.u32(static_cast<std::uint32_t>(stats.image_dims.width));
  w.u8(stats.gcn ? 1 : 0);
  w.u8(stats.zca ? 1 : 0);
  w.f64(stats.gcn_eps);
  w.f64(stats.zca_eps);
  for (double v : stats.mean) w.f64(v);
  for (double v : stats.zca_matrix) w.f64(v);
  const std::uint32_t crc = crc32(w.bytes());
  w.u32(crc);
  write_file_atomic(path, w.bytes());
}

PreprocStats load_preproc_stats(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  if (bytes.size() < 4 || !std::equal(kStatsMagic, kStatsMagic + 4, bytes.begin())) {
    throw Error(ErrorCode::BadMagic, path.string() + " is not a preprocessing stats file");
  }
  if (bytes.size() < 8) throw Error(ErrorCode::ChecksumMismatch, "stats file truncated");
  const auto body = std::span(bytes).first(bytes.size() - 4);
  if (crc32(body) != ByteReader(std::span(bytes).last(4)).u32()) {
    throw Error(ErrorCode::ChecksumMismatch, "stats file CRC does not match");
  }
  ByteReader r(body);
  r.u32();
  if (r.u32() != kStatsVersion) throw Error(ErrorCode::VersionMismatch, "unsupported stats version");
  PreprocStats s;
  s.image_dims.channels = r.u32();
  s.image_dims.height = r.u32();
  s.image_dims.width = r.u32();
  require_positive_dims(s.image_dims);
  s.gcn = r.u8() != 0;
  s.zca = r.u8() != 0;
  s.gcn_eps = r.f64();
  s.zca_eps = r.f64();
  s.mean.resize(s.dim());
  for (double& v : s.mean) v = r.f64();
  if (s.zca) {
    s.zca_matrix.resize(s.dim() * s.dim());
    for (double& v : s.zca_matrix) v = r.f64();
  }
  if (r.remaining() != 0) throw Error(ErrorCode::IoError, "trailing bytes in stats file");
  return s;
}

FeatureMap translate_flip(const FeatureMap& image, bool flip, int dx, int dy) {
  const Dims d = image.dims();
  if (d.batch != 1) throw Error(ErrorCode::ShapeMismatch, "augmentation works on one image at a time");
  FeatureMap out(d);
  const long h = static_cast<long>(d.height), w = static_cast<long>(d.width);
  for (std::size_t c = 0; c < d.channels; ++c) {
    for (long y = 0; y < h; ++y) {
      const long sy = y - dy;
      if (sy < 0 || sy >= h) continue;
      for (long x = 0; x < w; ++x) {
        long sx = x - dx;
        if (sx < 0 || sx >= w) continue;
        if (flip) sx = w - 1 - sx;
        out.at(0, c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
            image.at(0, c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
      }
    }
  }
  return out;
}

AugmentDraw draw_augmentation(Rng& rng, int max_shift) {
  AugmentDraw a;
  a.flip = rng.bernoulli(0.5);
  a.dx = rng.uniform_int(-max_shift, max_shift);
  a.dy = rng.uniform_int(-max_shift, max_shift);
  return a;
}

FeatureMap augment(const FeatureMap& image, Rng& rng) {
  const AugmentDraw a = draw_augmentation(rng);
  return translate_flip(image, a.flip, a.dx, a.dy);
}

}  // namespace acnn
