#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "acnn/error.hpp"

namespace acnn {

// Shape of a (batch, channel, row, column) activation array.
struct Dims {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t count() const { return batch * channels * height * width; }
  std::size_t plane() const { return height * width; }
  std::size_t sample() const { return channels * height * width; }
  bool operator==(const Dims&) const = default;

  std::string to_string() const;
};

// Dense 4-D array stored row-major in (batch, channel, row, column) order.
// Every dimension is at least one and data().size() == dims().count().
template <typename T>
class BasicFeatureMap {
 public:
  using value_type = T;

  BasicFeatureMap() : data_(1, T(0)) {}
  explicit BasicFeatureMap(const Dims& dims, T fill = T(0));

  // Copies `values`; throws LengthMismatch or ZeroDim.
  static BasicFeatureMap create(const Dims& dims, std::span<const T> values);
  static BasicFeatureMap zeros(const Dims& dims) { return BasicFeatureMap(dims); }

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  std::size_t offset(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
    return ((b * dims_.channels + c) * dims_.height + h) * dims_.width + w;
  }
  T& at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) { return data_[offset(b, c, h, w)]; }
  const T& at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset(b, c, h, w)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T* sample_data(std::size_t b) { return data_.data() + b * dims_.sample(); }
  const T* sample_data(std::size_t b) const { return data_.data() + b * dims_.sample(); }

  // Single-sample copy with batch dimension 1.
  BasicFeatureMap sample(std::size_t b) const;
  // Gathers the listed samples into a new batch.
  BasicFeatureMap gather(std::span<const std::size_t> indices) const;

  template <typename U>
  BasicFeatureMap<U> cast() const {
    BasicFeatureMap<U> out(dims_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  void fill(T value);
  bool all_finite() const;

 private:
  Dims dims_;
  std::vector<T> data_;
};

using FeatureMap = BasicFeatureMap<float>;
using FeatureMap64 = BasicFeatureMap<double>;

// Concatenates single- or multi-sample maps along the batch axis.
template <typename T>
BasicFeatureMap<T> concat_batch(std::span<const BasicFeatureMap<T>> parts);

enum class ElementwiseOp { Add, Mul, Max };

template <typename T>
BasicFeatureMap<T> map_elementwise(const BasicFeatureMap<T>& a, const BasicFeatureMap<T>& b,
                                   ElementwiseOp op);

// Throws NonFinite naming `context` if any element is NaN or infinite.
template <typename T>
void require_finite(const BasicFeatureMap<T>& map, const char* context);

void require_positive_dims(const Dims& dims);

}  // namespace acnn
