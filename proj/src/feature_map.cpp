#include "acnn/feature_map.hpp"

#include <algorithm>
#include <cmath>

namespace acnn {

std::string Dims::to_string() const {
  return "(" + std::to_string(batch) + "," + std::to_string(channels) + "," + std::to_string(height) +
         "," + std::to_string(width) + ")";
}

void require_positive_dims(const Dims& dims) {
  if (dims.batch == 0 || dims.channels == 0 || dims.height == 0 || dims.width == 0) {
    throw Error(ErrorCode::ZeroDim, "dimensions must be >= 1, got " + dims.to_string());
  }
}

template <typename T>
BasicFeatureMap<T>::BasicFeatureMap(const Dims& dims, T fill) : dims_(dims) {
  require_positive_dims(dims);
  data_.assign(dims.count(), fill);
}

template <typename T>
BasicFeatureMap<T> BasicFeatureMap<T>::create(const Dims& dims, std::span<const T> values) {
  require_positive_dims(dims);
  if (values.size() != dims.count()) {
    throw Error(ErrorCode::LengthMismatch, "expected " + std::to_string(dims.count()) + " values for " +
                                               dims.to_string() + ", got " + std::to_string(values.size()));
  }
  BasicFeatureMap map(dims);
  std::copy(values.begin(), values.end(), map.data_.begin());
  return map;
}

template <typename T>
BasicFeatureMap<T> BasicFeatureMap<T>::sample(std::size_t b) const {
  Dims d = dims_;
  d.batch = 1;
  BasicFeatureMap out(d);
  std::copy_n(sample_data(b), d.sample(), out.data());
  return out;
}

template <typename T>
BasicFeatureMap<T> BasicFeatureMap<T>::gather(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw Error(ErrorCode::ZeroDim, "gather of zero samples");
  Dims d = dims_;
  d.batch = indices.size();
  BasicFeatureMap out(d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= dims_.batch) throw Error(ErrorCode::ShapeMismatch, "gather index out of range");
    std::copy_n(sample_data(indices[i]), d.sample(), out.sample_data(i));
  }
  return out;
}

template <typename T>
void BasicFeatureMap<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool BasicFeatureMap<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
BasicFeatureMap<T> concat_batch(std::span<const BasicFeatureMap<T>> parts) {
  if (parts.empty()) throw Error(ErrorCode::ZeroDim, "concat of zero maps");
  Dims d = parts.front().dims();
  d.batch = 0;
  for (const auto& p : parts) {
    Dims pd = p.dims();
    if (pd.channels != d.channels || pd.height != d.height || pd.width != d.width) {
      throw Error(ErrorCode::ShapeMismatch, "concat of " + pd.to_string() + " onto " + d.to_string());
    }
    d.batch += pd.batch;
  }
  BasicFeatureMap<T> out(d);
  T* dst = out.data();
  for (const auto& p : parts) dst = std::copy(p.values().begin(), p.values().end(), dst);
  return out;
}

template <typename T>
BasicFeatureMap<T> map_elementwise(const BasicFeatureMap<T>& a, const BasicFeatureMap<T>& b,
                                   ElementwiseOp op) {
  if (a.dims() != b.dims()) {
    throw Error(ErrorCode::ShapeMismatch, a.dims().to_string() + " vs " + b.dims().to_string());
  }
  BasicFeatureMap<T> out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) {
    switch (op) {
      case ElementwiseOp::Add: out[i] = a[i] + b[i]; break;
      case ElementwiseOp::Mul: out[i] = a[i] * b[i]; break;
      case ElementwiseOp::Max: out[i] = std::max(a[i], b[i]); break;
    }
  }
  return out;
}

template <typename T>
void require_finite(const BasicFeatureMap<T>& map, const char* context) {
  if (!map.all_finite()) throw Error(ErrorCode::NonFinite, std::string("non-finite value in ") + context);
}

template class BasicFeatureMap<float>;
template class BasicFeatureMap<double>;
template BasicFeatureMap<float> concat_batch(std::span<const BasicFeatureMap<float>>);
template BasicFeatureMap<double> concat_batch(std::span<const BasicFeatureMap<double>>);
template BasicFeatureMap<float> map_elementwise(const BasicFeatureMap<float>&, const BasicFeatureMap<float>&,
                                                ElementwiseOp);
template BasicFeatureMap<double> map_elementwise(const BasicFeatureMap<double>&, const BasicFeatureMap<double>&,
                                                 ElementwiseOp);
template void require_finite(const BasicFeatureMap<float>&, const char*);
template void require_finite(const BasicFeatureMap<double>&, const char*);

}  // namespace acnn
