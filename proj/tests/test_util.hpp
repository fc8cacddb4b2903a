#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "acnn/feature_map.hpp"
#include "acnn/layers.hpp"
#include "acnn/model.hpp"
#include "acnn/rng.hpp"

namespace acnn::testing {

template <typename T>
BasicFeatureMap<T> random_map(const Dims& d, Rng& rng, double lo = -1.0, double hi = 1.0) {
  BasicFeatureMap<T> m(d);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<T>(lo + (hi - lo) * rng.uniform());
  return m;
}

template <typename T>
ConvParams<T> random_conv(const ConvGeometry& g, Activation act, Rng& rng, double scale = 0.5) {
  ConvParams<T> p = ConvParams<T>::zeros(g, act);
  for (auto& w : p.weights) w = static_cast<T>(scale * (2.0 * rng.uniform() - 1.0));
  for (auto& b : p.bias) b = static_cast<T>(scale * (2.0 * rng.uniform() - 1.0));
  return p;
}

// Direct evaluation of the convolution sum, one output element at a time.
template <typename T>
BasicFeatureMap<double> brute_conv(const BasicFeatureMap<T>& in, const ConvParams<T>& p, bool activate_out = true) {
  const auto& g = p.geometry;
  const Dims d = in.dims();
  const std::size_t oh = g.output_size(d.height), ow = g.output_size(d.width);
  BasicFeatureMap<double> out(Dims{d.batch, g.out_channels, oh, ow});
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double s = static_cast<double>(p.bias[o]);
          for (std::size_t u = 0; u < g.in_channels; ++u)
            for (std::size_t h = 0; h < g.kernel; ++h)
              for (std::size_t w = 0; w < g.kernel; ++w) {
                const long y = static_cast<long>(i * g.stride + h) - static_cast<long>(g.padding);
                const long x = static_cast<long>(j * g.stride + w) - static_cast<long>(g.padding);
                if (y < 0 || x < 0 || y >= static_cast<long>(d.height) || x >= static_cast<long>(d.width)) continue;
                s += static_cast<double>(p.weight(o, u, h, w)) *
                     static_cast<double>(in.at(b, u, static_cast<std::size_t>(y), static_cast<std::size_t>(x)));
              }
          out.at(b, o, i, j) = activate_out ? activate(s, p.activation) : s;
        }
  return out;
}

// Window reduction over the valid cells of each pooling window.
template <typename T>
BasicFeatureMap<double> brute_pool(const BasicFeatureMap<T>& in, const PoolGeometry& g,
                                   const std::function<double(const std::vector<double>&)>& reduce) {
  const Dims d = in.dims();
  const std::size_t oh = g.output_size(d.height), ow = g.output_size(d.width);
  BasicFeatureMap<double> out(Dims{d.batch, d.channels, oh, ow});
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t c = 0; c < d.channels; ++c)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          std::vector<double> cells;
          for (std::size_t h = 0; h < g.kernel; ++h)
            for (std::size_t w = 0; w < g.kernel; ++w) {
              const long y = static_cast<long>(i * g.stride + h) - static_cast<long>(g.padding);
              const long x = static_cast<long>(j * g.stride + w) - static_cast<long>(g.padding);
              if (y < 0 || x < 0 || y >= static_cast<long>(d.height) || x >= static_cast<long>(d.width)) continue;
              cells.push_back(static_cast<double>(in.at(b, c, static_cast<std::size_t>(y), static_cast<std::size_t>(x))));
            }
          out.at(b, c, i, j) = reduce(cells);
        }
  return out;
}

// Central difference of f with respect to x[i].
inline double central_difference(const std::function<double()>& f, double& x, double eps) {
  const double saved = x;
  x = saved + eps;
  const double up = f();
  x = saved - eps;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * eps);
}

// |a - b| / max(|a|, |b|, floor): relative error with an absolute floor for tiny gradients.
inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Sum of grad * out: a scalar objective whose gradient with respect to `out` is `grad`.
template <typename T>
double dot(const BasicFeatureMap<T>& a, const BasicFeatureMap<T>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

// True when no ReLU pre-activation changed sign and no max-pool switch moved between two
// forward passes, i.e. the network is linear along the segment joining them.
template <typename T>
bool same_activation_pattern(const ForwardTrace<T>& a, const ForwardTrace<T>& b) {
  for (std::size_t i = 0; i < a.pre_activations.size(); ++i) {
    const auto& pa = a.pre_activations[i];
    const auto& pb = b.pre_activations[i];
    if (pa.size() != pb.size()) return false;
    for (std::size_t k = 0; k < pa.size(); ++k)
      if ((pa[k] > T(0)) != (pb[k] > T(0))) return false;
  }
  for (std::size_t i = 0; i < a.switches.size(); ++i)
    if (!(a.switches[i] == b.switches[i])) return false;
  return true;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("acnn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// One CIFAR-10 style record whose class is visible in its layout: a colour cast on channel
// label % 3 and horizontal or vertical stripes of period 2 + label / 3, plus noise.
inline std::vector<std::uint8_t> synthetic_cifar_record(int label, Rng& rng) {
  std::vector<std::uint8_t> rec(1 + 3 * 1024);
  rec[0] = static_cast<std::uint8_t>(label);
  const int period = 2 + label / 3;
  const bool vertical = label % 2 == 1;
  for (int c = 0; c < 3; ++c)
    for (int h = 0; h < 32; ++h)
      for (int w = 0; w < 32; ++w) {
        const int t = vertical ? w : h;
        double v = 100.0 + ((t / period) % 2 == 0 ? 50.0 : -50.0) + (c == label % 3 ? 40.0 : 0.0) + 20.0 * rng.normal();
        rec[1 + c * 1024 + h * 32 + w] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
  return rec;
}

// Writes data_batch_1..5.bin (per_batch records each) and test_batch.bin (n_test records).
inline void write_synthetic_cifar10(const std::filesystem::path& dir, std::size_t per_batch, std::size_t n_test,
                                    std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  Rng rng(seed);
  auto write = [&](const std::string& name, std::size_t n) {
    std::ofstream out(dir / name, std::ios::binary);
    for (std::size_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(rng.below(10));
      const auto rec = synthetic_cifar_record(label, rng);
      out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
    }
  };
  for (int b = 1; b <= 5; ++b) write("data_batch_" + std::to_string(b) + ".bin", per_batch);
  write("test_batch.bin", n_test);
}

}  // namespace acnn::testing
