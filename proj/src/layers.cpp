#include "acnn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "acnn/parallel.hpp"

namespace acnn {
namespace {

// Convolution sums are accumulated in double regardless of the storage type.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvShape {
  std::size_t batch, in_c, in_h, in_w, out_h, out_w;
};

template <typename T>
ConvShape check_conv(const Dims& in, const ConvParams<T>& params) {
  const auto& g = params.geometry;
  if (in.channels != g.in_channels) {
    throw Error(ErrorCode::ShapeMismatch, "conv expects " + std::to_string(g.in_channels) +
                                              " input channels, got " + std::to_string(in.channels));
  }
  if (params.weights.size() != g.weight_count() || params.bias.size() != g.out_channels) {
    throw Error(ErrorCode::ShapeMismatch, "conv parameter blob sizes disagree with geometry");
  }
  if (g.stride == 0 || g.kernel == 0) throw Error(ErrorCode::BadConfig, "conv kernel and stride must be >= 1");
  const std::size_t oh = g.output_size(in.height);
  const std::size_t ow = g.output_size(in.width);
  if (oh < 1 || ow < 1) {
    throw Error(ErrorCode::EmptyOutput, "conv output would be empty for input " + in.to_string());
  }
  return {in.batch, in.channels, in.height, in.width, oh, ow};
}

template <typename T>
void im2col(const T* x, const ConvShape& s, const ConvGeometry& g, double* col) {
  const std::size_t k = g.kernel;
  const std::size_t positions = s.out_h * s.out_w;
  for (std::size_t u = 0; u < s.in_c; ++u) {
    const T* plane = x + u * s.in_h * s.in_w;
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw) {
        double* row = col + ((u * k + kh) * k + kw) * positions;
        for (std::size_t i = 0; i < s.out_h; ++i) {
          const long ih = static_cast<long>(i * g.stride + kh) - static_cast<long>(g.padding);
          double* dst = row + i * s.out_w;
          if (ih < 0 || ih >= static_cast<long>(s.in_h)) {
            std::fill_n(dst, s.out_w, 0.0);
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(ih) * s.in_w;
          for (std::size_t j = 0; j < s.out_w; ++j) {
            const long iw = static_cast<long>(j * g.stride + kw) - static_cast<long>(g.padding);
            dst[j] = (iw < 0 || iw >= static_cast<long>(s.in_w)) ? 0.0 : static_cast<double>(src[iw]);
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvShape& s, const ConvGeometry& g, double* dx) {
  const std::size_t k = g.kernel;
  const std::size_t positions = s.out_h * s.out_w;
  for (std::size_t u = 0; u < s.in_c; ++u) {
    double* plane = dx + u * s.in_h * s.in_w;
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw) {
        const double* row = col + ((u * k + kh) * k + kw) * positions;
        for (std::size_t i = 0; i < s.out_h; ++i) {
          const long ih = static_cast<long>(i * g.stride + kh) - static_cast<long>(g.padding);
          if (ih < 0 || ih >= static_cast<long>(s.in_h)) continue;
          double* dst = plane + static_cast<std::size_t>(ih) * s.in_w;
          const double* src = row + i * s.out_w;
          for (std::size_t j = 0; j < s.out_w; ++j) {
            const long iw = static_cast<long>(j * g.stride + kw) - static_cast<long>(g.padding);
            if (iw >= 0 && iw < static_cast<long>(s.in_w)) dst[iw] += src[j];
          }
        }
      }
    }
  }
}

template <typename T>
Mat weights_as_matrix(const ConvParams<T>& params) {
  const auto& g = params.geometry;
  Mat w(g.out_channels, g.in_channels * g.kernel * g.kernel);
  for (std::size_t i = 0; i < params.weights.size(); ++i) w.data()[i] = static_cast<double>(params.weights[i]);
  return w;
}

template <typename T>
BasicFeatureMap<T> col_to_input(const std::vector<Mat>& dcols, const ConvShape& s, const ConvGeometry& g,
                                const Dims& input_dims) {
  BasicFeatureMap<T> grad_input(input_dims);
  const std::size_t sample = input_dims.sample();
  parallel_for(s.batch, [&](std::size_t b) {
    std::vector<double> acc(sample, 0.0);
    col2im(dcols[b].data(), s, g, acc.data());
    T* dst = grad_input.sample_data(b);
    for (std::size_t i = 0; i < sample; ++i) dst[i] = static_cast<T>(acc[i]);
  });
  return grad_input;
}

struct WindowRange {
  std::size_t h0, h1, w0, w1;  // half-open, clipped to the valid input
};

WindowRange pool_window(const PoolGeometry& g, std::size_t i, std::size_t j, std::size_t in_h,
                        std::size_t in_w) {
  const long top = static_cast<long>(i * g.stride) - static_cast<long>(g.padding);
  const long left = static_cast<long>(j * g.stride) - static_cast<long>(g.padding);
  const long k = static_cast<long>(g.kernel);
  return {static_cast<std::size_t>(std::max(top, 0L)),
          static_cast<std::size_t>(std::clamp(top + k, 0L, static_cast<long>(in_h))),
          static_cast<std::size_t>(std::max(left, 0L)),
          static_cast<std::size_t>(std::clamp(left + k, 0L, static_cast<long>(in_w)))};
}

Dims pool_output_dims(const Dims& in, const PoolGeometry& g) {
  if (g.kernel == 0 || g.stride == 0) throw Error(ErrorCode::BadConfig, "pool kernel and stride must be >= 1");
  const std::size_t oh = g.output_size(in.height);
  const std::size_t ow = g.output_size(in.width);
  if (oh < 1 || ow < 1) throw Error(ErrorCode::EmptyOutput, "pool output would be empty for " + in.to_string());
  // A window made entirely of padding would have nothing to reduce.
  if (g.padding >= g.kernel) throw Error(ErrorCode::BadConfig, "pool padding must be smaller than the kernel");
  return {in.batch, in.channels, oh, ow};
}

}  // namespace

std::size_t ConvGeometry::output_size(std::size_t in) const {
  if (stride == 0 || in + 2 * padding < kernel) return 0;
  return (in + 2 * padding - kernel) / stride + 1;
}

std::size_t PoolGeometry::output_size(std::size_t in) const {
  if (stride == 0 || in + 2 * padding < kernel) return 0;
  return (in + 2 * padding - kernel) / stride + 1;
}

template <typename T>
ConvParams<T> ConvParams<T>::zeros(const ConvGeometry& g, Activation act) {
  ConvParams p;
  p.geometry = g;
  p.activation = act;
  p.weights.assign(g.weight_count(), T(0));
  p.bias.assign(g.out_channels, T(0));
  return p;
}

template <typename T>
T activate(T x, const Activation& act) {
  switch (act.kind) {
    case ActivationKind::Identity: return x;
    case ActivationKind::ReLU: return x > T(0) ? x : T(0);
    case ActivationKind::LeakyReLU: return x > T(0) ? x : static_cast<T>(act.slope * x);
  }
  return x;
}

template <typename T>
T activation_derivative(T pre, const Activation& act) {
  switch (act.kind) {
    case ActivationKind::Identity: return T(1);
    case ActivationKind::ReLU: return pre > T(0) ? T(1) : T(0);
    case ActivationKind::LeakyReLU: return pre > T(0) ? T(1) : static_cast<T>(act.slope);
  }
  return T(1);
}

template <typename T>
BasicFeatureMap<T> apply_activation(const BasicFeatureMap<T>& pre, const Activation& act) {
  BasicFeatureMap<T> out(pre.dims());
  for (std::size_t i = 0; i < pre.size(); ++i) out[i] = activate(pre[i], act);
  return out;
}

template <typename T>
BasicFeatureMap<T> activation_backward(const BasicFeatureMap<T>& pre, const BasicFeatureMap<T>& grad_out,
                                       const Activation& act) {
  if (pre.dims() != grad_out.dims()) throw Error(ErrorCode::ShapeMismatch, "activation backward shapes differ");
  BasicFeatureMap<T> out(pre.dims());
  for (std::size_t i = 0; i < pre.size(); ++i) out[i] = grad_out[i] * activation_derivative(pre[i], act);
  return out;
}

template <typename T>
BasicFeatureMap<T> conv2d_preactivation(const BasicFeatureMap<T>& input, const ConvParams<T>& params) {
  const ConvShape s = check_conv(input.dims(), params);
  const auto& g = params.geometry;
  const Mat w = weights_as_matrix(params);
  const std::size_t patch = g.in_channels * g.kernel * g.kernel;
  const std::size_t positions = s.out_h * s.out_w;
  BasicFeatureMap<T> out(Dims{s.batch, g.out_channels, s.out_h, s.out_w});
  parallel_for(s.batch, [&](std::size_t b) {
    Mat col(patch, positions);
    im2col(input.sample_data(b), s, g, col.data());
    Mat y = w * col;
    T* dst = out.sample_data(b);
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      const double bias = static_cast<double>(params.bias[o]);
      for (std::size_t p = 0; p < positions; ++p) dst[o * positions + p] = static_cast<T>(y(o, p) + bias);
    }
  });
  return out;
}

template <typename T>
BasicFeatureMap<T> conv2d_forward(const BasicFeatureMap<T>& input, const ConvParams<T>& params) {
  return apply_activation(conv2d_preactivation(input, params), params.activation);
}

template <typename T>
ConvBackwardResult<T> conv2d_backward(const BasicFeatureMap<T>& input, const ConvParams<T>& params,
                                      const BasicFeatureMap<T>& grad_out, const BasicFeatureMap<T>* pre_activation) {
  const ConvShape s = check_conv(input.dims(), params);
  const auto& g = params.geometry;
  const Dims out_dims{s.batch, g.out_channels, s.out_h, s.out_w};
  if (grad_out.dims() != out_dims) {
    throw Error(ErrorCode::ShapeMismatch,
                "conv grad_out " + grad_out.dims().to_string() + " vs output " + out_dims.to_string());
  }
  BasicFeatureMap<T> recomputed;
  if (pre_activation == nullptr && params.activation.kind != ActivationKind::Identity) {
    recomputed = conv2d_preactivation(input, params);
    pre_activation = &recomputed;
  }
  if (pre_activation != nullptr && pre_activation->dims() != out_dims) {
    throw Error(ErrorCode::ShapeMismatch, "conv pre-activation shape differs from output");
  }

  const Mat w = weights_as_matrix(params);
  const std::size_t patch = g.in_channels * g.kernel * g.kernel;
  const std::size_t positions = s.out_h * s.out_w;
  const std::size_t chunk = std::max<std::size_t>(1, std::min(worker_count(), s.batch));

  Mat grad_w = Mat::Zero(g.out_channels, patch);
  std::vector<double> grad_b(g.out_channels, 0.0);
  std::vector<Mat> dcols(s.batch);
  std::vector<Mat> slot_w(chunk);
  std::vector<std::vector<double>> slot_b(chunk);

  // Per-sample weight gradients are reduced in sample order, so the result does not depend
  // on the worker count.
  for (std::size_t start = 0; start < s.batch; start += chunk) {
    const std::size_t n = std::min(chunk, s.batch - start);
    parallel_for(n, [&](std::size_t t) {
      const std::size_t b = start + t;
      Mat gp(g.out_channels, positions);
      const T* go = grad_out.sample_data(b);
      if (pre_activation != nullptr) {
        const T* pre = pre_activation->sample_data(b);
        for (std::size_t i = 0; i < g.out_channels * positions; ++i) {
          gp.data()[i] = static_cast<double>(go[i]) * static_cast<double>(activation_derivative(pre[i], params.activation));
        }
      } else {
        for (std::size_t i = 0; i < g.out_channels * positions; ++i) gp.data()[i] = static_cast<double>(go[i]);
      }
      Mat col(patch, positions);
      im2col(input.sample_data(b), s, g, col.data());
      slot_w[t] = gp * col.transpose();
      slot_b[t].assign(g.out_channels, 0.0);
      for (std::size_t o = 0; o < g.out_channels; ++o) slot_b[t][o] = gp.row(o).sum();
      dcols[b] = w.transpose() * gp;
    });
    for (std::size_t t = 0; t < n; ++t) {
      grad_w += slot_w[t];
      for (std::size_t o = 0; o < g.out_channels; ++o) grad_b[o] += slot_b[t][o];
    }
  }

  ConvBackwardResult<T> result;
  result.grad_input = col_to_input<T>(dcols, s, g, input.dims());
  result.grads.weights.resize(g.weight_count());
  for (std::size_t i = 0; i < g.weight_count(); ++i) result.grads.weights[i] = static_cast<T>(grad_w.data()[i]);
  result.grads.bias.resize(g.out_channels);
  for (std::size_t o = 0; o < g.out_channels; ++o) result.grads.bias[o] = static_cast<T>(grad_b[o]);
  return result;
}

template <typename T>
BasicFeatureMap<T> conv2d_backward_data(const BasicFeatureMap<T>& grad_pre, const ConvParams<T>& params,
                                        const Dims& input_dims) {
  const ConvShape s = check_conv(input_dims, params);
  const auto& g = params.geometry;
  const Dims out_dims{s.batch, g.out_channels, s.out_h, s.out_w};
  if (grad_pre.dims() != out_dims) throw Error(ErrorCode::ShapeMismatch, "conv backward-data shape mismatch");
  const Mat w = weights_as_matrix(params);
  const std::size_t positions = s.out_h * s.out_w;
  std::vector<Mat> dcols(s.batch);
  parallel_for(s.batch, [&](std::size_t b) {
    Mat gp(g.out_channels, positions);
    const T* src = grad_pre.sample_data(b);
    for (std::size_t i = 0; i < g.out_channels * positions; ++i) gp.data()[i] = static_cast<double>(src[i]);
    dcols[b] = w.transpose() * gp;
  });
  return col_to_input<T>(dcols, s, g, input_dims);
}

template <typename T>
BasicFeatureMap<T> pnorm_pool_forward(const BasicFeatureMap<T>& input, const PoolGeometry& geom, double p) {
  if (!(p > 0.0)) throw Error(ErrorCode::BadConfig, "p-norm order must be > 0");
  const Dims in = input.dims();
  const Dims od = pool_output_dims(in, geom);
  BasicFeatureMap<T> out(od);
  for (std::size_t b = 0; b < in.batch; ++b) {
    for (std::size_t c = 0; c < in.channels; ++c) {
      for (std::size_t i = 0; i < od.height; ++i) {
        for (std::size_t j = 0; j < od.width; ++j) {
          const WindowRange win = pool_window(geom, i, j, in.height, in.width);
          double peak = 0.0;
          for (std::size_t h = win.h0; h < win.h1; ++h)
            for (std::size_t w = win.w0; w < win.w1; ++w)
              peak = std::max(peak, std::abs(static_cast<double>(input.at(b, c, h, w))));
          double value = peak;
          if (std::isfinite(p) && peak > 0.0) {
            double sum = 0.0;
            for (std::size_t h = win.h0; h < win.h1; ++h)
              for (std::size_t w = win.w0; w < win.w1; ++w)
                sum += std::pow(std::abs(static_cast<double>(input.at(b, c, h, w))) / peak, p);
            value = peak * std::pow(sum, 1.0 / p);
          }
          out.at(b, c, i, j) = static_cast<T>(value);
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicFeatureMap<T> pnorm_pool_backward(const BasicFeatureMap<T>& input, const BasicFeatureMap<T>& output,
                                       const BasicFeatureMap<T>& grad_out, const PoolGeometry& geom, double p) {
  const Dims in = input.dims();
  const Dims od = pool_output_dims(in, geom);
  if (output.dims() != od || grad_out.dims() != od) throw Error(ErrorCode::ShapeMismatch, "p-norm backward shapes");
  BasicFeatureMap<double> acc(in);
  for (std::size_t b = 0; b < in.batch; ++b) {
    for (std::size_t c = 0; c < in.channels; ++c) {
      for (std::size_t i = 0; i < od.height; ++i) {
        for (std::size_t j = 0; j < od.width; ++j) {
          const double g = static_cast<double>(grad_out.at(b, c, i, j));
          const double s = static_cast<double>(output.at(b, c, i, j));
          if (g == 0.0 || s == 0.0) continue;
          const WindowRange win = pool_window(geom, i, j, in.height, in.width);
          if (!std::isfinite(p)) {
            // Route to the first cell attaining max |f|, carrying its sign.
            std::size_t bh = win.h0, bw = win.w0;
            double best = -1.0;
            for (std::size_t h = win.h0; h < win.h1; ++h)
              for (std::size_t w = win.w0; w < win.w1; ++w) {
                const double a = std::abs(static_cast<double>(input.at(b, c, h, w)));
                if (a > best) {
                  best = a;
                  bh = h;
                  bw = w;
                }
              }
            const double f = static_cast<double>(input.at(b, c, bh, bw));
            acc.at(b, c, bh, bw) += g * (f > 0 ? 1.0 : (f < 0 ? -1.0 : 0.0));
            continue;
          }
          for (std::size_t h = win.h0; h < win.h1; ++h)
            for (std::size_t w = win.w0; w < win.w1; ++w) {
              const double f = static_cast<double>(input.at(b, c, h, w));
              if (f == 0.0) continue;
              // d s / d f = sign(f) (|f| / s)^(p-1)
              const double d = std::pow(std::abs(f) / s, p - 1.0) * (f > 0 ? 1.0 : -1.0);
              acc.at(b, c, h, w) += g * d;
            }
        }
      }
    }
  }
  return acc.template cast<T>();
}

template <typename T>
MaxPoolResult<T> maxpool_forward(const BasicFeatureMap<T>& input, const PoolGeometry& geom) {
  const Dims in = input.dims();
  const Dims od = pool_output_dims(in, geom);
  MaxPoolResult<T> r{BasicFeatureMap<T>(od), Switches{in, od, std::vector<std::uint32_t>(od.count())}};
  for (std::size_t b = 0; b < in.batch; ++b) {
    for (std::size_t c = 0; c < in.channels; ++c) {
      for (std::size_t i = 0; i < od.height; ++i) {
        for (std::size_t j = 0; j < od.width; ++j) {
          const WindowRange win = pool_window(geom, i, j, in.height, in.width);
          std::size_t bh = win.h0, bw = win.w0;
          T best = input.at(b, c, bh, bw);
          // Strict comparison keeps the lowest (row, column) among ties.
          for (std::size_t h = win.h0; h < win.h1; ++h)
            for (std::size_t w = win.w0; w < win.w1; ++w)
              if (input.at(b, c, h, w) > best) {
                best = input.at(b, c, h, w);
                bh = h;
                bw = w;
              }
          const std::size_t flat = r.output.offset(b, c, i, j);
          r.output[flat] = best;
          r.switches.index[flat] = static_cast<std::uint32_t>(bh * in.width + bw);
        }
      }
    }
  }
  return r;
}

template <typename T>
BasicFeatureMap<T> maxpool_backward(const BasicFeatureMap<T>& grad_out, const Switches& switches,
                                    const Dims& input_dims) {
  if (grad_out.dims() != switches.output_dims || input_dims != switches.input_dims ||
      switches.index.size() != grad_out.size()) {
    throw Error(ErrorCode::ShapeMismatch, "maxpool backward: switches do not match gradient or input dims");
  }
  BasicFeatureMap<double> acc(input_dims);
  const std::size_t per_plane = switches.output_dims.plane();
  const std::size_t in_plane = input_dims.plane();
  for (std::size_t flat = 0; flat < grad_out.size(); ++flat) {
    const std::size_t plane_index = flat / per_plane;  // b * C + c
    acc[plane_index * in_plane + switches.index[flat]] += static_cast<double>(grad_out[flat]);
  }
  return acc.template cast<T>();
}

template <typename T>
BasicFeatureMap<T> window_uniform_backward(const BasicFeatureMap<T>& grad_out, const Dims& input_dims,
                                           const PoolGeometry& geom) {
  const Dims od = pool_output_dims(input_dims, geom);
  if (grad_out.dims() != od) throw Error(ErrorCode::ShapeMismatch, "uniform pool backward shape mismatch");
  BasicFeatureMap<double> acc(input_dims);
  for (std::size_t b = 0; b < od.batch; ++b)
    for (std::size_t c = 0; c < od.channels; ++c)
      for (std::size_t i = 0; i < od.height; ++i)
        for (std::size_t j = 0; j < od.width; ++j) {
          const WindowRange win = pool_window(geom, i, j, input_dims.height, input_dims.width);
          const double cells = static_cast<double>((win.h1 - win.h0) * (win.w1 - win.w0));
          const double share = static_cast<double>(grad_out.at(b, c, i, j)) / cells;
          for (std::size_t h = win.h0; h < win.h1; ++h)
            for (std::size_t w = win.w0; w < win.w1; ++w) acc.at(b, c, h, w) += share;
        }
  return acc.template cast<T>();
}

template <typename T>
DropoutResult<T> dropout_forward(const BasicFeatureMap<T>& input, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error(ErrorCode::BadRate, "dropout rate must be in [0, 1)");
  DropoutResult<T> r{input, BasicFeatureMap<T>(input.dims(), T(1))};
  if (!training || rate == 0.0) return r;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < input.size(); ++i) {
    const bool dropped = rng.uniform() < rate;
    r.mask[i] = dropped ? T(0) : keep_scale;
    r.output[i] = input[i] * r.mask[i];
  }
  return r;
}

template <typename T>
BasicFeatureMap<T> dropout_backward(const BasicFeatureMap<T>& grad_out, const BasicFeatureMap<T>& mask) {
  return map_elementwise(grad_out, mask, ElementwiseOp::Mul);
}

template <typename T>
BasicFeatureMap<T> global_avg_pool(const BasicFeatureMap<T>& input) {
  const Dims in = input.dims();
  BasicFeatureMap<T> out(Dims{in.batch, in.channels, 1, 1});
  const std::size_t plane = in.plane();
  for (std::size_t bc = 0; bc < in.batch * in.channels; ++bc) {
    double sum = 0.0;
    const T* src = input.data() + bc * plane;
    for (std::size_t i = 0; i < plane; ++i) sum += static_cast<double>(src[i]);
    out[bc] = static_cast<T>(sum / static_cast<double>(plane));
  }
  return out;
}

template <typename T>
BasicFeatureMap<T> global_avg_pool_backward(const BasicFeatureMap<T>& grad_out, const Dims& input_dims) {
  if (grad_out.dims() != Dims{input_dims.batch, input_dims.channels, 1, 1}) {
    throw Error(ErrorCode::ShapeMismatch, "global average backward shape mismatch");
  }
  BasicFeatureMap<T> out(input_dims);
  const std::size_t plane = input_dims.plane();
  for (std::size_t bc = 0; bc < input_dims.batch * input_dims.channels; ++bc) {
    const T share = static_cast<T>(static_cast<double>(grad_out[bc]) / static_cast<double>(plane));
    std::fill_n(out.data() + bc * plane, plane, share);
  }
  return out;
}

template <typename T>
BasicFeatureMap<T> softmax(const BasicFeatureMap<T>& logits) {
  const Dims d = logits.dims();
  if (d.height != 1 || d.width != 1) throw Error(ErrorCode::ShapeMismatch, "softmax expects 1x1 spatial logits");
  BasicFeatureMap<T> out(d);
  for (std::size_t b = 0; b < d.batch; ++b) {
    const T* z = logits.sample_data(b);
    double peak = static_cast<double>(*std::max_element(z, z + d.channels));
    double total = 0.0;
    for (std::size_t c = 0; c < d.channels; ++c) total += std::exp(static_cast<double>(z[c]) - peak);
    for (std::size_t c = 0; c < d.channels; ++c)
      out.sample_data(b)[c] = static_cast<T>(std::exp(static_cast<double>(z[c]) - peak) / total);
  }
  return out;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const BasicFeatureMap<T>& logits, std::span<const int> labels) {
  const Dims d = logits.dims();
  if (d.height != 1 || d.width != 1) throw Error(ErrorCode::ShapeMismatch, "loss expects 1x1 spatial logits");
  if (labels.size() != d.batch) throw Error(ErrorCode::ShapeMismatch, "one label per sample required");
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= d.channels) {
      throw Error(ErrorCode::BadLabel, "label " + std::to_string(label) + " outside [0, " +
                                           std::to_string(d.channels) + ")");
    }
  }
  LossResult<T> r{0.0, BasicFeatureMap<T>(d)};
  const double inv_batch = 1.0 / static_cast<double>(d.batch);
  for (std::size_t b = 0; b < d.batch; ++b) {
    const T* z = logits.sample_data(b);
    const double peak = static_cast<double>(*std::max_element(z, z + d.channels));
    double total = 0.0;
    for (std::size_t c = 0; c < d.channels; ++c) total += std::exp(static_cast<double>(z[c]) - peak);
    const double log_total = std::log(total);
    const auto label = static_cast<std::size_t>(labels[b]);
    r.loss += (log_total - (static_cast<double>(z[label]) - peak)) * inv_batch;
    T* g = r.grad_logits.sample_data(b);
    for (std::size_t c = 0; c < d.channels; ++c) {
      const double prob = std::exp(static_cast<double>(z[c]) - peak - log_total);
      g[c] = static_cast<T>((prob - (c == label ? 1.0 : 0.0)) * inv_batch);
    }
  }
  return r;
}

#define ACNN_INSTANTIATE_LAYERS(T)                                                                            \
  template struct ConvParams<T>;                                                                              \
  template T activate(T, const Activation&);                                                                  \
  template T activation_derivative(T, const Activation&);                                                     \
  template BasicFeatureMap<T> apply_activation(const BasicFeatureMap<T>&, const Activation&);                 \
  template BasicFeatureMap<T> activation_backward(const BasicFeatureMap<T>&, const BasicFeatureMap<T>&,       \
                                                  const Activation&);                                         \
  template BasicFeatureMap<T> conv2d_preactivation(const BasicFeatureMap<T>&, const ConvParams<T>&);          \
  template BasicFeatureMap<T> conv2d_forward(const BasicFeatureMap<T>&, const ConvParams<T>&);                \
  template ConvBackwardResult<T> conv2d_backward(const BasicFeatureMap<T>&, const ConvParams<T>&,             \
                                                 const BasicFeatureMap<T>&, const BasicFeatureMap<T>*);       \
  template BasicFeatureMap<T> conv2d_backward_data(const BasicFeatureMap<T>&, const ConvParams<T>&,           \
                                                   const Dims&);                                              \
  template BasicFeatureMap<T> pnorm_pool_forward(const BasicFeatureMap<T>&, const PoolGeometry&, double);     \
  template BasicFeatureMap<T> pnorm_pool_backward(const BasicFeatureMap<T>&, const BasicFeatureMap<T>&,       \
                                                  const BasicFeatureMap<T>&, const PoolGeometry&, double);    \
  template MaxPoolResult<T> maxpool_forward(const BasicFeatureMap<T>&, const PoolGeometry&);                  \
  template BasicFeatureMap<T> maxpool_backward(const BasicFeatureMap<T>&, const Switches&, const Dims&);      \
  template BasicFeatureMap<T> window_uniform_backward(const BasicFeatureMap<T>&, const Dims&,                 \
                                                      const PoolGeometry&);                                   \
  template DropoutResult<T> dropout_forward(const BasicFeatureMap<T>&, double, Rng&, bool);                   \
  template BasicFeatureMap<T> dropout_backward(const BasicFeatureMap<T>&, const BasicFeatureMap<T>&);         \
  template BasicFeatureMap<T> global_avg_pool(const BasicFeatureMap<T>&);                                     \
  template BasicFeatureMap<T> global_avg_pool_backward(const BasicFeatureMap<T>&, const Dims&);               \
  template BasicFeatureMap<T> softmax(const BasicFeatureMap<T>&);                                             \
  template LossResult<T> softmax_cross_entropy(const BasicFeatureMap<T>&, std::span<const int>);

ACNN_INSTANTIATE_LAYERS(float)
ACNN_INSTANTIATE_LAYERS(double)

#undef ACNN_INSTANTIATE_LAYERS

}  // namespace acnn
