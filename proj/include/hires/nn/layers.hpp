#pragma once

// Convolution, normalization and activation layers with hand-written
// backward passes. Templated on the scalar so the same code runs in float
// for training and in double for gradient checks and losses.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "hires/errors.hpp"
#include "hires/tensor.hpp"

namespace hires::nn {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

/// Upper bound on im2col buffer elements; larger outputs are processed in row bands.
inline constexpr std::size_t kColumnBudget = std::size_t{1} << 22;

namespace detail {

struct Geometry {
  int channels, height, width, kernel, stride, pad, out_h, out_w;
  bool replicate = false;
};

// Lowers output rows [r0, r1) of one sample into a (C*k*k) x ((r1-r0)*out_w) matrix.
template <typename T>
void im2col(const T* x, const Geometry& g, int r0, int r1, T* col) {
  const std::size_t cols = static_cast<std::size_t>(r1 - r0) * g.out_w;
  const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
  for (int ci = 0; ci < g.channels; ++ci) {
    const T* xc = x + ci * plane;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        T* dst = col + (static_cast<std::size_t>(ci * g.kernel + ky) * g.kernel + kx) * cols;
        for (int oy = r0; oy < r1; ++oy, dst += g.out_w) {
          int iy = oy * g.stride - g.pad + ky;
          if (g.replicate) {
            iy = std::clamp(iy, 0, g.height - 1);
          } else if (iy < 0 || iy >= g.height) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(iy) * g.width;
          if (g.replicate) {
            for (int ox = 0; ox < g.out_w; ++ox) {
              dst[ox] = src[std::clamp(ox * g.stride - g.pad + kx, 0, g.width - 1)];
            }
          } else if (g.stride == 1) {
            const int lo = std::clamp(g.pad - kx, 0, g.out_w);
            const int hi = std::clamp(g.width + g.pad - kx, lo, g.out_w);
            std::fill_n(dst, lo, T(0));
            std::copy(src + lo - g.pad + kx, src + hi - g.pad + kx, dst + lo);
            std::fill(dst + hi, dst + g.out_w, T(0));
          } else {
            for (int ox = 0; ox < g.out_w; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters the column matrix back, accumulating into dx.
template <typename T>
void col2im(const T* col, const Geometry& g, int r0, int r1, T* dx) {
  const std::size_t cols = static_cast<std::size_t>(r1 - r0) * g.out_w;
  const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
  for (int ci = 0; ci < g.channels; ++ci) {
    T* dc = dx + ci * plane;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const T* src = col + (static_cast<std::size_t>(ci * g.kernel + ky) * g.kernel + kx) * cols;
        for (int oy = r0; oy < r1; ++oy, src += g.out_w) {
          int iy = oy * g.stride - g.pad + ky;
          if (g.replicate) {
            iy = std::clamp(iy, 0, g.height - 1);
          } else if (iy < 0 || iy >= g.height) {
            continue;
          }
          T* row = dc + static_cast<std::size_t>(iy) * g.width;
          if (g.replicate) {
            for (int ox = 0; ox < g.out_w; ++ox) {
              row[std::clamp(ox * g.stride - g.pad + kx, 0, g.width - 1)] += src[ox];
            }
            continue;
          }
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) row[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

enum class Padding { kZero, kReplicate };

/// Square-kernel 2D convolution with "same" padding of k/2 pixels.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int kernel, int stride, bool with_bias,
         Padding padding = Padding::kZero)
      : weight(out_ch, in_ch, kernel, kernel),
        grad_weight(out_ch, in_ch, kernel, kernel),
        stride_(stride),
        padding_(padding) {
    require(in_ch >= 1 && out_ch >= 1 && kernel >= 1 && kernel % 2 == 1 && stride >= 1,
            "Conv2d: bad geometry");
    if (with_bias) {
      bias.assign(out_ch, T(0));
      grad_bias.assign(out_ch, T(0));
    }
  }

  Tensor<T> weight;  // (out, in, k, k)
  std::vector<T> bias;
  Tensor<T> grad_weight;
  std::vector<T> grad_bias;

  [[nodiscard]] int in_channels() const { return weight.c; }
  [[nodiscard]] int out_channels() const { return weight.n; }
  [[nodiscard]] int kernel() const { return weight.h; }
  [[nodiscard]] int stride() const { return stride_; }
  [[nodiscard]] bool has_bias() const { return !bias.empty(); }
  [[nodiscard]] int out_size(int in) const { return (in + 2 * (kernel() / 2) - kernel()) / stride_ + 1; }

  /// He-style normal initialization scaled by fan-in.
  void init(std::mt19937_64& rng, double gain) {
    const double fan_in = static_cast<double>(in_channels()) * kernel() * kernel();
    std::normal_distribution<double> dist(0.0, gain / std::sqrt(fan_in));
    for (auto& v : weight.data) v = static_cast<T>(dist(rng));
    std::fill(bias.begin(), bias.end(), T(0));
  }

  void zero_grad() {
    grad_weight.zero();
    std::fill(grad_bias.begin(), grad_bias.end(), T(0));
  }

  [[nodiscard]] Tensor<T> forward(const Tensor<T>& x) const {
    require(x.c == in_channels(), "Conv2d::forward: channel mismatch");
    const auto g = geometry(x);
    Tensor<T> y(x.n, out_channels(), g.out_h, g.out_w);
    const int K = in_channels() * kernel() * kernel();
    const ConstMatMap<T> wmat(weight.data.data(), out_channels(), K, Eigen::OuterStride<>(K));
    const int band = band_rows(K, g.out_w, g.out_h);
    std::vector<T> col(static_cast<std::size_t>(K) * band * g.out_w);
    const auto out_plane = static_cast<Eigen::Index>(y.plane());
    for (int i = 0; i < x.n; ++i) {
      for (int r0 = 0; r0 < g.out_h; r0 += band) {
        const int r1 = std::min(g.out_h, r0 + band);
        const int P = (r1 - r0) * g.out_w;
        detail::im2col(x.sample(i), g, r0, r1, col.data());
        const ConstMatMap<T> cmat(col.data(), K, P, Eigen::OuterStride<>(P));
        MatMap<T> ymat(y.sample(i) + static_cast<std::size_t>(r0) * g.out_w, out_channels(), P,
                       Eigen::OuterStride<>(out_plane));
        ymat.noalias() = wmat * cmat;
      }
      if (has_bias()) {
        for (int co = 0; co < out_channels(); ++co) {
          T* p = y.channel(i, co);
          for (std::size_t k = 0; k < y.plane(); ++k) p[k] += bias[co];
        }
      }
    }
    return y;
  }

  /// Accumulates parameter gradients from dy; returns dL/dx (empty when not wanted).
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy, bool want_input_grad = true) {
    return backward_impl(x, dy, grad_weight.data.data(), has_bias() ? grad_bias.data() : nullptr,
                         want_input_grad);
  }

  /// dL/dx only; parameters and their gradients stay untouched.
  [[nodiscard]] Tensor<T> input_grad(const Tensor<T>& x, const Tensor<T>& dy) const {
    return backward_impl(x, dy, nullptr, nullptr, true);
  }

  [[nodiscard]] Padding padding() const { return padding_; }

 private:
  Tensor<T> backward_impl(const Tensor<T>& x, const Tensor<T>& dy, T* gw_data, T* gb_data,
                          bool want_input_grad) const {
    const auto g = geometry(x);
    require(dy.n == x.n && dy.c == out_channels() && dy.h == g.out_h && dy.w == g.out_w,
            "Conv2d::backward: gradient shape mismatch");
    const int K = in_channels() * kernel() * kernel();
    const ConstMatMap<T> wmat(weight.data.data(), out_channels(), K, Eigen::OuterStride<>(K));
    Tensor<T> dx;
    if (want_input_grad) dx = Tensor<T>(x.n, x.c, x.h, x.w);
    const int band = band_rows(K, g.out_w, g.out_h);
    std::vector<T> col(static_cast<std::size_t>(K) * band * g.out_w);
    std::vector<T> dcol(want_input_grad ? col.size() : 0);
    const auto out_plane = static_cast<Eigen::Index>(dy.plane());
    for (int i = 0; i < x.n; ++i) {
      for (int r0 = 0; r0 < g.out_h; r0 += band) {
        const int r1 = std::min(g.out_h, r0 + band);
        const int P = (r1 - r0) * g.out_w;
        detail::im2col(x.sample(i), g, r0, r1, col.data());
        const ConstMatMap<T> cmat(col.data(), K, P, Eigen::OuterStride<>(P));
        const ConstMatMap<T> dymat(dy.sample(i) + static_cast<std::size_t>(r0) * g.out_w,
                                   out_channels(), P, Eigen::OuterStride<>(out_plane));
        if (gw_data != nullptr) {
          MatMap<T> gw(gw_data, out_channels(), K, Eigen::OuterStride<>(K));
          gw.noalias() += dymat * cmat.transpose();
        }
        if (want_input_grad) {
          MatMap<T> dc(dcol.data(), K, P, Eigen::OuterStride<>(P));
          dc.noalias() = wmat.transpose() * dymat;
          detail::col2im(dcol.data(), g, r0, r1, dx.sample(i));
        }
      }
      if (gb_data != nullptr) {
        for (int co = 0; co < out_channels(); ++co) {
          const T* p = dy.channel(i, co);
          double acc = 0.0;
          for (std::size_t k = 0; k < dy.plane(); ++k) acc += p[k];
          gb_data[co] += static_cast<T>(acc);
        }
      }
    }
    return dx;
  }

  [[nodiscard]] detail::Geometry geometry(const Tensor<T>& x) const {
    return {x.c, x.h, x.w, kernel(), stride_, kernel() / 2, out_size(x.h), out_size(x.w),
            padding_ == Padding::kReplicate};
  }
  static int band_rows(int K, int out_w, int out_h) {
    const std::size_t per_row = static_cast<std::size_t>(K) * out_w;
    return std::clamp(static_cast<int>(kColumnBudget / std::max<std::size_t>(per_row, 1)), 1, out_h);
  }

  int stride_ = 1;
  Padding padding_ = Padding::kZero;
};

/// Per-channel batch normalization with learned affine and running statistics.
template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels, T momentum = T(0.1), T eps = T(1e-5))
      : gamma(channels, T(1)), beta(channels, T(0)), running_mean(channels, T(0)),
        running_var(channels, T(1)), grad_gamma(channels, T(0)), grad_beta(channels, T(0)),
        momentum_(momentum), eps_(eps) {}

  std::vector<T> gamma, beta, running_mean, running_var;
  std::vector<T> grad_gamma, grad_beta;

  struct Cache {
    Tensor<T> xhat;
    std::vector<T> inv_std;
  };

  [[nodiscard]] int channels() const { return static_cast<int>(gamma.size()); }

  void zero_grad() {
    std::fill(grad_gamma.begin(), grad_gamma.end(), T(0));
    std::fill(grad_beta.begin(), grad_beta.end(), T(0));
  }

  /// Normalizes with batch statistics and folds them into the running estimates.
  Tensor<T> forward_train(const Tensor<T>& x, Cache& cache) {
    require(x.c == channels(), "BatchNorm2d: channel mismatch");
    const double count = static_cast<double>(x.n) * x.plane();
    Tensor<T> y(x.n, x.c, x.h, x.w);
    cache.xhat = Tensor<T>(x.n, x.c, x.h, x.w);
    cache.inv_std.assign(x.c, T(0));
    for (int ch = 0; ch < x.c; ++ch) {
      double sum = 0.0;
      for (int i = 0; i < x.n; ++i) {
        const T* p = x.channel(i, ch);
        for (std::size_t k = 0; k < x.plane(); ++k) sum += p[k];
      }
      const double mean = sum / count;
      double sq = 0.0;
      for (int i = 0; i < x.n; ++i) {
        const T* p = x.channel(i, ch);
        for (std::size_t k = 0; k < x.plane(); ++k) {
          const double d = p[k] - mean;
          sq += d * d;
        }
      }
      const double var = sq / count;
      const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps_));
      cache.inv_std[ch] = static_cast<T>(inv);
      for (int i = 0; i < x.n; ++i) {
        const T* p = x.channel(i, ch);
        T* xh = cache.xhat.channel(i, ch);
        T* q = y.channel(i, ch);
        for (std::size_t k = 0; k < x.plane(); ++k) {
          xh[k] = static_cast<T>((p[k] - mean) * inv);
          q[k] = gamma[ch] * xh[k] + beta[ch];
        }
      }
      const double unbiased = count > 1 ? sq / (count - 1) : var;
      running_mean[ch] = static_cast<T>((1.0 - momentum_) * running_mean[ch] + momentum_ * mean);
      running_var[ch] = static_cast<T>((1.0 - momentum_) * running_var[ch] + momentum_ * unbiased);
    }
    return y;
  }

  [[nodiscard]] Tensor<T> forward_infer(const Tensor<T>& x) const {
    require(x.c == channels(), "BatchNorm2d: channel mismatch");
    Tensor<T> y(x.n, x.c, x.h, x.w);
    for (int ch = 0; ch < x.c; ++ch) {
      const T scale = static_cast<T>(gamma[ch] / std::sqrt(static_cast<double>(running_var[ch]) + eps_));
      const T shift = beta[ch] - running_mean[ch] * scale;
      for (int i = 0; i < x.n; ++i) {
        const T* p = x.channel(i, ch);
        T* q = y.channel(i, ch);
        for (std::size_t k = 0; k < x.plane(); ++k) q[k] = p[k] * scale + shift;
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, const Cache& cache) {
    const auto& xh = cache.xhat;
    require(dy.same_shape(xh), "BatchNorm2d::backward: shape mismatch");
    const double count = static_cast<double>(dy.n) * dy.plane();
    Tensor<T> dx(dy.n, dy.c, dy.h, dy.w);
    for (int ch = 0; ch < dy.c; ++ch) {
      double sum_dy = 0.0;
      double sum_dy_xh = 0.0;
      for (int i = 0; i < dy.n; ++i) {
        const T* g = dy.channel(i, ch);
        const T* h = xh.channel(i, ch);
        for (std::size_t k = 0; k < dy.plane(); ++k) {
          sum_dy += g[k];
          sum_dy_xh += static_cast<double>(g[k]) * h[k];
        }
      }
      grad_beta[ch] += static_cast<T>(sum_dy);
      grad_gamma[ch] += static_cast<T>(sum_dy_xh);
      const double k_scale = gamma[ch] * static_cast<double>(cache.inv_std[ch]) / count;
      for (int i = 0; i < dy.n; ++i) {
        const T* g = dy.channel(i, ch);
        const T* h = xh.channel(i, ch);
        T* d = dx.channel(i, ch);
        for (std::size_t k = 0; k < dy.plane(); ++k) {
          d[k] = static_cast<T>(k_scale * (count * g[k] - sum_dy - h[k] * sum_dy_xh));
        }
      }
    }
    return dx;
  }

  [[nodiscard]] T momentum() const { return momentum_; }
  [[nodiscard]] T eps() const { return eps_; }

 private:
  T momentum_ = T(0.1);
  T eps_ = T(1e-5);
};

template <typename T>
void leaky_relu_(Tensor<T>& x, T slope) {
  for (auto& v : x.data) v = v > T(0) ? v : v * slope;
}

/// dy *= f'(x), using the activation output (same sign as its input).
template <typename T>
void leaky_relu_backward_(Tensor<T>& dy, const Tensor<T>& y, T slope) {
  for (std::size_t k = 0; k < dy.size(); ++k) dy.data[k] *= y.data[k] > T(0) ? T(1) : slope;
}

template <typename T>
void sigmoid_(Tensor<T>& x) {
  for (auto& v : x.data) v = T(1) / (T(1) + std::exp(-v));
}

template <typename T>
void sigmoid_backward_(Tensor<T>& dy, const Tensor<T>& y) {
  for (std::size_t k = 0; k < dy.size(); ++k) dy.data[k] *= y.data[k] * (T(1) - y.data[k]);
}

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  Tensor<T> y(x.n, x.c, 2 * x.h, 2 * x.w);
  for (int i = 0; i < x.n; ++i) {
    for (int ch = 0; ch < x.c; ++ch) {
      const T* p = x.channel(i, ch);
      T* q = y.channel(i, ch);
      for (int yy = 0; yy < y.h; ++yy) {
        const T* src = p + static_cast<std::size_t>(yy / 2) * x.w;
        T* dst = q + static_cast<std::size_t>(yy) * y.w;
        for (int xx = 0; xx < y.w; ++xx) dst[xx] = src[xx / 2];
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.n, dy.c, dy.h / 2, dy.w / 2);
  for (int i = 0; i < dy.n; ++i) {
    for (int ch = 0; ch < dy.c; ++ch) {
      const T* p = dy.channel(i, ch);
      T* q = dx.channel(i, ch);
      for (int yy = 0; yy < dy.h; ++yy) {
        for (int xx = 0; xx < dy.w; ++xx) {
          q[static_cast<std::size_t>(yy / 2) * dx.w + xx / 2] += p[static_cast<std::size_t>(yy) * dy.w + xx];
        }
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.n == b.n && a.h == b.h && a.w == b.w, "concat_channels: shape mismatch");
  Tensor<T> y(a.n, a.c + b.c, a.h, a.w);
  for (int i = 0; i < a.n; ++i) {
    std::copy_n(a.sample(i), a.sample_size(), y.sample(i));
    std::copy_n(b.sample(i), b.sample_size(), y.sample(i) + a.sample_size());
  }
  return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& y, int first_channels) {
  Tensor<T> a(y.n, first_channels, y.h, y.w);
  Tensor<T> b(y.n, y.c - first_channels, y.h, y.w);
  for (int i = 0; i < y.n; ++i) {
    std::copy_n(y.sample(i), a.sample_size(), a.sample(i));
    std::copy_n(y.sample(i) + a.sample_size(), b.sample_size(), b.sample(i));
  }
  return {std::move(a), std::move(b)};
}

}  // namespace hires::nn
