#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "hires/errors.hpp"

namespace hires {

/// Dense NCHW tensor.
template <typename T>
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  [[nodiscard]] std::size_t size() const { return data.size(); }
  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  [[nodiscard]] std::size_t sample_size() const { return static_cast<std::size_t>(c) * plane(); }
  [[nodiscard]] bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  T* sample(int i) { return data.data() + i * sample_size(); }
  [[nodiscard]] const T* sample(int i) const { return data.data() + i * sample_size(); }
  T* channel(int i, int ch) { return sample(i) + ch * plane(); }
  [[nodiscard]] const T* channel(int i, int ch) const { return sample(i) + ch * plane(); }

  T& at(int i, int ch, int y, int x) { return channel(i, ch)[static_cast<std::size_t>(y) * w + x]; }
  [[nodiscard]] T at(int i, int ch, int y, int x) const {
    return channel(i, ch)[static_cast<std::size_t>(y) * w + x];
  }

  void zero() { std::fill(data.begin(), data.end(), T(0)); }

  template <typename U>
  [[nodiscard]] Tensor<U> cast() const {
    Tensor<U> out;
    out.n = n;
    out.c = c;
    out.h = h;
    out.w = w;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  /// Copy of samples [first, first + count).
  [[nodiscard]] Tensor slice(int first, int count) const {
    require(first >= 0 && count >= 0 && first + count <= n, "Tensor::slice out of range");
    Tensor out(count, c, h, w);
    std::copy_n(data.begin() + first * sample_size(), count * sample_size(), out.data.begin());
    return out;
  }

  bool operator==(const Tensor&) const = default;
};

}  // namespace hires
