#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "hires/image.hpp"
#include "hires/tensor.hpp"

namespace hires::testing {

/// Smooth colour fields with a few hard-edged shapes and fine stripes.
Image synthetic_image(int h, int w, std::uint64_t seed);

/// Uniform random samples in [0, 1].
Image noise_image(int h, int w, int channels, std::uint64_t seed);

/// Mask with a random number of rectangular holes covering roughly `fraction`.
Mask random_mask(int h, int w, double fraction, std::uint64_t seed);

/// Mask with an axis-aligned rectangular hole.
Mask rect_mask(int h, int w, int top, int left, int rh, int rw);

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Tensor of independent N(0,1) or U(lo,hi) samples.
Tensor<double> random_tensor(int n, int c, int h, int w, std::uint64_t seed, double lo = 0.0, double hi = 1.0);

/// Central-difference check of `analytic` = d f / d x. Relative error per
/// element is |num - ana| / max(|num|, |ana|); elements where both are below
/// `floor` in magnitude are skipped. Returns the largest error seen.
double max_gradient_error(const std::function<double(const Tensor<double>&)>& f, const Tensor<double>& x,
                          const Tensor<double>& analytic, double step = 1e-4, double floor = 1e-6);

std::string read_file(const std::filesystem::path& p);
std::string sha256_hex(const std::filesystem::path& p);

}  // namespace hires::testing
