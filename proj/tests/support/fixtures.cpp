#include "fixtures.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <unistd.h>

#include "hires/checkpoint.hpp"

namespace hires::testing {

Image synthetic_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(h, w, 3);
  struct Wave {
    double fy, fx, phase, amp;
  };
  std::array<std::array<Wave, 3>, 3> waves{};
  std::array<double, 3> base{};
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.3 + 0.4 * u(rng);
    for (auto& wv : waves[c]) {
      wv = {(u(rng) * 3.0 + 0.5) / h, (u(rng) * 3.0 + 0.5) / w, u(rng) * 2.0 * std::numbers::pi,
            0.05 + 0.1 * u(rng)};
    }
  }
  struct Disc {
    double cy, cx, r;
    std::array<double, 3> colour;
  };
  std::vector<Disc> discs(3);
  for (auto& d : discs) {
    d = {u(rng) * h, u(rng) * w, (0.08 + 0.15 * u(rng)) * std::min(h, w), {u(rng), u(rng), u(rng)}};
  }
  const double stripe = 2.0 * std::numbers::pi / (6.0 + 6.0 * u(rng));
  const double stripe_angle = u(rng) * std::numbers::pi;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::array<double, 3> v = base;
      for (int c = 0; c < 3; ++c) {
        for (const auto& wv : waves[c]) {
          v[c] += wv.amp * std::sin(2.0 * std::numbers::pi * (wv.fy * y + wv.fx * x) + wv.phase);
        }
      }
      for (const auto& d : discs) {
        const double dy = y - d.cy;
        const double dx = x - d.cx;
        if (dy * dy + dx * dx < d.r * d.r) v = d.colour;
      }
      const double s = 0.04 * std::sin(stripe * (x * std::cos(stripe_angle) + y * std::sin(stripe_angle)));
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(std::clamp(v[c] + s, 0.0, 1.0));
    }
  }
  return img;
}

Image noise_image(int h, int w, int channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(h, w, channels);
  for (auto& v : img.data) v = u(rng);
  return img;
}

Mask random_mask(int h, int w, double fraction, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Mask m(h, w);
  std::fill(m.data.begin(), m.data.end(), std::uint8_t{1});
  const long target = std::lround(fraction * h * w);
  std::uniform_int_distribution<int> ry(0, h - 1);
  std::uniform_int_distribution<int> rx(0, w - 1);
  std::uniform_int_distribution<int> side(1, std::max(1, std::min(h, w) / 4));
  for (int guard = 0; static_cast<long>(m.hole_count()) < target && guard < 10000; ++guard) {
    const int top = ry(rng);
    const int left = rx(rng);
    const int rh = side(rng);
    const int rw = side(rng);
    for (int y = top; y < std::min(h, top + rh); ++y) {
      for (int x = left; x < std::min(w, left + rw); ++x) m.at(y, x) = 0;
    }
  }
  return m;
}

Mask rect_mask(int h, int w, int top, int left, int rh, int rw) {
  Mask m(h, w);
  std::fill(m.data.begin(), m.data.end(), std::uint8_t{1});
  for (int y = top; y < top + rh; ++y) {
    for (int x = left; x < left + rw; ++x) m.at(y, x) = 0;
  }
  return m;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("hires_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

Tensor<double> random_tensor(int n, int c, int h, int w, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(n, c, h, w);
  for (auto& v : t.data) v = u(rng);
  return t;
}

double max_gradient_error(const std::function<double(const Tensor<double>&)>& f, const Tensor<double>& x,
                          const Tensor<double>& analytic, double step, double floor) {
  double worst = 0.0;
  Tensor<double> probe = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    probe.data[k] = x.data[k] + step;
    const double up = f(probe);
    probe.data[k] = x.data[k] - step;
    const double down = f(probe);
    probe.data[k] = x.data[k];
    const double num = (up - down) / (2.0 * step);
    const double ana = analytic.data[k];
    const double scale = std::max(std::abs(num), std::abs(ana));
    if (scale <= floor) continue;
    worst = std::max(worst, std::abs(num - ana) / scale);
  }
  return worst;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::string sha256_hex(const std::filesystem::path& p) { return file_sha256(p); }

}  // namespace hires::testing
