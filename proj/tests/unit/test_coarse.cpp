#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fixtures.hpp"
#include "hires/coarse.hpp"
#include "hires/errors.hpp"

using namespace hires;

namespace {

struct Grid {
  int h, w;
  std::vector<double> v;
  std::vector<bool> ok;
};

// Straightforward recursive push-pull on doubles.
Grid oracle_fill(const Grid& g) {
  if (std::all_of(g.ok.begin(), g.ok.end(), [](bool b) { return b; })) return g;
  Grid c{(g.h + 1) / 2, (g.w + 1) / 2, {}, {}};
  c.v.assign(static_cast<std::size_t>(c.h) * c.w, 0.0);
  c.ok.assign(c.v.size(), false);
  for (int y = 0; y < c.h; ++y) {
    for (int x = 0; x < c.w; ++x) {
      double s = 0;
      int n = 0;
      for (int fy = 2 * y; fy < std::min(g.h, 2 * y + 2); ++fy) {
        for (int fx = 2 * x; fx < std::min(g.w, 2 * x + 2); ++fx) {
          if (g.ok[fy * g.w + fx]) {
            s += g.v[fy * g.w + fx];
            ++n;
          }
        }
      }
      if (n) {
        c.v[y * c.w + x] = s / n;
        c.ok[y * c.w + x] = true;
      }
    }
  }
  const Grid cf = oracle_fill(c);
  Grid out = g;
  for (int y = 0; y < g.h; ++y) {
    for (int x = 0; x < g.w; ++x) {
      if (g.ok[y * g.w + x]) continue;
      const double sy = std::clamp(y / 2.0 - 0.25, 0.0, cf.h - 1.0);
      const double sx = std::clamp(x / 2.0 - 0.25, 0.0, cf.w - 1.0);
      const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
      const int y1 = std::min(y0 + 1, cf.h - 1), x1 = std::min(x0 + 1, cf.w - 1);
      const double ty = sy - y0, tx = sx - x0;
      auto at = [&](int yy, int xx) { return cf.v[yy * cf.w + xx]; };
      out.v[y * g.w + x] = (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x1)) +
                           ty * ((1 - tx) * at(y1, x0) + tx * at(y1, x1));
      out.ok[y * g.w + x] = true;
    }
  }
  return out;
}

Image split_image(int n) {
  Image img(n, n, 3);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = x < n / 2 ? 0.0f : 1.0f;
    }
  }
  return img;
}

}  // namespace

TEST(PyramidFill, AllValidUnchanged) {
  const Image img = hires::testing::noise_image(9, 13, 3, 1);
  EXPECT_EQ(pyramid_fill(img, Mask(9, 13, 1)), img);
}

TEST(PyramidFill, TwoByTwoMaskedMean) {
  Image img(2, 2, 1);
  img.data = {0.2f, 0.4f, 0.6f, 0.9f};
  Mask m(2, 2, 1);
  m.at(1, 1) = 0;
  EXPECT_NEAR(pyramid_fill(img, m).at(1, 1, 0), 0.4f, 1e-6);
}

TEST(PyramidFill, AllHoleGivesMidGray) {
  for (float v : pyramid_fill(Image(5, 5, 3, 0.9f), Mask(5, 5, 0)).data) EXPECT_EQ(v, 0.5f);
}

TEST(PyramidFill, MatchesOracleAndStaysInRange) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const int h = 17 + static_cast<int>(seed) * 3;
    const int w = 29 - static_cast<int>(seed);
    const Image img = hires::testing::noise_image(h, w, 1, seed);
    const Mask m = hires::testing::random_mask(h, w, 0.5, seed + 100);
    const Image got = pyramid_fill(img, m);
    Grid g{h, w, {}, {}};
    double lo = 1, hi = 0;
    for (int i = 0; i < h * w; ++i) {
      g.v.push_back(img.data[i]);
      g.ok.push_back(m.data[i] != 0);
      if (m.data[i]) {
        lo = std::min(lo, static_cast<double>(img.data[i]));
        hi = std::max(hi, static_cast<double>(img.data[i]));
      }
    }
    const Grid want = oracle_fill(g);
    for (int i = 0; i < h * w; ++i) {
      if (m.data[i]) {
        EXPECT_EQ(got.data[i], img.data[i]);
      } else {
        EXPECT_NEAR(got.data[i], want.v[i], 1e-6);
        EXPECT_GE(got.data[i], lo - 1e-6);
        EXPECT_LE(got.data[i], hi + 1e-6);
      }
    }
  }
}

TEST(CoarseFill, AllValidReturnsInput) {
  const Image img = hires::testing::synthetic_image(70, 90, 1);
  EXPECT_EQ(coarse_fill(img, Mask(70, 90, 1), CoarseConfig{}).filled_full, img);
}

TEST(CoarseFill, UniformGrayStaysUniform) {
  const Image img(600, 520, 3, 0.4f);
  const CoarseResult r = coarse_fill(img, hires::testing::random_mask(600, 520, 0.3, 2), CoarseConfig{});
  for (float v : r.filled_full.data) EXPECT_NEAR(v, 0.4f, 1e-6);
}

TEST(CoarseFill, SplitImageHoleWithinBorderRange) {
  const Image img = split_image(64);
  const Mask m = hires::testing::rect_mask(64, 64, 24, 24, 16, 16);
  CoarseConfig cfg;
  cfg.working_size = 64;
  const Image out = coarse_fill(img, m, cfg).filled_full;
  const Image direct = pyramid_fill(img, m);
  for (int y = 24; y < 40; ++y) {
    for (int x = 24; x < 40; ++x) {
      EXPECT_GE(out.at(y, x, 0), 0.0f);
      EXPECT_LE(out.at(y, x, 0), 1.0f);
      EXPECT_EQ(out.at(y, x, 0), direct.at(y, x, 0));
    }
  }
  EXPECT_LT(out.at(32, 25, 0), out.at(32, 38, 0));
}

TEST(CoarseFill, KnownRegionExactAndShapePreserved) {
  for (auto [h, w] : {std::pair{512, 512}, {700, 530}, {100, 80}}) {
    const Image img = hires::testing::synthetic_image(h, w, h + w);
    const Mask m = hires::testing::random_mask(h, w, 0.25, h);
    for (auto up : {UpscaleMethod::kNearest, UpscaleMethod::kBilinear}) {
      CoarseConfig cfg;
      cfg.upscale = up;
      const CoarseResult r = coarse_fill(img, m, cfg);
      ASSERT_EQ(r.filled_full.height, h);
      ASSERT_EQ(r.filled_full.width, w);
      for (std::size_t p = 0; p < m.data.size(); ++p) {
        if (!m.data[p]) continue;
        for (int c = 0; c < 3; ++c) ASSERT_EQ(r.filled_full.data[p * 3 + c], img.data[p * 3 + c]);
      }
    }
  }
}

TEST(CoarseFill, WorkingDims) {
  EXPECT_EQ(working_dims(1024, 768, 512), std::make_pair(512, 512));
  EXPECT_EQ(working_dims(300, 768, 512), std::make_pair(300, 768));
}

TEST(ExternalBackend, RoundTripAndErrors) {
  hires::testing::TempDir dir("coarse");
  const Image img = hires::testing::synthetic_image(600, 600, 5);
  const Mask m = hires::testing::random_mask(600, 600, 0.2, 5);
  const Image low = pyramid_fill(resize_nearest(img, 512, 512), resize_nearest(m, 512, 512));
  save_image(low, dir / "low.png");
  const Image back = load_external_coarse(dir / "low.png", 512, 512);
  for (std::size_t i = 0; i < low.data.size(); ++i) EXPECT_LE(std::abs(back.data[i] - low.data[i]), 1.0 / 255);
  EXPECT_THROW(load_external_coarse(dir / "low.png", 256, 256), BackendError);
  EXPECT_THROW(load_external_coarse(dir / "missing.png", 512, 512), BackendError);

  CoarseConfig cfg;
  cfg.backend = CoarseBackend::kExternalFile;
  cfg.external_path = dir / "low.png";
  const CoarseResult r = coarse_fill(img, m, cfg);
  for (std::size_t p = 0; p < m.data.size(); ++p) {
    if (m.data[p]) {
      for (int c = 0; c < 3; ++c) ASSERT_EQ(r.filled_full.data[p * 3 + c], img.data[p * 3 + c]);
    }
  }
  save_image(Image(100, 100, 3), dir / "bad.png");
  cfg.external_path = dir / "bad.png";
  EXPECT_THROW(coarse_fill(img, m, cfg), BackendError);
}

TEST(CoarseConfig, Validation) {
  CoarseConfig c;
  c.working_size = 63;
  EXPECT_THROW(c.validate(), ContractError);
  c.working_size = 32;
  EXPECT_THROW(c.validate(), ContractError);
  EXPECT_THROW(parse_upscale("cubic"), ContractError);
  EXPECT_EQ(parse_backend("external_file"), CoarseBackend::kExternalFile);
}
