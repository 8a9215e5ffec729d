#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "hires/errors.hpp"
#include "hires/losses.hpp"

using namespace hires;
using hires::testing::max_gradient_error;
using hires::testing::random_tensor;

namespace {

const FeatureExtractor& fx() {
  static const FeatureExtractor f;
  return f;
}

double mean_abs(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.data[i] - b.data[i]);
  return s / static_cast<double>(a.size());
}

Mask random_hole(int h, int w, std::uint64_t seed) { return hires::testing::random_mask(h, w, 0.4, seed); }

}  // namespace

TEST(L1Loss, Examples) {
  const Tensor<double> a = random_tensor(1, 3, 4, 4, 1);
  EXPECT_EQ(l1_loss(a, a), 0.0);
  Tensor<double> lo(1, 3, 4, 4, 0.25), hi(1, 3, 4, 4, 0.75);
  EXPECT_DOUBLE_EQ(l1_loss(hi, lo), 0.5);
  const Tensor<double> b = random_tensor(1, 3, 4, 4, 2);
  double s = 0;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) s += std::abs(a.at(0, c, y, x) - b.at(0, c, y, x));
    }
  }
  EXPECT_NEAR(l1_loss(a, b), s / 48.0, 1e-7);
  EXPECT_THROW(l1_loss(a, Tensor<double>(1, 3, 4, 5)), ContractError);
}

TEST(TvLoss, Examples) {
  EXPECT_EQ(tv_loss(Tensor<double>(1, 3, 6, 6, 0.3), random_hole(6, 6, 1)), 0.0);
  EXPECT_EQ(tv_loss(random_tensor(1, 3, 6, 6, 1), Mask(6, 6, 1)), 0.0);
  Tensor<double> row(1, 1, 1, 4);
  row.data = {0, 1, 0, 1};
  Mask m(1, 4, 1);
  m.at(0, 1) = 0;
  m.at(0, 2) = 0;
  // Pairs (0,1), (1,2), (2,3) all touch the hole; each differs by 1.
  EXPECT_DOUBLE_EQ(tv_loss(row, m), 1.0);
  Mask edge(1, 4, 1);
  edge.at(0, 3) = 0;
  EXPECT_DOUBLE_EQ(tv_loss(row, edge), 1.0);
  row.data = {0, 0, 0.5, 1};
  EXPECT_DOUBLE_EQ(tv_loss(row, edge), 0.5);
}

TEST(Features, DeterministicAndConstantPreserving) {
  const Image img = hires::testing::synthetic_image(32, 32, 1);
  const auto a = extract_features(fx(), img);
  const auto b = extract_features(fx(), img);
  ASSERT_EQ(a.size(), fx().layer_count());
  for (std::size_t j = 0; j < a.size(); ++j) EXPECT_EQ(a[j], b[j]);
  const auto c = extract_features(fx(), Image(24, 40, 3, 0.6f));
  for (const auto& f : c) {
    for (int ch = 0; ch < f.c; ++ch) {
      const double* p = f.channel(0, ch);
      for (std::size_t k = 1; k < f.plane(); ++k) ASSERT_NEAR(p[k], p[0], 1e-12);
    }
  }
}

TEST(Features, SaveLoadRoundTrip) {
  hires::testing::TempDir dir("fx");
  fx().save(dir / "fx.bin");
  const FeatureExtractor back = FeatureExtractor::load(dir / "fx.bin");
  EXPECT_EQ(back.flat_weights(), fx().flat_weights());
  const Image img = hires::testing::synthetic_image(16, 16, 2);
  const auto a = extract_features(fx(), img);
  const auto b = extract_features(back, img);
  for (std::size_t j = 0; j < a.size(); ++j) {
    for (std::size_t k = 0; k < a[j].size(); ++k) EXPECT_NEAR(a[j].data[k], b[j].data[k], 1e-6);
  }
}

TEST(Gram, Examples) {
  Tensor<double> ones(1, 1, 2, 2, 1.0);
  const Eigen::MatrixXd g1 = gram(ones);
  ASSERT_EQ(g1.rows(), 1);
  EXPECT_DOUBLE_EQ(g1(0, 0), 1.0);

  Tensor<double> ortho(1, 2, 1, 4);
  ortho.data = {1, 0, 1, 0, 0, 1, 0, 1};
  const Eigen::MatrixXd g2 = gram(ortho);
  EXPECT_EQ(g2(0, 1), 0.0);
  EXPECT_EQ(g2(1, 0), 0.0);

  const Tensor<double> r = random_tensor(1, 6, 5, 7, 3, -1.0, 1.0);
  const Eigen::MatrixXd g = gram(r);
  EXPECT_LT((g - g.transpose()).cwiseAbs().maxCoeff(), 1e-9);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-9);
  double g01 = 0;
  for (std::size_t n = 0; n < r.plane(); ++n) g01 += r.channel(0, 0)[n] * r.channel(0, 1)[n];
  EXPECT_NEAR(g(0, 1), g01 / (6.0 * 35.0), 1e-12);
}

TEST(Gram, IgnoresSpatialPermutation) {
  const Image img = hires::testing::synthetic_image(32, 32, 4);
  const Tensor<double> f = extract_features(fx(), img)[1];
  std::vector<std::size_t> perm(f.plane());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(5));
  Tensor<double> shuffled = f;
  for (int c = 0; c < f.c; ++c) {
    for (std::size_t k = 0; k < f.plane(); ++k) shuffled.channel(0, c)[k] = f.channel(0, c)[perm[k]];
  }
  EXPECT_LT((gram(f) - gram(shuffled)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT(mean_abs(f, shuffled), 1e-3);
}

TEST(PerceptualLoss, MatchesFeaturePath) {
  const Image a = hires::testing::synthetic_image(32, 32, 6);
  const Image b = hires::testing::synthetic_image(32, 32, 7);
  EXPECT_EQ(perceptual_loss(fx(), a, a), 0.0);
  const auto fa = extract_features(fx(), a);
  const auto fb = extract_features(fx(), b);
  double want = 0, raw = 0;
  for (std::size_t j = 0; j < fa.size(); ++j) {
    want += mean_abs(fa[j], fb[j]);
    raw += mean_abs(fa[j], fb[j]) * static_cast<double>(fa[j].size());
  }
  const double got = perceptual_loss(fx(), a, b);
  EXPECT_GT(got, 0.0);
  EXPECT_NEAR(got, want, 1e-12);
  EXPECT_NEAR(perceptual_loss(fx(), to_planar(a), to_planar(b), nullptr, LayerNormalization::kNone), raw,
              1e-9 * raw);
}

TEST(StyleLoss, MatchesGramPath) {
  const Image a = hires::testing::synthetic_image(32, 32, 8);
  const Image b = hires::testing::synthetic_image(32, 32, 9);
  EXPECT_EQ(style_loss(fx(), a, a), 0.0);
  const auto fa = extract_features(fx(), a);
  const auto fb = extract_features(fx(), b);
  double want = 0;
  for (std::size_t j = 0; j < fa.size(); ++j) {
    const Eigen::MatrixXd d = gram(fa[j]) - gram(fb[j]);
    want += d.cwiseAbs().sum() / static_cast<double>(d.size());
  }
  EXPECT_NEAR(style_loss(fx(), a, b), want, 1e-12);
}

TEST(TotalLoss, CombinationRules) {
  LossReport ones{1, 1, 1, 1, 0};
  EXPECT_NEAR(weighted_total(ones, LossWeights{}), 246.2, 1e-9);
  const Image a = hires::testing::synthetic_image(32, 32, 10);
  const Image b = hires::testing::synthetic_image(32, 32, 11);
  const Mask m = random_hole(32, 32, 12);
  const LossReport same = total_loss(fx(), a, a, m);
  EXPECT_EQ(same.l1, 0.0);
  EXPECT_EQ(same.perceptual, 0.0);
  EXPECT_EQ(same.style, 0.0);
  EXPECT_NEAR(same.total, 0.1 * same.tv, 1e-12);
  const LossReport r = total_loss(fx(), a, b, m);
  EXPECT_NEAR(r.total, weighted_total(r, LossWeights{}), 1e-6 * r.total);
  EXPECT_NEAR(r.l1, l1_loss(a, b), 1e-12);
  EXPECT_NEAR(r.tv, tv_loss(a, m), 1e-12);
  LossWeights only_l1{0, 1, 0, 0};
  EXPECT_NEAR(total_loss(fx(), a, b, m, only_l1).total, l1_loss(a, b), 1e-12);
  LossWeights w1{0.3, 2.0, 0.5, 10.0}, w2{1.0, 0.5, 2.0, 3.0}, sum{1.3, 2.5, 2.5, 13.0};
  EXPECT_NEAR(total_loss(fx(), a, b, m, w1).total + total_loss(fx(), a, b, m, w2).total,
              total_loss(fx(), a, b, m, sum).total, 1e-9);
  EXPECT_THROW((LossWeights{-1, 1, 1, 1}).validate(), ContractError);
}

class LossGradient : public ::testing::TestWithParam<int> {};

TEST_P(LossGradient, MatchesCentralDifferences) {
  const int which = GetParam();
  const Tensor<double> pred = random_tensor(1, 3, 8, 8, 20 + which);
  const Tensor<double> ref = random_tensor(1, 3, 8, 8, 40 + which);
  const Mask mask = random_hole(8, 8, 60 + which);
  auto f = [&](const Tensor<double>& p, Tensor<double>* g) {
    switch (which) {
      case 0: return l1_loss(p, ref, g);
      case 1: return tv_loss(p, mask, g);
      case 2: return perceptual_loss(fx(), p, ref, g);
      case 3: return style_loss(fx(), p, ref, g);
      default: return total_loss(fx(), p, ref, mask, LossWeights{}, g).total;
    }
  };
  Tensor<double> grad;
  f(pred, &grad);
  ASSERT_TRUE(grad.same_shape(pred));
  const double err = max_gradient_error([&](const Tensor<double>& p) { return f(p, nullptr); }, pred, grad);
  EXPECT_LT(err, 1e-3);
}

INSTANTIATE_TEST_SUITE_P(Losses, LossGradient, ::testing::Range(0, 5), ([](const auto& info) {
  static const char* names[] = {"l1", "tv", "perceptual", "style", "total"};
  return std::string(names[info.param]);
}));
