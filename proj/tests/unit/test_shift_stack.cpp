#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "hires/errors.hpp"
#include "hires/shift_stack.hpp"

using namespace hires;

namespace {

// out(i, j) = in(i - dy, j - dx), written as a plain loop.
std::pair<Image, Mask> shift_oracle(const Image& img, const Mask& mask, int dx, int dy) {
  Image out(img.height, img.width, img.channels, 0.0f);
  Mask m(img.height, img.width, 0);
  for (int i = 0; i < img.height; ++i) {
    for (int j = 0; j < img.width; ++j) {
      const int si = i - dy;
      const int sj = j - dx;
      if (si < 0 || sj < 0 || si >= img.height || sj >= img.width) continue;
      for (int c = 0; c < img.channels; ++c) out.at(i, j, c) = img.at(si, sj, c);
      m.at(i, j) = mask.at(si, sj);
    }
  }
  return {out, m};
}

std::size_t zeros(const Mask& m) { return m.hole_count(); }

}  // namespace

TEST(MakeShift, ZeroShiftIsIdentity) {
  const Image img = hires::testing::noise_image(6, 5, 3, 1);
  const Mask m = hires::testing::random_mask(6, 5, 0.3, 1);
  const auto [si, sm] = make_shift(img, m, 0, 0);
  EXPECT_EQ(si, img);
  EXPECT_EQ(sm, m);
}

TEST(MakeShift, PositiveDxExposesLeftColumn) {
  const auto [img, m] = make_shift(Image(4, 4, 3, 0.5f), Mask(4, 4, 1), 1, 0);
  for (int y = 0; y < 4; ++y) {
    EXPECT_EQ(m.at(y, 0), 0);
    for (int x = 1; x < 4; ++x) EXPECT_EQ(m.at(y, x), 1);
  }
  EXPECT_EQ(m.valid_count(), 12u);
}

TEST(MakeShift, ShiftThenUnshiftRestoresCentre) {
  const Image img = hires::testing::noise_image(10, 10, 3, 2);
  const Mask all(10, 10, 1);
  const auto [a, am] = make_shift(img, all, 2, 0);
  const auto [b, bm] = make_shift(a, am, -2, 0);
  for (int y = 0; y < 10; ++y) {
    for (int x = 2; x < 8; ++x) {
      EXPECT_EQ(bm.at(y, x), 1);
      for (int c = 0; c < 3; ++c) EXPECT_EQ(b.at(y, x, c), img.at(y, x, c));
    }
  }
}

TEST(MakeShift, MatchesLoopOracleOnRandomCases) {
  std::mt19937_64 rng(99);
  for (int t = 0; t < 100; ++t) {
    const int h = std::uniform_int_distribution<int>(1, 32)(rng);
    const int w = std::uniform_int_distribution<int>(1, 32)(rng);
    const int dx = std::uniform_int_distribution<int>(-(w - 1), w - 1)(rng);
    const int dy = std::uniform_int_distribution<int>(-(h - 1), h - 1)(rng);
    const Image img = hires::testing::noise_image(h, w, 3, rng());
    const Mask m = hires::testing::random_mask(h, w, 0.4, rng());
    const auto got = make_shift(img, m, dx, dy);
    const auto want = shift_oracle(img, m, dx, dy);
    ASSERT_EQ(got.first, want.first) << h << "x" << w << " dx=" << dx << " dy=" << dy;
    ASSERT_EQ(got.second, want.second);
  }
}

TEST(MakeShift, ComposesAlongAnAxis) {
  const Image img = hires::testing::noise_image(12, 20, 3, 4);
  const Mask m = hires::testing::random_mask(12, 20, 0.3, 4);
  const auto [a, am] = make_shift(img, m, 3, 0);
  const auto [b, bm] = make_shift(a, am, 4, 0);
  const auto [c, cm] = make_shift(img, m, 7, 0);
  EXPECT_EQ(bm, cm);
  for (int y = 0; y < 12; ++y) {
    for (int x = 7; x < 20; ++x) {
      for (int k = 0; k < 3; ++k) EXPECT_EQ(b.at(y, x, k), c.at(y, x, k));
    }
  }
}

TEST(ShiftAmounts, RoundPerAxis) {
  EXPECT_EQ(shift_amounts(512, 512, 0.2), std::make_pair(102, 102));
  const auto [sy, sx] = shift_amounts(100, 50, 0.2);
  EXPECT_EQ(sy, 20);
  EXPECT_EQ(sx, 10);
}

TEST(AssembleStack, TwentyChannelsAndBandAreas) {
  const Image img = hires::testing::synthetic_image(60, 90, 3);
  const ShiftStack s = assemble_stack(img, Mask(60, 90, 1), 0.2);
  EXPECT_EQ(s.channel_count(), 20);
  EXPECT_EQ(s.image(Slot::kMain), img);
  const auto [sy, sx] = shift_amounts(60, 90, 0.2);
  EXPECT_EQ(zeros(s.mask(Slot::kMain)), 0u);
  EXPECT_EQ(zeros(s.mask(Slot::kLeft)), static_cast<std::size_t>(sx * 60));
  EXPECT_EQ(zeros(s.mask(Slot::kRight)), static_cast<std::size_t>(sx * 60));
  EXPECT_EQ(zeros(s.mask(Slot::kDown)), static_cast<std::size_t>(sy * 90));
  EXPECT_EQ(zeros(s.mask(Slot::kUp)), static_cast<std::size_t>(sy * 90));
  for (int k = 0; k < kStackSlots; ++k) {
    EXPECT_EQ(s.images[k].height, 60);
    EXPECT_EQ(s.masks[k].width, 90);
  }
}

TEST(AssembleStack, SlotDirections) {
  const Image img = hires::testing::noise_image(20, 20, 3, 8);
  const Mask m(20, 20, 1);
  const ShiftStack s = assemble_stack(img, m, 0.2);
  EXPECT_EQ(s.image(Slot::kLeft), make_shift(img, m, -4, 0).first);
  EXPECT_EQ(s.image(Slot::kRight), make_shift(img, m, 4, 0).first);
  EXPECT_EQ(s.image(Slot::kDown), make_shift(img, m, 0, 4).first);
  EXPECT_EQ(s.image(Slot::kUp), make_shift(img, m, 0, -4).first);
}

TEST(AssembleStack, RejectsBadInput) {
  EXPECT_THROW(assemble_stack(Image(4, 4, 3), Mask(4, 5)), ContractError);
  EXPECT_THROW(assemble_stack(Image(4, 4, 3), Mask(4, 4), 1.5), ContractError);
}

TEST(SamplePatch, FullyValidMaskIsExhausted) {
  const ShiftStack s = assemble_stack(Image(64, 64, 3, 0.5f), Mask(64, 64, 1));
  std::mt19937_64 rng(1);
  EXPECT_THROW(sample_patch(s, 32, rng), SamplingExhausted);
}

TEST(SamplePatch, HalfHoledWindowsAlwaysAccepted) {
  Mask m(64, 64, 1);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; x += 2) m.at(y, x) = 0;
  }
  const ShiftStack s = assemble_stack(Image(64, 64, 3, 0.5f), m);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) EXPECT_DOUBLE_EQ(sample_patch(s, 16, rng, 1).hole_fraction, 0.5);
}

TEST(SamplePatch, CentredHoleRecount) {
  const Mask m = hires::testing::rect_mask(1024, 1024, 256, 256, 512, 512);
  const PatchSampler sampler(m);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const PatchSpec p = sampler.sample(512, rng);
    long holes = 0;
    for (int y = p.top; y < p.top + 512; ++y) {
      for (int x = p.left; x < p.left + 512; ++x) holes += m.at(y, x) == 0;
    }
    const double f = holes / (512.0 * 512.0);
    EXPECT_GE(f, kMinPatchHole);
    EXPECT_LE(f, kMaxPatchHole);
    EXPECT_DOUBLE_EQ(f, p.hole_fraction);
  }
}

TEST(SamplePatch, PatchLargerThanStackIsContractError) {
  const ShiftStack s = assemble_stack(Image(32, 32, 3), hires::testing::random_mask(32, 32, 0.5, 1));
  std::mt19937_64 rng(1);
  EXPECT_THROW(sample_patch(s, 64, rng), ContractError);
}

TEST(ExtractPatch, FullWindowIsIdentityAndCropsCompose) {
  const ShiftStack s = assemble_stack(hires::testing::noise_image(40, 40, 3, 5),
                                      hires::testing::random_mask(40, 40, 0.3, 5));
  EXPECT_EQ(extract_patch(s, {0, 0, 40, 0.0}), s);
  const ShiftStack a = extract_patch(extract_patch(s, {5, 7, 30, 0.0}), {3, 2, 16, 0.0});
  const ShiftStack b = extract_patch(s, {8, 9, 16, 0.0});
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.masks, b.masks);
  EXPECT_EQ(a.channel_count(), 20);
}

TEST(ExtractPatch, BandPatternOfDisjointWindows) {
  const ShiftStack s = assemble_stack(Image(50, 50, 3, 0.3f), Mask(50, 50, 1));
  const int sx = shift_amounts(50, 50, s.shift_fraction).second;
  for (const PatchSpec spec : {PatchSpec{0, 0, 20, 0.0}, PatchSpec{25, 25, 20, 0.0}}) {
    const ShiftStack p = extract_patch(s, spec);
    for (int y = 0; y < 20; ++y) {
      for (int x = 0; x < 20; ++x) {
        const int gx = spec.left + x;
        EXPECT_EQ(p.mask(Slot::kRight).at(y, x), gx >= sx ? 1 : 0);
        EXPECT_EQ(p.mask(Slot::kLeft).at(y, x), gx < 50 - sx ? 1 : 0);
      }
    }
  }
}

TEST(StackIo, RoundTrip) {
  hires::testing::TempDir dir("stack");
  const ShiftStack s = assemble_stack(hires::testing::synthetic_image(32, 48, 1),
                                      hires::testing::random_mask(32, 48, 0.2, 1));
  save_stack(s, dir.path(), 64, 96);
  const ShiftStack back = load_stack(dir.path());
  EXPECT_EQ(back.masks, s.masks);
  EXPECT_DOUBLE_EQ(back.shift_fraction, s.shift_fraction);
  for (int k = 0; k < kStackSlots; ++k) {
    for (std::size_t i = 0; i < s.images[k].data.size(); ++i) {
      EXPECT_LE(std::abs(back.images[k].data[i] - s.images[k].data[i]), 1.0 / 255);
    }
  }
}
