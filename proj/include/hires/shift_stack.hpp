#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

#include "hires/image.hpp"

namespace hires {

/// Slot order inside a stack. Part of the checkpoint contract: the first
/// refiner layer is order-sensitive.
enum class Slot : int { kMain = 0, kLeft = 1, kRight = 2, kDown = 3, kUp = 4 };

inline constexpr int kStackSlots = 5;
inline constexpr int kStackChannels = kStackSlots * 3 + kStackSlots;
inline constexpr std::string_view kChannelOrderTag = "main,left,right,down,up;rgb5+mask5";
inline constexpr double kDefaultShiftFraction = 0.20;

/// The 20-channel stage-two input: five RGB images and their validity masks.
struct ShiftStack {
  int height = 0;
  int width = 0;
  std::array<Image, kStackSlots> images;
  std::array<Mask, kStackSlots> masks;
  double shift_fraction = kDefaultShiftFraction;

  [[nodiscard]] const Image& image(Slot s) const { return images[static_cast<int>(s)]; }
  [[nodiscard]] const Mask& mask(Slot s) const { return masks[static_cast<int>(s)]; }
  [[nodiscard]] int channel_count() const;

  bool operator==(const ShiftStack&) const = default;
};

struct PatchSpec {
  int top = 0;
  int left = 0;
  int size = 512;
  double hole_fraction = 0.0;
};

inline constexpr double kMinPatchHole = 0.10;
inline constexpr double kMaxPatchHole = 0.90;
inline constexpr int kDefaultMaxTries = 64;

/// Translates content by (dx, dy): out(i,j) = in(i-dy, j-dx). Pixels without a
/// source get value 0 and mask 0.
std::pair<Image, Mask> make_shift(const Image& img, const Mask& mask, int dx, int dy);

/// Per-axis shift amounts, round(fraction * extent).
std::pair<int, int> shift_amounts(int height, int width, double shift_fraction);

ShiftStack assemble_stack(const Image& img, const Mask& mask,
                          double shift_fraction = kDefaultShiftFraction);

/// Rejection sampler over square windows whose main-mask hole fraction lies
/// in [0.10, 0.90]. Holds a summed-area table of the main mask.
class PatchSampler {
 public:
  explicit PatchSampler(const Mask& main_mask);

  PatchSpec sample(int size, std::mt19937_64& rng, int max_tries = kDefaultMaxTries) const;
  [[nodiscard]] std::int64_t holes_in(int top, int left, int h, int w) const;

 private:
  int height_;
  int width_;
  std::vector<std::int64_t> table_;  // (h+1) x (w+1) prefix sums of hole pixels
};

PatchSpec sample_patch(const ShiftStack& stack, int size, std::mt19937_64& rng,
                       int max_tries = kDefaultMaxTries);

ShiftStack extract_patch(const ShiftStack& stack, const PatchSpec& spec);

/// Directory layout: slot{0..4}_{img,mask}.png plus meta.json.
void save_stack(const ShiftStack& stack, const std::filesystem::path& dir,
                int original_height, int original_width);
ShiftStack load_stack(const std::filesystem::path& dir);

}  // namespace hires
