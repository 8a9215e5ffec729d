#pragma once

#include <cstdint>

#include "hires/image.hpp"

namespace hires {

struct IntRange {
  int lo = 0;
  int hi = 0;
};

/// Procedural free-form hole generator: random-walk polylines with random
/// thickness stamped as holes on a fully valid canvas.
struct MaskGenConfig {
  IntRange stroke_count_range{1, 5};
  IntRange stroke_width_range{10, 36};
  IntRange vertex_count_range{4, 10};
  IntRange segment_length_range{20, 90};
  std::uint64_t seed = 0;

  void validate() const;
  /// Same config with pixel quantities rescaled from a 512 reference side.
  [[nodiscard]] MaskGenConfig scaled_for(int h, int w) const;
};

Mask generate_irregular_mask(int h, int w, const MaskGenConfig& cfg);

}  // namespace hires
