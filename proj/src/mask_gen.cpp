#include "hires/mask_gen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "hires/errors.hpp"

namespace hires {

void MaskGenConfig::validate() const {
  auto ok = [](IntRange r) { return r.lo <= r.hi; };
  require(ok(stroke_count_range) && stroke_count_range.lo >= 0, "mask gen: bad stroke count range");
  require(ok(stroke_width_range) && stroke_width_range.lo >= 1, "mask gen: stroke widths must be >= 1");
  require(ok(vertex_count_range) && vertex_count_range.lo >= 2, "mask gen: need >= 2 vertices");
  require(ok(segment_length_range) && segment_length_range.lo >= 1, "mask gen: bad segment length range");
}

MaskGenConfig MaskGenConfig::scaled_for(int h, int w) const {
  const double k = std::min(h, w) / 512.0;
  auto scale = [k](IntRange r) {
    return IntRange{std::max(1, static_cast<int>(std::lround(r.lo * k))),
                    std::max(1, static_cast<int>(std::lround(r.hi * k)))};
  };
  MaskGenConfig out = *this;
  out.stroke_width_range = scale(stroke_width_range);
  out.segment_length_range = scale(segment_length_range);
  return out;
}

namespace {

struct Point {
  double x, y;
};

// Clears every pixel whose centre lies within radius of segment ab.
void stamp_segment(Mask& m, Point a, Point b, double radius) {
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - radius)));
  const int x1 = std::min(m.width - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + radius)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - radius)));
  const int y1 = std::min(m.height - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + radius)));
  const double vx = b.x - a.x;
  const double vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  const double r2 = radius * radius;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double px = x + 0.5 - a.x;
      const double py = y + 0.5 - a.y;
      const double t = len2 > 0 ? std::clamp((px * vx + py * vy) / len2, 0.0, 1.0) : 0.0;
      const double dx = px - t * vx;
      const double dy = py - t * vy;
      if (dx * dx + dy * dy <= r2) m.at(y, x) = 0;
    }
  }
}

}  // namespace

Mask generate_irregular_mask(int h, int w, const MaskGenConfig& cfg) {
  require(h >= 64 && w >= 64, "generate_irregular_mask: size must be >= 64");
  cfg.validate();
  Mask m(h, w, 1);
  std::mt19937_64 rng(cfg.seed);
  auto pick = [&rng](IntRange r) { return std::uniform_int_distribution<int>(r.lo, r.hi)(rng); };
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int strokes = pick(cfg.stroke_count_range);
  for (int s = 0; s < strokes; ++s) {
    const int vertices = pick(cfg.vertex_count_range);
    const double radius = pick(cfg.stroke_width_range) / 2.0;
    Point p{unit(rng) * w, unit(rng) * h};
    double heading = unit(rng) * 2.0 * std::numbers::pi;
    for (int v = 1; v < vertices; ++v) {
      // Heading drifts by at most +-90 degrees per segment.
      heading += (unit(rng) - 0.5) * std::numbers::pi;
      const double len = pick(cfg.segment_length_range);
      Point q{std::clamp(p.x + len * std::cos(heading), 0.0, static_cast<double>(w)),
              std::clamp(p.y + len * std::sin(heading), 0.0, static_cast<double>(h))};
      stamp_segment(m, p, q, radius);
      p = q;
    }
  }
  return m;
}

}  // namespace hires
