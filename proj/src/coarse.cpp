#include "hires/coarse.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "hires/errors.hpp"

namespace hires {

void CoarseConfig::validate() const {
  require(working_size >= 64 && working_size % 2 == 0, "working_size must be even and >= 64");
  if (backend == CoarseBackend::kExternalFile && external_path.empty()) {
    throw BackendError("external_file backend requires a coarse result path");
  }
}

namespace {

struct Level {
  int h = 0, w = 0, c = 0;
  std::vector<float> v;
  std::vector<std::uint8_t> ok;

  [[nodiscard]] bool complete() const {
    return std::all_of(ok.begin(), ok.end(), [](std::uint8_t b) { return b != 0; });
  }
};

// Masked 2x2 mean; a coarse pixel is valid when any child is.
Level push(const Level& fine) {
  Level out;
  out.h = (fine.h + 1) / 2;
  out.w = (fine.w + 1) / 2;
  out.c = fine.c;
  out.v.assign(static_cast<std::size_t>(out.h) * out.w * out.c, 0.0f);
  out.ok.assign(static_cast<std::size_t>(out.h) * out.w, 0);
  std::vector<double> acc(out.c);
  for (int y = 0; y < out.h; ++y) {
    for (int x = 0; x < out.w; ++x) {
      std::fill(acc.begin(), acc.end(), 0.0);
      int n = 0;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const int fy = 2 * y + dy;
          const int fx = 2 * x + dx;
          if (fy >= fine.h || fx >= fine.w) continue;
          const std::size_t p = static_cast<std::size_t>(fy) * fine.w + fx;
          if (!fine.ok[p]) continue;
          ++n;
          for (int c = 0; c < fine.c; ++c) acc[c] += fine.v[p * fine.c + c];
        }
      }
      if (n == 0) continue;
      const std::size_t q = static_cast<std::size_t>(y) * out.w + x;
      out.ok[q] = 1;
      for (int c = 0; c < out.c; ++c) out.v[q * out.c + c] = static_cast<float>(acc[c] / n);
    }
  }
  return out;
}

// Fills invalid pixels of `fine` by bilinear interpolation of the complete
// coarser level.
void pull(Level& fine, const Level& coarse) {
  auto coord = [](int i, int n_coarse) {
    const double s = std::clamp((i + 0.5) / 2.0 - 0.5, 0.0, static_cast<double>(n_coarse - 1));
    const int i0 = static_cast<int>(std::floor(s));
    return std::tuple{i0, std::min(i0 + 1, n_coarse - 1), s - i0};
  };
  for (int y = 0; y < fine.h; ++y) {
    const auto [y0, y1, ty] = coord(y, coarse.h);
    for (int x = 0; x < fine.w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * fine.w + x;
      if (fine.ok[p]) continue;
      const auto [x0, x1, tx] = coord(x, coarse.w);
      auto at = [&](int yy, int xx, int c) {
        return static_cast<double>(coarse.v[(static_cast<std::size_t>(yy) * coarse.w + xx) * coarse.c + c]);
      };
      for (int c = 0; c < fine.c; ++c) {
        const double top = at(y0, x0, c) + (at(y0, x1, c) - at(y0, x0, c)) * tx;
        const double bot = at(y1, x0, c) + (at(y1, x1, c) - at(y1, x0, c)) * tx;
        fine.v[p * fine.c + c] = static_cast<float>(top + (bot - top) * ty);
      }
      fine.ok[p] = 1;
    }
  }
}

}  // namespace

Image pyramid_fill(const Image& img, const Mask& mask) {
  require(img.height == mask.height && img.width == mask.width,
          "pyramid_fill: image/mask dimension mismatch");
  if (mask.all_valid()) return img;
  if (mask.valid_count() == 0) return Image(img.height, img.width, img.channels, 0.5f);

  std::vector<Level> levels(1);
  levels[0] = {img.height, img.width, img.channels, img.data, mask.data};
  while (!levels.back().complete()) levels.push_back(push(levels.back()));
  for (std::size_t l = levels.size() - 1; l-- > 0;) pull(levels[l], levels[l + 1]);

  Image out(img.height, img.width, img.channels);
  out.data = std::move(levels[0].v);
  // Known pixels were never touched by pull, so only hole samples can move.
  return out;
}

Image load_external_coarse(const std::filesystem::path& path, int expected_h, int expected_w) {
  if (!std::filesystem::exists(path)) {
    throw BackendError("external coarse result not found: " + path.string());
  }
  Image img = to_rgb(load_image(path));
  if (img.height != expected_h || img.width != expected_w) {
    throw BackendError("external coarse result is " + std::to_string(img.width) + "x" +
                       std::to_string(img.height) + ", expected " + std::to_string(expected_w) +
                       "x" + std::to_string(expected_h));
  }
  return img;
}

std::pair<int, int> working_dims(int height, int width, int working_size) {
  if (height < working_size || width < working_size) return {height, width};
  return {working_size, working_size};
}

CoarseResult coarse_fill(const Image& img, const Mask& mask, const CoarseConfig& cfg) {
  require(img.height == mask.height && img.width == mask.width,
          "coarse_fill: image/mask dimension mismatch");
  cfg.validate();
  if (mask.all_valid()) return {img, mask};

  const auto [wh, ww] = working_dims(img.height, img.width, cfg.working_size);
  const bool native = wh == img.height && ww == img.width;

  Image low;
  if (cfg.backend == CoarseBackend::kExternalFile) {
    if (!std::filesystem::exists(cfg.external_path)) {
      throw BackendError("external coarse result not found: " + cfg.external_path.string());
    }
    const Image probe = to_rgb(load_image(cfg.external_path));
    if (probe.height == img.height && probe.width == img.width) {
      low = probe;
    } else {
      low = load_external_coarse(cfg.external_path, wh, ww);
    }
    if (low.channels != img.channels) low = img.channels == 1 ? to_gray(low) : to_rgb(low);
  } else {
    // Nearest downscale for both rasters so hole content never bleeds into known samples.
    const Image small = native ? img : resize_nearest(img, wh, ww);
    const Mask small_mask = native ? mask : resize_nearest(mask, wh, ww);
    low = pyramid_fill(small, small_mask);
  }

  Image up = low;
  if (low.height != img.height || low.width != img.width) {
    up = cfg.upscale == UpscaleMethod::kNearest ? resize_nearest(low, img.height, img.width)
                                                : resize_bilinear(low, img.height, img.width);
  }
  return {composite(img, up, mask), mask};
}

UpscaleMethod parse_upscale(const std::string& s) {
  if (s == "nearest") return UpscaleMethod::kNearest;
  if (s == "bilinear") return UpscaleMethod::kBilinear;
  throw ContractError("unknown upscale method: " + s);
}

CoarseBackend parse_backend(const std::string& s) {
  if (s == "builtin_pyramid" || s == "builtin") return CoarseBackend::kBuiltinPyramid;
  if (s == "external_file" || s == "external") return CoarseBackend::kExternalFile;
  throw ContractError("unknown coarse backend: " + s);
}

std::string to_string(UpscaleMethod m) {
  return m == UpscaleMethod::kNearest ? "nearest" : "bilinear";
}

std::string to_string(CoarseBackend b) {
  return b == CoarseBackend::kBuiltinPyramid ? "builtin_pyramid" : "external_file";
}

}  // namespace hires
