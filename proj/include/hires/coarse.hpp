#pragma once

#include <filesystem>
#include <string>

#include "hires/image.hpp"

namespace hires {

enum class UpscaleMethod { kNearest, kBilinear };
enum class CoarseBackend { kBuiltinPyramid, kExternalFile };

struct CoarseConfig {
  int working_size = 512;
  UpscaleMethod upscale = UpscaleMethod::kBilinear;
  CoarseBackend backend = CoarseBackend::kBuiltinPyramid;
  /// Precomputed stage-one raster, used by the external_file backend.
  std::filesystem::path external_path;

  void validate() const;
};

struct CoarseResult {
  Image filled_full;  // equals the source wherever mask == 1
  Mask mask;
};

/// Push-pull hole filling. Valid pixels are returned untouched; an all-hole
/// mask yields a constant 0.5 image.
Image pyramid_fill(const Image& img, const Mask& mask);

/// Loads a precomputed coarse result and checks it is expected_h x expected_w.
Image load_external_coarse(const std::filesystem::path& path, int expected_h, int expected_w);

/// Stage one: downscale to the working resolution, fill, upscale, then put
/// the known region back from the source.
CoarseResult coarse_fill(const Image& img, const Mask& mask, const CoarseConfig& cfg);

/// Working-resolution size used for an input, {h, w}. Inputs smaller than the
/// working size on either side are processed at native size.
std::pair<int, int> working_dims(int height, int width, int working_size);

UpscaleMethod parse_upscale(const std::string& s);
CoarseBackend parse_backend(const std::string& s);
std::string to_string(UpscaleMethod m);
std::string to_string(CoarseBackend b);

}  // namespace hires
