#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

namespace hires {

/// Float raster with interleaved channels, row-major, samples in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f);

  [[nodiscard]] std::size_t pixel_count() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  [[nodiscard]] bool empty() const { return data.empty(); }

  float& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  [[nodiscard]] float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool operator==(const Image&) const = default;
};

/// Binary validity map: 1 = known pixel, 0 = hole.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 1);

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] std::uint8_t at(int y, int x) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }

  [[nodiscard]] std::size_t valid_count() const;
  [[nodiscard]] std::size_t hole_count() const { return data.size() - valid_count(); }
  [[nodiscard]] double hole_fraction() const;
  [[nodiscard]] bool all_valid() const { return hole_count() == 0; }

  bool operator==(const Mask&) const = default;
};

// Raster I/O. PNG and binary PPM/PGM are supported; the reader sniffs the
// magic bytes, the writer picks the codec from the file extension.
Image load_image(const std::filesystem::path& path);
void save_image(const Image& img, const std::filesystem::path& path);

/// Encodes to an in-memory PNG.
std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_image(const std::uint8_t* bytes, std::size_t size);
/// Height and width read from the header only.
std::pair<int, int> probe_dimensions(const std::uint8_t* bytes, std::size_t size);

/// Loads a mask raster. Colour inputs are reduced to luma, then thresholded at 0.5.
Mask load_mask(const std::filesystem::path& path);
/// Writes a single-channel raster, 0 = hole and 255 = known.
void save_mask(const Mask& mask, const std::filesystem::path& path);
Mask decode_mask(const std::uint8_t* bytes, std::size_t size);
std::vector<std::uint8_t> encode_mask_png(const Mask& mask);

Image to_rgb(const Image& img);
Image to_gray(const Image& img);
Mask threshold_mask(const Image& img, float level = 0.5f);
Image mask_to_image(const Mask& mask);

/// Quantizes a sample the way save_image does.
std::uint8_t quantize(float s);

// Pixel-centre nearest neighbour: out(i,j) = in(floor((i+0.5)H/out_h), floor((j+0.5)W/out_w)).
Image resize_nearest(const Image& img, int out_h, int out_w);
Mask resize_nearest(const Mask& mask, int out_h, int out_w);

/// Bilinear resampling with half-pixel centres and clamped borders.
Image resize_bilinear(const Image& img, int out_h, int out_w);

/// mask*base + (1-mask)*patch, copying base bit-exactly where the mask is set.
Image composite(const Image& base, const Image& patch, const Mask& mask);

Image crop(const Image& img, int top, int left, int h, int w);
Mask crop(const Mask& mask, int top, int left, int h, int w);

}  // namespace hires
