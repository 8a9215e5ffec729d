#include "hires/image.hpp"

#include <cctype>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "hires/errors.hpp"

namespace hires {

Image::Image(int h, int w, int c, float fill)
    : height(h), width(w), channels(c),
      data(static_cast<std::size_t>(h) * w * c, fill) {
  require(h >= 0 && w >= 0 && (c == 1 || c == 3), "Image: bad shape");
}

Mask::Mask(int h, int w, std::uint8_t fill)
    : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill ? 1 : 0) {
  require(h >= 0 && w >= 0, "Mask: bad shape");
}

std::size_t Mask::valid_count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

double Mask::hole_fraction() const {
  if (data.empty()) return 0.0;
  return static_cast<double>(hole_count()) / static_cast<double>(data.size());
}

std::uint8_t quantize(float s) {
  const float v = std::round(s * 255.0f);
  return static_cast<std::uint8_t>(std::clamp(v, 0.0f, 255.0f));
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Image from_bytes(const std::uint8_t* px, int h, int w, int c) {
  Image img(h, w, c);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(px[i]) / 255.0f;
  return img;
}

std::vector<std::uint8_t> to_bytes(const Image& img) {
  std::vector<std::uint8_t> out(img.data.size());
  std::transform(img.data.begin(), img.data.end(), out.begin(), quantize);
  return out;
}

Image decode_png(const std::uint8_t* bytes, std::size_t size) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes, size)) {
    throw FormatError(std::string("PNG decode failed: ") + png.message);
  }
  const bool colour = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = colour ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = colour ? 3 : 1;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, px.data(), 0, nullptr)) {
    png_image_free(&png);
    throw FormatError(std::string("PNG decode failed: ") + png.message);
  }
  return from_bytes(px.data(), static_cast<int>(png.height), static_cast<int>(png.width), channels);
}

// Netpbm header tokens, skipping '#' comments.
class PnmHeader {
 public:
  PnmHeader(const std::uint8_t* bytes, std::size_t size) : p_(bytes), size_(size) {}

  long next_int() {
    skip_space();
    if (pos_ >= size_ || !std::isdigit(p_[pos_])) throw FormatError("malformed PNM header");
    long v = 0;
    while (pos_ < size_ && std::isdigit(p_[pos_])) {
      v = v * 10 + (p_[pos_++] - '0');
      if (v > (1L << 30)) throw FormatError("PNM dimension too large");
    }
    return v;
  }
  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t data_offset() const { return pos_ + 1; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  void skip_space() {
    while (pos_ < size_) {
      if (p_[pos_] == '#') {
        while (pos_ < size_ && p_[pos_] != '\n') ++pos_;
      } else if (std::isspace(p_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }
  const std::uint8_t* p_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

Image decode_pnm(const std::uint8_t* bytes, std::size_t size) {
  const int channels = bytes[1] == '6' ? 3 : 1;
  PnmHeader hdr(bytes, size);
  hdr.skip(2);
  const long w = hdr.next_int();
  const long h = hdr.next_int();
  const long maxval = hdr.next_int();
  if (maxval != 255) throw FormatError("only 8-bit PNM rasters are supported");
  if (w <= 0 || h <= 0) throw FormatError("PNM has empty raster");
  const std::size_t offset = hdr.data_offset();
  const std::size_t need = static_cast<std::size_t>(w) * h * channels;
  if (offset > size || size - offset < need) throw FormatError("PNM raster truncated");
  return from_bytes(bytes + offset, static_cast<int>(h), static_cast<int>(w), channels);
}

std::vector<std::uint8_t> encode_pnm(const Image& img) {
  std::ostringstream hdr;
  hdr << (img.channels == 3 ? "P6" : "P5") << '\n'
      << img.width << ' ' << img.height << "\n255\n";
  const std::string h = hdr.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  const auto px = to_bytes(img);
  out.insert(out.end(), px.begin(), px.end());
  return out;
}

std::string lower_ext(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

std::vector<std::uint8_t> encode_for(const Image& img, const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".png") return encode_png(img);
  if (ext == ".ppm") return encode_pnm(to_rgb(img));
  if (ext == ".pgm") return encode_pnm(to_gray(img));
  if (ext == ".pnm") return encode_pnm(img);
  throw FormatError("unsupported output format: " + path.string());
}

}  // namespace

Image decode_image(const std::uint8_t* bytes, std::size_t size) {
  static constexpr std::uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (size >= 8 && std::memcmp(bytes, kPngMagic, 8) == 0) return decode_png(bytes, size);
  if (size >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) {
    return decode_pnm(bytes, size);
  }
  throw FormatError("unrecognized raster format");
}

std::pair<int, int> probe_dimensions(const std::uint8_t* bytes, std::size_t size) {
  static constexpr std::uint8_t kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (size >= 24 && std::memcmp(bytes, kPngMagic, 8) == 0 && std::memcmp(bytes + 12, "IHDR", 4) == 0) {
    auto be32 = [&](std::size_t at) {
      return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
             (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
    };
    const std::uint32_t w = be32(16);
    const std::uint32_t h = be32(20);
    if (w == 0 || h == 0 || w > 0x7fffffffu || h > 0x7fffffffu) throw FormatError("PNG has bad dimensions");
    return {static_cast<int>(h), static_cast<int>(w)};
  }
  if (size >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) {
    PnmHeader hdr(bytes, size);
    hdr.skip(2);
    const long w = hdr.next_int();
    const long h = hdr.next_int();
    if (w <= 0 || h <= 0 || w > 0x7fffffffL || h > 0x7fffffffL) throw FormatError("PNM has bad dimensions");
    return {static_cast<int>(h), static_cast<int>(w)};
  }
  throw FormatError("unrecognized raster format");
}

Image load_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_image(bytes.data(), bytes.size());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  require(img.channels == 1 || img.channels == 3, "encode_png: 1 or 3 channels");
  require(img.width > 0 && img.height > 0, "encode_png: empty image");
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const auto px = to_bytes(img);
  png_alloc_size_t len = 0;
  if (!png_image_write_to_memory(&png, nullptr, &len, 0, px.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG encode failed: ") + png.message);
  }
  std::vector<std::uint8_t> out(len);
  if (!png_image_write_to_memory(&png, out.data(), &len, 0, px.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG encode failed: ") + png.message);
  }
  out.resize(len);
  return out;
}

void save_image(const Image& img, const std::filesystem::path& path) {
  write_file(path, encode_for(img, path));
}

Image to_rgb(const Image& img) {
  if (img.channels == 3) return img;
  Image out(img.height, img.width, 3);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    out.data[3 * i] = out.data[3 * i + 1] = out.data[3 * i + 2] = img.data[i];
  }
  return out;
}

Image to_gray(const Image& img) {
  if (img.channels == 1) return img;
  Image out(img.height, img.width, 1);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    const float y = 0.299f * img.data[3 * i] + 0.587f * img.data[3 * i + 1] +
                    0.114f * img.data[3 * i + 2];
    out.data[i] = std::clamp(y, 0.0f, 1.0f);
  }
  return out;
}

Mask threshold_mask(const Image& img, float level) {
  const Image gray = to_gray(img);
  Mask m(gray.height, gray.width);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = gray.data[i] >= level ? 1 : 0;
  return m;
}

Image mask_to_image(const Mask& mask) {
  Image img(mask.height, mask.width, 1);
  for (std::size_t i = 0; i < mask.data.size(); ++i) img.data[i] = mask.data[i] ? 1.0f : 0.0f;
  return img;
}

Mask load_mask(const std::filesystem::path& path) { return threshold_mask(load_image(path)); }

Mask decode_mask(const std::uint8_t* bytes, std::size_t size) {
  return threshold_mask(decode_image(bytes, size));
}

void save_mask(const Mask& mask, const std::filesystem::path& path) {
  write_file(path, encode_for(mask_to_image(mask), path));
}

std::vector<std::uint8_t> encode_mask_png(const Mask& mask) {
  return encode_png(mask_to_image(mask));
}

namespace {

int nn_index(int i, int in, int out) {
  const long idx = static_cast<long>(std::floor((i + 0.5) * static_cast<double>(in) / out));
  return static_cast<int>(std::min<long>(idx, in - 1));
}

}  // namespace

Image resize_nearest(const Image& img, int out_h, int out_w) {
  require(out_h >= 1 && out_w >= 1, "resize_nearest: output size must be >= 1");
  require(!img.empty(), "resize_nearest: empty image");
  Image out(out_h, out_w, img.channels);
  std::vector<int> cols(out_w);
  for (int j = 0; j < out_w; ++j) cols[j] = nn_index(j, img.width, out_w);
  for (int i = 0; i < out_h; ++i) {
    const int sy = nn_index(i, img.height, out_h);
    for (int j = 0; j < out_w; ++j) {
      for (int c = 0; c < img.channels; ++c) out.at(i, j, c) = img.at(sy, cols[j], c);
    }
  }
  return out;
}

Mask resize_nearest(const Mask& mask, int out_h, int out_w) {
  require(out_h >= 1 && out_w >= 1, "resize_nearest: output size must be >= 1");
  require(!mask.data.empty(), "resize_nearest: empty mask");
  Mask out(out_h, out_w);
  for (int i = 0; i < out_h; ++i) {
    const int sy = nn_index(i, mask.height, out_h);
    for (int j = 0; j < out_w; ++j) out.at(i, j) = mask.at(sy, nn_index(j, mask.width, out_w));
  }
  return out;
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  require(out_h >= 1 && out_w >= 1, "resize_bilinear: output size must be >= 1");
  require(!img.empty(), "resize_bilinear: empty image");
  if (out_h == img.height && out_w == img.width) return img;
  Image out(out_h, out_w, img.channels);
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;
  struct Tap {
    int i0, i1;
    float t;
  };
  auto taps = [](int n, int in, double scale) {
    std::vector<Tap> v(n);
    for (int i = 0; i < n; ++i) {
      const double src = std::clamp((i + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
      const int i0 = static_cast<int>(std::floor(src));
      v[i] = {i0, std::min(i0 + 1, in - 1), static_cast<float>(src - i0)};
    }
    return v;
  };
  const auto ty = taps(out_h, img.height, sy);
  const auto tx = taps(out_w, img.width, sx);
  for (int i = 0; i < out_h; ++i) {
    for (int j = 0; j < out_w; ++j) {
      for (int c = 0; c < img.channels; ++c) {
        const float a = img.at(ty[i].i0, tx[j].i0, c);
        const float b = img.at(ty[i].i0, tx[j].i1, c);
        const float d = img.at(ty[i].i1, tx[j].i0, c);
        const float e = img.at(ty[i].i1, tx[j].i1, c);
        const float top = a + (b - a) * tx[j].t;
        const float bot = d + (e - d) * tx[j].t;
        out.at(i, j, c) = std::clamp(top + (bot - top) * ty[i].t, 0.0f, 1.0f);
      }
    }
  }
  return out;
}

Image composite(const Image& base, const Image& patch, const Mask& mask) {
  require(base.height == patch.height && base.width == patch.width &&
              base.channels == patch.channels,
          "composite: base/patch dimension mismatch");
  require(base.height == mask.height && base.width == mask.width,
          "composite: mask dimension mismatch");
  Image out = patch;
  const int c = base.channels;
  for (std::size_t p = 0; p < mask.data.size(); ++p) {
    if (mask.data[p]) std::copy_n(base.data.begin() + p * c, c, out.data.begin() + p * c);
  }
  return out;
}

Image crop(const Image& img, int top, int left, int h, int w) {
  require(top >= 0 && left >= 0 && h >= 1 && w >= 1 && top + h <= img.height &&
              left + w <= img.width,
          "crop: window out of bounds");
  Image out(h, w, img.channels);
  const std::size_t row = static_cast<std::size_t>(w) * img.channels;
  for (int y = 0; y < h; ++y) {
    const auto src = img.data.begin() +
                     (static_cast<std::size_t>(top + y) * img.width + left) * img.channels;
    std::copy_n(src, row, out.data.begin() + y * row);
  }
  return out;
}

Mask crop(const Mask& mask, int top, int left, int h, int w) {
  require(top >= 0 && left >= 0 && h >= 1 && w >= 1 && top + h <= mask.height &&
              left + w <= mask.width,
          "crop: window out of bounds");
  Mask out(h, w);
  for (int y = 0; y < h; ++y) {
    std::copy_n(mask.data.begin() + static_cast<std::size_t>(top + y) * mask.width + left, w,
                out.data.begin() + static_cast<std::size_t>(y) * w);
  }
  return out;
}

}  // namespace hires
