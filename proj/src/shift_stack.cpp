#include "hires/shift_stack.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "hires/errors.hpp"

namespace hires {

int ShiftStack::channel_count() const {
  int n = 0;
  for (const auto& img : images) n += img.channels;
  for (const auto& m : masks) n += m.data.empty() ? 0 : 1;
  return n;
}

std::pair<Image, Mask> make_shift(const Image& img, const Mask& mask, int dx, int dy) {
  require(img.height == mask.height && img.width == mask.width,
          "make_shift: image/mask dimension mismatch");
  require(std::abs(dx) < img.width && std::abs(dy) < img.height,
          "make_shift: shift magnitude must be smaller than the image");
  Image out(img.height, img.width, img.channels, 0.0f);
  Mask out_mask(img.height, img.width, 0);
  const int c = img.channels;
  // Destination columns that have a source column.
  const int x0 = std::max(0, dx);
  const int x1 = std::min(img.width, img.width + dx);
  for (int i = std::max(0, dy); i < std::min(img.height, img.height + dy); ++i) {
    const int si = i - dy;
    const auto src = img.data.begin() + (static_cast<std::size_t>(si) * img.width + (x0 - dx)) * c;
    std::copy_n(src, static_cast<std::size_t>(x1 - x0) * c,
                out.data.begin() + (static_cast<std::size_t>(i) * img.width + x0) * c);
    std::copy_n(mask.data.begin() + static_cast<std::size_t>(si) * img.width + (x0 - dx), x1 - x0,
                out_mask.data.begin() + static_cast<std::size_t>(i) * img.width + x0);
  }
  return {std::move(out), std::move(out_mask)};
}

std::pair<int, int> shift_amounts(int height, int width, double shift_fraction) {
  require(shift_fraction > 0.0 && shift_fraction < 1.0, "shift_fraction must lie in (0, 1)");
  return {static_cast<int>(std::lround(shift_fraction * height)),
          static_cast<int>(std::lround(shift_fraction * width))};
}

ShiftStack assemble_stack(const Image& img, const Mask& mask, double shift_fraction) {
  require(img.height == mask.height && img.width == mask.width,
          "assemble_stack: image/mask dimension mismatch");
  require(img.channels == 3, "assemble_stack: RGB image required");
  const auto [sy, sx] = shift_amounts(img.height, img.width, shift_fraction);
  ShiftStack s;
  s.height = img.height;
  s.width = img.width;
  s.shift_fraction = shift_fraction;
  s.images[0] = img;
  s.masks[0] = mask;
  const std::array<std::pair<int, int>, 4> shifts{{{-sx, 0}, {sx, 0}, {0, sy}, {0, -sy}}};
  for (int k = 0; k < 4; ++k) {
    auto [im, m] = make_shift(img, mask, shifts[k].first, shifts[k].second);
    s.images[k + 1] = std::move(im);
    s.masks[k + 1] = std::move(m);
  }
  return s;
}

PatchSampler::PatchSampler(const Mask& main_mask)
    : height_(main_mask.height),
      width_(main_mask.width),
      table_(static_cast<std::size_t>(main_mask.height + 1) * (main_mask.width + 1), 0) {
  const int stride = width_ + 1;
  for (int y = 0; y < height_; ++y) {
    std::int64_t row = 0;
    for (int x = 0; x < width_; ++x) {
      row += main_mask.at(y, x) ? 0 : 1;
      table_[static_cast<std::size_t>(y + 1) * stride + x + 1] =
          table_[static_cast<std::size_t>(y) * stride + x + 1] + row;
    }
  }
}

std::int64_t PatchSampler::holes_in(int top, int left, int h, int w) const {
  const int stride = width_ + 1;
  auto t = [&](int y, int x) { return table_[static_cast<std::size_t>(y) * stride + x]; };
  return t(top + h, left + w) - t(top, left + w) - t(top + h, left) + t(top, left);
}

PatchSpec PatchSampler::sample(int size, std::mt19937_64& rng, int max_tries) const {
  require(size >= 1 && size <= height_ && size <= width_,
          "sample_patch: stack smaller than the patch size");
  std::uniform_int_distribution<int> top_dist(0, height_ - size);
  std::uniform_int_distribution<int> left_dist(0, width_ - size);
  const double area = static_cast<double>(size) * size;
  for (int attempt = 0; attempt < max_tries; ++attempt) {
    const int top = top_dist(rng);
    const int left = left_dist(rng);
    const double frac = static_cast<double>(holes_in(top, left, size, size)) / area;
    if (frac >= kMinPatchHole && frac <= kMaxPatchHole) return {top, left, size, frac};
  }
  throw SamplingExhausted("no window with hole fraction in [0.10, 0.90] after " +
                          std::to_string(max_tries) + " tries");
}

PatchSpec sample_patch(const ShiftStack& stack, int size, std::mt19937_64& rng, int max_tries) {
  return PatchSampler(stack.mask(Slot::kMain)).sample(size, rng, max_tries);
}

ShiftStack extract_patch(const ShiftStack& stack, const PatchSpec& spec) {
  require(spec.top >= 0 && spec.left >= 0 && spec.size >= 1 &&
              spec.top + spec.size <= stack.height && spec.left + spec.size <= stack.width,
          "extract_patch: window out of bounds");
  ShiftStack out;
  out.height = spec.size;
  out.width = spec.size;
  out.shift_fraction = stack.shift_fraction;
  for (int k = 0; k < kStackSlots; ++k) {
    out.images[k] = crop(stack.images[k], spec.top, spec.left, spec.size, spec.size);
    out.masks[k] = crop(stack.masks[k], spec.top, spec.left, spec.size, spec.size);
  }
  return out;
}

void save_stack(const ShiftStack& stack, const std::filesystem::path& dir, int original_height,
                int original_width) {
  std::filesystem::create_directories(dir);
  for (int k = 0; k < kStackSlots; ++k) {
    save_image(stack.images[k], dir / ("slot" + std::to_string(k) + "_img.png"));
    save_mask(stack.masks[k], dir / ("slot" + std::to_string(k) + "_mask.png"));
  }
  nlohmann::json meta{{"shift_fraction", stack.shift_fraction},
                      {"height", stack.height},
                      {"width", stack.width},
                      {"original_height", original_height},
                      {"original_width", original_width},
                      {"channel_order", std::string(kChannelOrderTag)}};
  std::ofstream out(dir / "meta.json");
  if (!out) throw IoError("cannot write " + (dir / "meta.json").string());
  out << meta.dump(2) << '\n';
}

ShiftStack load_stack(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw IoError("missing " + (dir / "meta.json").string());
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("meta.json: ") + e.what());
  }
  if (meta.value("channel_order", std::string(kChannelOrderTag)) != kChannelOrderTag) {
    throw FormatError("stack directory has a foreign channel order");
  }
  ShiftStack s;
  s.shift_fraction = meta.at("shift_fraction").get<double>();
  s.height = meta.at("height").get<int>();
  s.width = meta.at("width").get<int>();
  for (int k = 0; k < kStackSlots; ++k) {
    s.images[k] = to_rgb(load_image(dir / ("slot" + std::to_string(k) + "_img.png")));
    s.masks[k] = load_mask(dir / ("slot" + std::to_string(k) + "_mask.png"));
    if (s.images[k].height != s.height || s.images[k].width != s.width ||
        s.masks[k].height != s.height || s.masks[k].width != s.width) {
      throw FormatError("stack slot " + std::to_string(k) + " has mismatched dimensions");
    }
  }
  return s;
}

}  // namespace hires
