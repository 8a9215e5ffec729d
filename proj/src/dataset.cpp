#include "hires/dataset.hpp"

#include <cctype>
#include <algorithm>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "hires/errors.hpp"
#include "hires/image.hpp"

namespace hires {

namespace fs = std::filesystem;

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DatasetError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".png" || ext == ".ppm" || ext == ".pgm" || ext == ".pnm") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Manifest prepare_dataset(const fs::path& src_dir, const fs::path& out_dir, const DatasetOptions& opts) {
  require(opts.squares_per_image >= 1, "prepare_dataset: squares_per_image must be >= 1");
  require(opts.working_size >= 0, "prepare_dataset: working_size must be >= 0");
  const auto sources = list_images(src_dir);
  if (sources.empty()) throw DatasetError("no images found in " + src_dir.string());
  fs::create_directories(out_dir);

  Manifest manifest;
  manifest.root = out_dir;
  for (std::size_t idx = 0; idx < sources.size(); ++idx) {
    const auto& src = sources[idx];
    Image img;
    try {
      img = to_rgb(load_image(src));
    } catch (const Error&) {
      continue;  // unreadable files are skipped, the directory check above covers "no input"
    }
    // Per-file stream keeps output independent of processing order.
    std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32),
                      static_cast<std::uint32_t>(idx)};
    std::mt19937_64 rng(seq);
    const int side = std::min(img.height, img.width);
    std::uniform_int_distribution<int> top_dist(0, img.height - side);
    std::uniform_int_distribution<int> left_dist(0, img.width - side);
    for (int k = 0; k < opts.squares_per_image; ++k) {
      const int top = top_dist(rng);
      const int left = left_dist(rng);
      Image sq = crop(img, top, left, side, side);
      if (opts.working_size > 0 && opts.working_size != side) {
        sq = resize_bilinear(sq, opts.working_size, opts.working_size);
      }
      ManifestEntry e;
      e.crop_file = src.stem().string() + "_sq" + std::to_string(k) + ".png";
      e.source_file = fs::absolute(src).string();
      e.offset_top = top;
      e.offset_left = left;
      e.side = side;
      save_image(sq, out_dir / e.crop_file);
      if (opts.masks) {
        MaskGenConfig mc = opts.masks->scaled_for(sq.height, sq.width);
        mc.seed = rng();
        e.mask_file = src.stem().string() + "_sq" + std::to_string(k) + "_mask.png";
        save_mask(generate_irregular_mask(sq.height, sq.width, mc), out_dir / e.mask_file);
      }
      manifest.entries.push_back(std::move(e));
    }
  }
  if (manifest.entries.empty()) throw DatasetError("no readable images in " + src_dir.string());
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

void save_manifest(const Manifest& m, const fs::path& path) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json j{{"crop_file", e.crop_file},
                     {"source_file", e.source_file},
                     {"offset", {{"top", e.offset_top}, {"left", e.offset_left}}},
                     {"side", e.side}};
    if (!e.mask_file.empty()) j["mask_file"] = e.mask_file;
    entries.push_back(std::move(j));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << nlohmann::json{{"entries", entries}}.dump(2) << '\n';
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  m.root = path.parent_path();
  try {
    nlohmann::json j;
    in >> j;
    for (const auto& e : j.at("entries")) {
      ManifestEntry me;
      me.crop_file = e.at("crop_file").get<std::string>();
      me.source_file = e.value("source_file", std::string{});
      if (e.contains("offset")) {
        me.offset_top = e["offset"].value("top", 0);
        me.offset_left = e["offset"].value("left", 0);
      }
      me.side = e.value("side", 0);
      me.mask_file = e.value("mask_file", std::string{});
      m.entries.push_back(std::move(me));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  return m;
}

Manifest manifest_from_directory(const fs::path& dir) {
  Manifest m;
  m.root = dir;
  for (const auto& p : list_images(dir)) {
    if (p.stem().string().ends_with("_mask")) continue;
    ManifestEntry e;
    e.crop_file = p.filename().string();
    e.source_file = p.string();
    const auto mask = p.parent_path() / (p.stem().string() + "_mask" + p.extension().string());
    if (fs::exists(mask)) e.mask_file = mask.filename().string();
    m.entries.push_back(std::move(e));
  }
  return m;
}

}  // namespace hires
