#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hires/mask_gen.hpp"

namespace hires {

struct ManifestEntry {
  std::string crop_file;
  std::string source_file;
  int offset_top = 0;
  int offset_left = 0;
  int side = 0;
  std::string mask_file;  // empty when no mask was generated
};

struct Manifest {
  std::filesystem::path root;  // crop/mask paths are relative to this
  std::vector<ManifestEntry> entries;

  [[nodiscard]] std::filesystem::path crop_path(const ManifestEntry& e) const { return root / e.crop_file; }
  [[nodiscard]] std::filesystem::path mask_path(const ManifestEntry& e) const { return root / e.mask_file; }
};

struct DatasetOptions {
  int squares_per_image = 3;
  /// Side of the emitted crops; 0 keeps the native square side.
  int working_size = 0;
  std::uint64_t seed = 0;
  /// When set, a hole mask is generated for every crop.
  std::optional<MaskGenConfig> masks;
};

/// Cuts the largest square at random offsets from every readable image in
/// src_dir and writes crops plus manifest.json to out_dir.
Manifest prepare_dataset(const std::filesystem::path& src_dir, const std::filesystem::path& out_dir,
                         const DatasetOptions& opts);

void save_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

/// Manifest covering every image in a directory, without masks.
Manifest manifest_from_directory(const std::filesystem::path& dir);

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace hires
