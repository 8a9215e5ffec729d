#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hires/coarse.hpp"
#include "hires/dataset.hpp"
#include "hires/losses.hpp"
#include "hires/mask_gen.hpp"
#include "hires/nn/adam.hpp"
#include "hires/refiner.hpp"

namespace hires {

struct TrainConfig {
  int batch_size = 4;
  int patch_size = 128;
  nn::AdamConfig adam;
  /// Training stops once the step counter reaches this value.
  long max_steps = 300;
  long validation_interval = 0;  // 0 disables periodic validation
  long checkpoint_interval = 0;  // 0 writes only the final checkpoint
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_dir;  // empty disables checkpoint files
  std::filesystem::path log_path;        // NDJSON records; empty disables
  double shift_fraction = kDefaultShiftFraction;
  CoarseConfig coarse;
  /// Stage-one rasters named like the crops, used with the external backend.
  std::filesystem::path external_coarse_dir;
  /// Where stage-one results are cached; empty keeps them in memory only.
  std::filesystem::path coarse_cache_dir;
  bool recompute_coarse = false;
  LossWeights weights;
  LayerNormalization layer_normalization = LayerNormalization::kPerElement;
  /// Hole generator for samples whose manifest entry has no mask file.
  MaskGenConfig masks;

  static TrainConfig desk();
  static TrainConfig paper();
  static TrainConfig preset(const std::string& name);

  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
  /// Overlays the keys present in j onto base.
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
};

struct ValidationSummary {
  int images = 0;
  int hole_images = 0;
  double l1_8bit = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double hole_l1_8bit = 0.0;
  double hole_psnr_db = 0.0;
  double hole_ssim = 0.0;

  [[nodiscard]] nlohmann::json to_json() const;
  bool operator==(const ValidationSummary&) const = default;
};

struct TrainRecord {
  long step = 0;
  LossReport loss;  // mean over the batch, computed before the update
  int batch = 0;
  int skipped = 0;  // samples rejected by the patch sampler this step
  std::optional<ValidationSummary> validation;
  double wall_seconds = 0.0;

  [[nodiscard]] nlohmann::json to_json() const;
};

struct TrainState {
  TrainState() = default;
  explicit TrainState(RefinerModel m) : model(std::move(m)) {}

  RefinerModel model;
  nn::Adam optimizer;
  long step = 0;
};

struct ValidateOptions {
  CoarseConfig coarse;
  double shift_fraction = kDefaultShiftFraction;
  std::filesystem::path external_coarse_dir;
  MaskGenConfig masks;
};

/// One Adam step per iteration on the total loss of sampled patches. The
/// feature extractor and the coarse stage stay fixed.
std::vector<TrainRecord> train(const TrainConfig& cfg, const Manifest& train_set, const Manifest* val_set,
                               TrainState& state, const FeatureExtractor& fx = FeatureExtractor{},
                               const std::function<void(const TrainRecord&)>& on_record = {});

/// Full-image inference over a manifest; masks come from the manifest or the
/// generator (seeded per entry).
ValidationSummary validate(const RefinerModel& model, const Manifest& set, const ValidateOptions& opts = {});

/// Mask for manifest entry `index`: the listed file, else a generated one.
Mask entry_mask(const Manifest& set, std::size_t index, int h, int w, const MaskGenConfig& gen);

std::filesystem::path checkpoint_name(const std::filesystem::path& dir, long step);

}  // namespace hires
