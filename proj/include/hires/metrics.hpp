#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hires/image.hpp"

namespace hires {

inline constexpr double kPsnrCap = 99.0;

/// 10*log10(1/MSE) over all samples; identical inputs give kPsnrCap.
double psnr(const Image& pred, const Image& ref);
/// PSNR over the samples of pixels where mask == 0.
double psnr_masked(const Image& pred, const Image& ref, const Mask& mask);

/// Mean local SSIM (11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03,
/// dynamic range 1) over valid window positions, on luma for RGB input.
double ssim(const Image& pred, const Image& ref);
/// Mean SSIM over windows centred on hole pixels.
double ssim_masked(const Image& pred, const Image& ref, const Mask& mask);

/// 255 * mean absolute difference.
double mean_l1_8bit(const Image& pred, const Image& ref);
double mean_l1_8bit_masked(const Image& pred, const Image& ref, const Mask& mask);

struct MetricRow {
  std::string method;
  std::string region;  // "full" or "hole"
  int resolution = 0;  // 0 = native
  int pairs = 0;
  double l1_8bit = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct EvaluateOptions {
  std::string method = "method";
  std::vector<int> resolutions;  // empty or 0 = native size
  std::optional<std::filesystem::path> mask_dir;
};

/// Pairs files by name across the two directories, nearest-downsamples both
/// sides to each requested square resolution and averages the metrics.
std::vector<MetricRow> evaluate_pairs(const std::filesystem::path& pred_dir,
                                      const std::filesystem::path& ref_dir, const EvaluateOptions& opts);

/// Methods x {L1, PSNR, SSIM} blocks, one block per resolution.
std::string format_table(const std::vector<MetricRow>& rows);
std::string format_csv(const std::vector<MetricRow>& rows);

}  // namespace hires
