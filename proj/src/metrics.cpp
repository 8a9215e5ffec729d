#include "hires/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "hires/dataset.hpp"
#include "hires/errors.hpp"

namespace hires {

namespace {

void require_same(const Image& a, const Image& b, const char* who) {
  require(a.height == b.height && a.width == b.width && a.channels == b.channels,
          std::string(who) + ": dimension mismatch");
}

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> luma(const Image& img) {
  std::vector<double> y(img.pixel_count());
  if (img.channels == 1) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = img.data[i];
  } else {
    for (std::size_t i = 0; i < y.size(); ++i) {
      y[i] = 0.299 * img.data[3 * i] + 0.587 * img.data[3 * i + 1] + 0.114 * img.data[3 * i + 2];
    }
  }
  return y;
}

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> g{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  return g;
}

// Separable Gaussian filter over valid positions: (h-10) x (w-10) output.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w) {
  static const auto taps = gaussian_taps();
  const int oh = h - kWindow + 1;
  const int ow = w - kWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += taps[k] * src[static_cast<std::size_t>(y) * w + x + k];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += taps[k] * tmp[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  return out;
}

// Local SSIM at every valid window position.
std::vector<double> ssim_map(const Image& pred, const Image& ref) {
  require_same(pred, ref, "ssim");
  require(pred.height >= kWindow && pred.width >= kWindow, "ssim: image smaller than the 11x11 window");
  const int h = pred.height;
  const int w = pred.width;
  const auto x = luma(pred);
  const auto y = luma(ref);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, h, w);
  const auto my = filter_valid(y, h, w);
  const auto exx = filter_valid(xx, h, w);
  const auto eyy = filter_valid(yy, h, w);
  const auto exy = filter_valid(xy, h, w);
  std::vector<double> out(mx.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double sxx = exx[i] - mx[i] * mx[i];
    const double syy = eyy[i] - my[i] * my[i];
    const double sxy = exy[i] - mx[i] * my[i];
    const double num = (2.0 * mx[i] * my[i] + kC1) * (2.0 * sxy + kC2);
    const double den = (mx[i] * mx[i] + my[i] * my[i] + kC1) * (sxx + syy + kC2);
    out[i] = num / den;
  }
  return out;
}

}  // namespace

double psnr(const Image& pred, const Image& ref) {
  require_same(pred, ref, "psnr");
  require(!pred.empty(), "psnr: empty image");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - ref.data[i];
    acc += d * d;
  }
  return psnr_from_mse(acc / static_cast<double>(pred.data.size()));
}

double psnr_masked(const Image& pred, const Image& ref, const Mask& mask) {
  require_same(pred, ref, "psnr_masked");
  require(mask.height == pred.height && mask.width == pred.width, "psnr_masked: mask dimension mismatch");
  double acc = 0.0;
  std::size_t n = 0;
  const int c = pred.channels;
  for (std::size_t p = 0; p < mask.data.size(); ++p) {
    if (mask.data[p]) continue;
    for (int k = 0; k < c; ++k) {
      const double d = static_cast<double>(pred.data[p * c + k]) - ref.data[p * c + k];
      acc += d * d;
    }
    n += c;
  }
  require(n > 0, "psnr_masked: mask has no hole pixels");
  return psnr_from_mse(acc / static_cast<double>(n));
}

double ssim(const Image& pred, const Image& ref) {
  const auto m = ssim_map(pred, ref);
  double s = 0.0;
  for (double v : m) s += v;
  return s / static_cast<double>(m.size());
}

double ssim_masked(const Image& pred, const Image& ref, const Mask& mask) {
  require(mask.height == pred.height && mask.width == pred.width, "ssim_masked: mask dimension mismatch");
  const auto m = ssim_map(pred, ref);
  const int ow = pred.width - kWindow + 1;
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const int y = static_cast<int>(i / ow) + kWindow / 2;
    const int x = static_cast<int>(i % ow) + kWindow / 2;
    if (mask.at(y, x) == 0) {
      s += m[i];
      ++n;
    }
  }
  // Holes that only touch the border band have no full window; use the whole map.
  if (n == 0) return ssim(pred, ref);
  return s / static_cast<double>(n);
}

double mean_l1_8bit(const Image& pred, const Image& ref) {
  require_same(pred, ref, "mean_l1_8bit");
  require(!pred.empty(), "mean_l1_8bit: empty image");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) acc += std::abs(static_cast<double>(pred.data[i]) - ref.data[i]);
  return 255.0 * acc / static_cast<double>(pred.data.size());
}

double mean_l1_8bit_masked(const Image& pred, const Image& ref, const Mask& mask) {
  require_same(pred, ref, "mean_l1_8bit_masked");
  double acc = 0.0;
  std::size_t n = 0;
  const int c = pred.channels;
  for (std::size_t p = 0; p < mask.data.size(); ++p) {
    if (mask.data[p]) continue;
    for (int k = 0; k < c; ++k) acc += std::abs(static_cast<double>(pred.data[p * c + k]) - ref.data[p * c + k]);
    n += c;
  }
  require(n > 0, "mean_l1_8bit_masked: mask has no hole pixels");
  return 255.0 * acc / static_cast<double>(n);
}

namespace {

std::map<std::string, std::filesystem::path> by_stem(const std::filesystem::path& dir) {
  std::map<std::string, std::filesystem::path> out;
  for (const auto& p : list_images(dir)) out[p.stem().string()] = p;
  return out;
}

}  // namespace

std::vector<MetricRow> evaluate_pairs(const std::filesystem::path& pred_dir, const std::filesystem::path& ref_dir,
                                      const EvaluateOptions& opts) {
  const auto preds = by_stem(pred_dir);
  const auto refs = by_stem(ref_dir);
  std::vector<std::string> unmatched;
  for (const auto& [name, _] : preds) {
    if (!refs.contains(name)) unmatched.push_back(name + " (missing in reference)");
  }
  for (const auto& [name, _] : refs) {
    if (!preds.contains(name)) unmatched.push_back(name + " (missing in prediction)");
  }
  if (!unmatched.empty()) {
    std::string msg = "unpaired files:";
    for (const auto& u : unmatched) msg += " " + u;
    throw PairingError(msg);
  }
  if (preds.empty()) throw PairingError("no images to evaluate in " + pred_dir.string());

  std::map<std::string, std::filesystem::path> masks;
  if (opts.mask_dir) masks = by_stem(*opts.mask_dir);

  std::vector<int> resolutions = opts.resolutions;
  if (resolutions.empty()) resolutions.push_back(0);

  std::vector<MetricRow> rows;
  for (int res : resolutions) {
    MetricRow full{opts.method, "full", res};
    MetricRow hole{opts.method, "hole", res};
    for (const auto& [name, pred_path] : preds) {
      Image pred = load_image(pred_path);
      Image ref = load_image(refs.at(name));
      if (pred.channels != ref.channels) {
        pred = to_rgb(pred);
        ref = to_rgb(ref);
      }
      if (res > 0) {
        pred = resize_nearest(pred, res, res);
        ref = resize_nearest(ref, res, res);
      }
      if (pred.height != ref.height || pred.width != ref.width) {
        throw PairingError(name + ": prediction and reference sizes differ");
      }
      full.l1_8bit += mean_l1_8bit(pred, ref);
      full.psnr_db += psnr(pred, ref);
      full.ssim += ssim(pred, ref);
      ++full.pairs;
      if (const auto it = masks.find(name); it != masks.end()) {
        Mask m = load_mask(it->second);
        if (res > 0) m = resize_nearest(m, res, res);
        if (m.height != pred.height || m.width != pred.width) {
          throw PairingError(name + ": mask size differs from the image");
        }
        if (m.hole_count() == 0) continue;
        hole.l1_8bit += mean_l1_8bit_masked(pred, ref, m);
        hole.psnr_db += psnr_masked(pred, ref, m);
        hole.ssim += ssim_masked(pred, ref, m);
        ++hole.pairs;
      }
    }
    for (MetricRow* r : {&full, &hole}) {
      if (r->pairs == 0) continue;
      r->l1_8bit /= r->pairs;
      r->psnr_db /= r->pairs;
      r->ssim /= r->pairs;
      rows.push_back(*r);
    }
  }
  return rows;
}

std::string format_table(const std::vector<MetricRow>& rows) {
  std::vector<int> order;
  for (const auto& r : rows) {
    if (std::find(order.begin(), order.end(), r.resolution) == order.end()) order.push_back(r.resolution);
  }
  std::size_t name_w = 8;
  for (const auto& r : rows) name_w = std::max(name_w, r.method.size() + r.region.size() + 3);
  std::ostringstream os;
  os << std::fixed;
  for (int res : order) {
    os << "Resolution: " << (res > 0 ? std::to_string(res) + "x" + std::to_string(res) : std::string("native"))
       << '\n';
    os << std::left << std::setw(static_cast<int>(name_w)) << "Method" << std::right << " | " << std::setw(8)
       << "L1" << " | " << std::setw(8) << "PSNR" << " | " << std::setw(6) << "SSIM" << '\n';
    os << std::string(name_w + 33, '-') << '\n';
    for (const auto& r : rows) {
      if (r.resolution != res) continue;
      const std::string label = r.region == "full" ? r.method : r.method + " (" + r.region + ")";
      os << std::left << std::setw(static_cast<int>(name_w)) << label << std::right << " | " << std::setw(8)
         << std::setprecision(3) << r.l1_8bit << " | " << std::setw(8) << r.psnr_db << " | " << std::setw(6)
         << r.ssim << '\n';
    }
    os << '\n';
  }
  return os.str();
}

std::string format_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os << "method,region,resolution,pairs,l1_8bit,psnr_db,ssim\n";
  os << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.method << ',' << r.region << ',' << r.resolution << ',' << r.pairs << ',' << r.l1_8bit << ','
       << r.psnr_db << ',' << r.ssim << '\n';
  }
  return os.str();
}

}  // namespace hires
