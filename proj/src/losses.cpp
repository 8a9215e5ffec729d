#include "hires/losses.hpp"

#include <cmath>
#include <random>

#include "hires/checkpoint.hpp"
#include "hires/errors.hpp"

namespace hires {

void LossWeights::validate() const {
  require(tv >= 0 && l1 >= 0 && perceptual >= 0 && style >= 0, "loss weights must be >= 0");
}

double weighted_total(const LossReport& c, const LossWeights& w) {
  return w.tv * c.tv + w.l1 * c.l1 + w.perceptual * c.perceptual + w.style * c.style;
}

FeatureExtractor::FeatureExtractor(Config cfg) : cfg_(std::move(cfg)) {
  require(!cfg_.channels.empty(), "feature extractor needs at least one stage");
  require(!cfg_.layer_ids.empty(), "feature extractor needs a non-empty layer set");
  for (int id : cfg_.layer_ids) {
    require(id >= 0 && id < static_cast<int>(cfg_.channels.size()), "feature layer id out of range");
  }
  std::mt19937_64 rng(cfg_.seed);
  const double gain = std::sqrt(2.0 / (1.0 + cfg_.slope * cfg_.slope));
  int in = 3;
  for (int ch : cfg_.channels) {
    stages_.emplace_back(in, ch, cfg_.kernel, 2, true, nn::Padding::kReplicate);
    stages_.back().init(rng, gain);
    in = ch;
  }
}

std::vector<Tensor<double>> FeatureExtractor::extract(const Tensor<double>& img, Tape* tape) const {
  require(img.n == 1 && img.c == 3, "extract_features: expected one RGB image");
  std::vector<Tensor<double>> out;
  if (tape) {
    tape->inputs.clear();
    tape->outputs.clear();
  }
  Tensor<double> cur = img;
  std::vector<Tensor<double>> acts;
  for (const auto& stage : stages_) {
    Tensor<double> y = stage.forward(cur);
    nn::leaky_relu_(y, cfg_.slope);
    if (tape) tape->inputs.push_back(std::move(cur));
    acts.push_back(y);
    cur = std::move(y);
  }
  for (int id : cfg_.layer_ids) out.push_back(acts[id]);
  if (tape) tape->outputs = std::move(acts);
  return out;
}

Tensor<double> FeatureExtractor::backward(const Tape& tape, const std::vector<Tensor<double>>& feature_grads) const {
  require(feature_grads.size() == cfg_.layer_ids.size(), "feature backward: one gradient per layer");
  require(tape.outputs.size() == stages_.size(), "feature backward: tape does not match extractor");
  std::vector<Tensor<double>> stage_grad(stages_.size());
  for (std::size_t k = 0; k < cfg_.layer_ids.size(); ++k) {
    auto& g = stage_grad[cfg_.layer_ids[k]];
    if (g.data.empty()) {
      g = feature_grads[k];
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += feature_grads[k].data[i];
    }
  }
  Tensor<double> grad;
  for (int s = static_cast<int>(stages_.size()) - 1; s >= 0; --s) {
    if (!stage_grad[s].data.empty()) {
      if (grad.data.empty()) {
        grad = stage_grad[s];
      } else {
        for (std::size_t i = 0; i < grad.size(); ++i) grad.data[i] += stage_grad[s].data[i];
      }
    }
    if (grad.data.empty()) continue;  // nothing above this stage contributes yet
    nn::leaky_relu_backward_(grad, tape.outputs[s], cfg_.slope);
    grad = stages_[s].input_grad(tape.inputs[s], grad);
  }
  if (grad.data.empty()) {
    const auto& x = tape.inputs.front();
    grad = Tensor<double>(x.n, x.c, x.h, x.w);
  }
  return grad;
}

std::vector<float> FeatureExtractor::flat_weights() const {
  std::vector<float> out;
  for (const auto& s : stages_) {
    out.insert(out.end(), s.weight.data.begin(), s.weight.data.end());
    out.insert(out.end(), s.bias.begin(), s.bias.end());
  }
  return out;
}

void FeatureExtractor::save(const std::filesystem::path& path) const {
  Container c;
  c.header["kind"] = "feature_extractor";
  c.header["config"] = {{"channels", cfg_.channels},
                        {"kernel", cfg_.kernel},
                        {"slope", cfg_.slope},
                        {"layer_ids", cfg_.layer_ids}};
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const auto& w = stages_[i].weight;
    c.tensors.push_back({"fx" + std::to_string(i) + ".weight", {w.n, w.c, w.h, w.w},
                         std::vector<float>(w.data.begin(), w.data.end())});
    c.tensors.push_back({"fx" + std::to_string(i) + ".bias", {w.n},
                         std::vector<float>(stages_[i].bias.begin(), stages_[i].bias.end())});
  }
  write_container(c, path);
}

FeatureExtractor FeatureExtractor::load(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.header.value("kind", std::string{}) != "feature_extractor") {
    throw CheckpointError(path.string() + ": not a feature extractor container");
  }
  Config cfg;
  const auto& j = c.header.at("config");
  cfg.channels = j.value("channels", cfg.channels);
  cfg.kernel = j.value("kernel", cfg.kernel);
  cfg.slope = j.value("slope", cfg.slope);
  cfg.layer_ids = j.value("layer_ids", cfg.layer_ids);
  FeatureExtractor fx(cfg);
  for (std::size_t i = 0; i < fx.stages_.size(); ++i) {
    auto& s = fx.stages_[i];
    const auto* w = c.find("fx" + std::to_string(i) + ".weight");
    const auto* b = c.find("fx" + std::to_string(i) + ".bias");
    if (!w || !b || w->data.size() != s.weight.size() || b->data.size() != s.bias.size()) {
      throw CheckpointError(path.string() + ": missing or mis-sized stage " + std::to_string(i));
    }
    s.weight.data.assign(w->data.begin(), w->data.end());
    s.bias.assign(b->data.begin(), b->data.end());
  }
  return fx;
}

Tensor<double> to_planar(const Image& img) {
  Tensor<double> t(1, img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c) {
    double* dst = t.channel(0, c);
    for (std::size_t p = 0; p < img.pixel_count(); ++p) dst[p] = img.data[p * img.channels + c];
  }
  return t;
}

namespace {

double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

void reset_grad(Tensor<double>* grad, const Tensor<double>& like) {
  if (grad) *grad = Tensor<double>(like.n, like.c, like.h, like.w);
}

// Sum_j scale_j * |a_j - b_j|; writes scale_j*sign into grad when given.
double abs_diff(const std::vector<double>& a, const std::vector<double>& b, double scale,
                std::vector<double>* grad) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += std::abs(d);
    if (grad) (*grad)[i] = scale * sign(d);
  }
  return s * scale;
}

Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> as_matrix(
    const Tensor<double>& f) {
  return {f.data.data(), f.c, static_cast<Eigen::Index>(f.plane())};
}

struct FeaturePass {
  FeatureExtractor::Tape tape;
  std::vector<Tensor<double>> pred;
  std::vector<Tensor<double>> ref;
};

FeaturePass run_features(const FeatureExtractor& fx, const Tensor<double>& pred, const Tensor<double>& ref,
                         bool want_grad) {
  FeaturePass p;
  p.pred = fx.extract(pred, want_grad ? &p.tape : nullptr);
  p.ref = fx.extract(ref);
  return p;
}

double perceptual_term(const FeaturePass& p, std::vector<Tensor<double>>* fgrad, LayerNormalization norm) {
  double total = 0.0;
  for (std::size_t j = 0; j < p.pred.size(); ++j) {
    const auto& a = p.pred[j];
    const double scale = norm == LayerNormalization::kPerElement ? 1.0 / static_cast<double>(a.size()) : 1.0;
    std::vector<double>* g = nullptr;
    if (fgrad) {
      (*fgrad)[j] = Tensor<double>(a.n, a.c, a.h, a.w);
      g = &(*fgrad)[j].data;
    }
    total += abs_diff(a.data, p.ref[j].data, scale, g);
  }
  return total;
}

double style_term(const FeaturePass& p, std::vector<Tensor<double>>* fgrad, LayerNormalization norm) {
  double total = 0.0;
  for (std::size_t j = 0; j < p.pred.size(); ++j) {
    const auto& f = p.pred[j];
    const Eigen::MatrixXd gp = gram(f);
    const Eigen::MatrixXd gr = gram(p.ref[j]);
    const double c = f.c;
    const double n = static_cast<double>(f.plane());
    const double scale = norm == LayerNormalization::kPerElement ? 1.0 / (c * c) : 1.0;
    Eigen::MatrixXd dg = Eigen::MatrixXd::Zero(f.c, f.c);
    for (Eigen::Index a = 0; a < f.c; ++a) {
      for (Eigen::Index b = 0; b < f.c; ++b) {
        const double d = gp(a, b) - gr(a, b);
        total += scale * std::abs(d);
        dg(a, b) = scale * sign(d);
      }
    }
    if (fgrad) {
      // dL/dF = (dG + dG^T) F / (C N)
      (*fgrad)[j] = Tensor<double>(f.n, f.c, f.h, f.w);
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> out(
          (*fgrad)[j].data.data(), f.c, static_cast<Eigen::Index>(f.plane()));
      out.noalias() = ((dg + dg.transpose()) * as_matrix(f)) / (c * n);
    }
  }
  return total;
}

void require_same(const Tensor<double>& a, const Tensor<double>& b, const char* who) {
  require(a.same_shape(b), std::string(who) + ": prediction/reference dimension mismatch");
}

}  // namespace

double l1_loss(const Tensor<double>& pred, const Tensor<double>& ref, Tensor<double>* grad) {
  require_same(pred, ref, "l1_loss");
  require(pred.size() > 0, "l1_loss: empty input");
  reset_grad(grad, pred);
  const double scale = 1.0 / static_cast<double>(pred.size());
  return abs_diff(pred.data, ref.data, scale, grad ? &grad->data : nullptr);
}

double l1_loss(const Image& pred, const Image& ref) {
  require(pred.height == ref.height && pred.width == ref.width && pred.channels == ref.channels,
          "l1_loss: prediction/reference dimension mismatch");
  return l1_loss(to_planar(pred), to_planar(ref));
}

double tv_loss(const Tensor<double>& pred, const Mask& mask, Tensor<double>* grad) {
  require(pred.n == 1 && pred.h == mask.height && pred.w == mask.width, "tv_loss: dimension mismatch");
  reset_grad(grad, pred);
  // Count the pairs first so the gradient can be scaled in one pass.
  std::size_t pairs = 0;
  for (int y = 0; y < pred.h; ++y) {
    for (int x = 0; x < pred.w; ++x) {
      const bool hole = mask.at(y, x) == 0;
      if (x + 1 < pred.w && (hole || mask.at(y, x + 1) == 0)) ++pairs;
      if (y + 1 < pred.h && (hole || mask.at(y + 1, x) == 0)) ++pairs;
    }
  }
  if (pairs == 0) return 0.0;
  const double scale = 1.0 / (static_cast<double>(pairs) * pred.c);
  double sum = 0.0;
  for (int c = 0; c < pred.c; ++c) {
    const double* p = pred.channel(0, c);
    double* g = grad ? grad->channel(0, c) : nullptr;
    auto pair = [&](std::size_t i, std::size_t j) {
      const double d = p[i] - p[j];
      sum += std::abs(d);
      if (g) {
        g[i] += scale * sign(d);
        g[j] -= scale * sign(d);
      }
    };
    for (int y = 0; y < pred.h; ++y) {
      for (int x = 0; x < pred.w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * pred.w + x;
        const bool hole = mask.at(y, x) == 0;
        if (x + 1 < pred.w && (hole || mask.at(y, x + 1) == 0)) pair(i, i + 1);
        if (y + 1 < pred.h && (hole || mask.at(y + 1, x) == 0)) pair(i, i + pred.w);
      }
    }
  }
  return sum * scale;
}

double tv_loss(const Image& pred, const Mask& mask) { return tv_loss(to_planar(pred), mask); }

std::vector<Tensor<double>> extract_features(const FeatureExtractor& fx, const Image& img) {
  return fx.extract(to_planar(to_rgb(img)));
}

Eigen::MatrixXd gram(const Tensor<double>& f) {
  require(f.n == 1 && f.size() > 0, "gram: expected one non-empty feature map");
  const auto F = as_matrix(f);
  return (F * F.transpose()) / (static_cast<double>(f.c) * static_cast<double>(f.plane()));
}

double perceptual_loss(const FeatureExtractor& fx, const Tensor<double>& pred, const Tensor<double>& ref,
                       Tensor<double>* grad, LayerNormalization norm) {
  require_same(pred, ref, "perceptual_loss");
  const FeaturePass p = run_features(fx, pred, ref, grad != nullptr);
  std::vector<Tensor<double>> fgrad(p.pred.size());
  const double v = perceptual_term(p, grad ? &fgrad : nullptr, norm);
  if (grad) *grad = fx.backward(p.tape, fgrad);
  return v;
}

double perceptual_loss(const FeatureExtractor& fx, const Image& pred, const Image& ref) {
  return perceptual_loss(fx, to_planar(to_rgb(pred)), to_planar(to_rgb(ref)));
}

double style_loss(const FeatureExtractor& fx, const Tensor<double>& pred, const Tensor<double>& ref,
                  Tensor<double>* grad, LayerNormalization norm) {
  require_same(pred, ref, "style_loss");
  const FeaturePass p = run_features(fx, pred, ref, grad != nullptr);
  std::vector<Tensor<double>> fgrad(p.pred.size());
  const double v = style_term(p, grad ? &fgrad : nullptr, norm);
  if (grad) *grad = fx.backward(p.tape, fgrad);
  return v;
}

double style_loss(const FeatureExtractor& fx, const Image& pred, const Image& ref) {
  return style_loss(fx, to_planar(to_rgb(pred)), to_planar(to_rgb(ref)));
}

LossReport total_loss(const FeatureExtractor& fx, const Tensor<double>& pred, const Tensor<double>& ref,
                      const Mask& mask, const LossWeights& weights, Tensor<double>* grad,
                      LayerNormalization norm) {
  require_same(pred, ref, "total_loss");
  weights.validate();
  LossReport r;
  Tensor<double> g_l1, g_tv;
  r.l1 = l1_loss(pred, ref, grad ? &g_l1 : nullptr);
  r.tv = tv_loss(pred, mask, grad ? &g_tv : nullptr);

  const FeaturePass p = run_features(fx, pred, ref, grad != nullptr);
  std::vector<Tensor<double>> g_p(p.pred.size());
  std::vector<Tensor<double>> g_s(p.pred.size());
  r.perceptual = perceptual_term(p, grad ? &g_p : nullptr, norm);
  r.style = style_term(p, grad ? &g_s : nullptr, norm);
  r.total = weighted_total(r, weights);

  if (grad) {
    std::vector<Tensor<double>> fgrad(p.pred.size());
    for (std::size_t j = 0; j < fgrad.size(); ++j) {
      fgrad[j] = g_p[j];
      for (std::size_t i = 0; i < fgrad[j].size(); ++i) {
        fgrad[j].data[i] = weights.perceptual * g_p[j].data[i] + weights.style * g_s[j].data[i];
      }
    }
    *grad = fx.backward(p.tape, fgrad);
    for (std::size_t i = 0; i < grad->size(); ++i) {
      grad->data[i] += weights.l1 * g_l1.data[i] + weights.tv * g_tv.data[i];
    }
  }
  return r;
}

LossReport total_loss(const FeatureExtractor& fx, const Image& pred, const Image& ref, const Mask& mask,
                      const LossWeights& weights) {
  return total_loss(fx, to_planar(to_rgb(pred)), to_planar(to_rgb(ref)), mask, weights);
}

}  // namespace hires
