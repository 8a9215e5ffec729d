#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hires/errors.hpp"

namespace hires::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// A trainable tensor seen by the optimizer.
struct ParamRef {
  std::string name;
  std::span<float> value;
  std::span<const float> grad;
};

/// Adam with bias-corrected moments. Moment buffers are keyed by parameter name
/// so they survive a checkpoint round trip.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(std::span<const ParamRef> params) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& p : params) {
      require(p.value.size() == p.grad.size(), "Adam: value/grad size mismatch for " + p.name);
      auto& m = first_[p.name];
      auto& v = second_[p.name];
      if (m.empty()) {
        m.assign(p.value.size(), 0.0f);
        v.assign(p.value.size(), 0.0f);
      }
      require(m.size() == p.value.size(), "Adam: state size mismatch for " + p.name);
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double g = p.grad[k];
        const double mk = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
        const double vk = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
        m[k] = static_cast<float>(mk);
        v[k] = static_cast<float>(vk);
        const double update = cfg_.learning_rate * (mk / c1) / (std::sqrt(vk / c2) + cfg_.eps);
        p.value[k] = static_cast<float>(p.value[k] - update);
      }
    }
  }

  [[nodiscard]] long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }
  [[nodiscard]] const AdamConfig& config() const { return cfg_; }
  void set_config(const AdamConfig& cfg) { cfg_ = cfg; }

  std::map<std::string, std::vector<float>>& first_moments() { return first_; }
  std::map<std::string, std::vector<float>>& second_moments() { return second_; }
  [[nodiscard]] const std::map<std::string, std::vector<float>>& first_moments() const { return first_; }
  [[nodiscard]] const std::map<std::string, std::vector<float>>& second_moments() const { return second_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, std::vector<float>> first_;
  std::map<std::string, std::vector<float>> second_;
};

}  // namespace hires::nn
