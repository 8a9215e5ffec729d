#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "hires/image.hpp"
#include "hires/nn/layers.hpp"
#include "hires/tensor.hpp"

namespace hires {

/// Coefficients of the training objective.
struct LossWeights {
  double tv = 0.1;
  double l1 = 6.0;
  double perceptual = 0.1;
  double style = 240.0;

  void validate() const;
};

struct LossReport {
  double tv = 0.0;
  double l1 = 0.0;
  double perceptual = 0.0;
  double style = 0.0;
  double total = 0.0;
};

/// total = w_tv*tv + w_l1*l1 + w_p*perceptual + w_s*style.
double weighted_total(const LossReport& components, const LossWeights& w);

/// How each feature-layer term of the perceptual and style losses is scaled.
enum class LayerNormalization {
  kPerElement,  // divide by the layer's element count (C*H*W, or C*C for Gram)
  kNone,        // raw L1 norms
};

/// Frozen convolutional feature extractor used by the perceptual and style
/// losses. Runs in double precision. The default is a seeded random strided
/// stack; pretrained weights can be loaded from a checkpoint container.
class FeatureExtractor {
 public:
  struct Config {
    std::vector<int> channels{16, 32, 64, 128};
    int kernel = 3;
    double slope = 0.2;
    std::vector<int> layer_ids{0, 1, 2, 3};  // stages whose outputs are used
    std::uint64_t seed = 0x9E3779B97F4A7C15ULL;
  };

  struct Tape {
    std::vector<Tensor<double>> inputs;   // input of each stage
    std::vector<Tensor<double>> outputs;  // activation of each stage
  };

  FeatureExtractor() : FeatureExtractor(Config{}) {}
  explicit FeatureExtractor(Config cfg);

  static FeatureExtractor load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  [[nodiscard]] const Config& config() const { return cfg_; }
  [[nodiscard]] std::size_t layer_count() const { return cfg_.layer_ids.size(); }

  /// One feature map per selected layer, for a single 1 x 3 x H x W image.
  std::vector<Tensor<double>> extract(const Tensor<double>& img, Tape* tape = nullptr) const;
  /// dL/d(image) given dL/d(feature) for every selected layer.
  [[nodiscard]] Tensor<double> backward(const Tape& tape, const std::vector<Tensor<double>>& feature_grads) const;

  [[nodiscard]] std::vector<float> flat_weights() const;

 private:
  Config cfg_;
  std::vector<nn::Conv2d<double>> stages_;
};

Tensor<double> to_planar(const Image& img);

/// Mean absolute difference over C*H*W. grad, when given, receives dL/dpred.
double l1_loss(const Tensor<double>& pred, const Tensor<double>& ref, Tensor<double>* grad = nullptr);
double l1_loss(const Image& pred, const Image& ref);

/// Mean |difference| over horizontal and vertical neighbour pairs that touch
/// the hole (either endpoint has mask 0), averaged over channels. 0 when no
/// pair touches the hole.
double tv_loss(const Tensor<double>& pred, const Mask& mask, Tensor<double>* grad = nullptr);
double tv_loss(const Image& pred, const Mask& mask);

std::vector<Tensor<double>> extract_features(const FeatureExtractor& fx, const Image& img);

/// G = F F^T / (C*N) for one C x H x W feature map.
Eigen::MatrixXd gram(const Tensor<double>& features);

double perceptual_loss(const FeatureExtractor& fx, const Tensor<double>& pred, const Tensor<double>& ref,
                       Tensor<double>* grad = nullptr,
                       LayerNormalization norm = LayerNormalization::kPerElement);
double perceptual_loss(const FeatureExtractor& fx, const Image& pred, const Image& ref);

double style_loss(const FeatureExtractor& fx, const Tensor<double>& pred, const Tensor<double>& ref,
                  Tensor<double>* grad = nullptr, LayerNormalization norm = LayerNormalization::kPerElement);
double style_loss(const FeatureExtractor& fx, const Image& pred, const Image& ref);

/// All four terms plus the weighted total; shares one feature pass between
/// the perceptual and style terms.
LossReport total_loss(const FeatureExtractor& fx, const Tensor<double>& pred, const Tensor<double>& ref,
                      const Mask& mask, const LossWeights& weights = {}, Tensor<double>* grad = nullptr,
                      LayerNormalization norm = LayerNormalization::kPerElement);
LossReport total_loss(const FeatureExtractor& fx, const Image& pred, const Image& ref, const Mask& mask,
                      const LossWeights& weights = {});

}  // namespace hires
