#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hires/checkpoint.hpp"
#include "hires/coarse.hpp"
#include "hires/image.hpp"
#include "hires/nn/adam.hpp"
#include "hires/nn/layers.hpp"
#include "hires/shift_stack.hpp"
#include "hires/tensor.hpp"

namespace hires {

struct RefinerConfig {
  std::vector<int> encoder_channels{32, 64, 128, 256, 256};
  std::vector<int> encoder_kernel_sizes{7, 5, 5, 3, 3};
  int decoder_kernel_size = 3;
  int input_channels = kStackChannels;
  int output_channels = 3;
  float leaky_slope = 0.2f;
  float bn_momentum = 0.1f;
  float bn_eps = 1e-5f;
  /// Concatenates the raw input stack onto the head's input.
  bool input_skip = true;

  void validate() const;
  [[nodiscard]] int levels() const { return static_cast<int>(encoder_channels.size()); }
  /// Spatial dimensions must be multiples of this.
  [[nodiscard]] int grid() const { return 1 << (levels() - 1); }

  [[nodiscard]] nlohmann::json to_json() const;
  static RefinerConfig from_json(const nlohmann::json& j);
};

enum class Mode { kTrain, kInfer };

/// Stage-two U-Net. Encoder level 0 keeps full resolution, every further
/// level halves it with a strided convolution. Each decoder level upsamples
/// (nearest, 2x), concatenates the matching encoder output and applies a 3x3
/// convolution. Every convolution except the output head is followed by
/// batch normalization and a leaky rectifier; the head ends in a sigmoid.
/// With input_skip the head also sees the 20 input channels.
class RefinerModel {
 public:
  struct Block {
    nn::Conv2d<float> conv;
    nn::BatchNorm2d<float> bn;
  };

  /// Intermediate values kept by forward_train for backward.
  struct Tape {
    struct Level {
      Tensor<float> input;
      nn::BatchNorm2d<float>::Cache bn;
      Tensor<float> output;
    };
    std::vector<Level> encoder;
    std::vector<Level> decoder;
    Tensor<float> head_input;
    Tensor<float> output;
  };

  RefinerModel() = default;
  /// Builds zero-initialized layers with the config's shapes.
  explicit RefinerModel(RefinerConfig cfg);

  [[nodiscard]] const RefinerConfig& config() const { return cfg_; }

  [[nodiscard]] Tensor<float> infer(const Tensor<float>& x) const;
  Tensor<float> forward_train(const Tensor<float>& x, Tape& tape);
  /// Accumulates weight gradients for dL/d(output).
  void backward(const Tape& tape, Tensor<float> grad_output);
  void zero_grad();

  std::vector<nn::ParamRef> parameters();
  /// Every tensor that defines the model, including running statistics.
  [[nodiscard]] std::vector<NamedTensor> state() const;
  void load_state(const std::vector<NamedTensor>& tensors);
  /// Gradients of the trainable tensors, keyed like parameters().
  [[nodiscard]] std::vector<NamedTensor> gradients() const;

  std::vector<Block>& encoder() { return encoder_; }
  std::vector<Block>& decoder() { return decoder_; }
  nn::Conv2d<float>& head() { return head_; }

  bool operator==(const RefinerModel& o) const;

 private:
  void check_input(const Tensor<float>& x) const;

  RefinerConfig cfg_;
  std::vector<Block> encoder_;
  std::vector<Block> decoder_;  // decoder_[l] produces level-l resolution
  nn::Conv2d<float> head_;
};

RefinerModel init_model(const RefinerConfig& cfg, std::uint64_t seed);

/// Packs stacks into an N x 20 x H x W tensor: slot-major RGB first, then the five masks.
Tensor<float> stacks_to_tensor(std::span<const ShiftStack> stacks);
Tensor<float> stack_to_tensor(const ShiftStack& stack);
Image tensor_to_image(const Tensor<float>& t, int index = 0);
Tensor<float> image_to_tensor(const Image& img);

/// Convenience single-stack forward. Train mode uses batch statistics and
/// updates the running estimates.
Image forward(RefinerModel& model, const ShiftStack& stack, Mode mode);
Image forward(const RefinerModel& model, const ShiftStack& stack);

struct CropSpec {
  int height = 0;
  int width = 0;
  bool active = false;  // false when no padding was applied
};

/// Reflect-pads right/bottom so both sides are multiples of 2^(levels-1).
std::pair<ShiftStack, CropSpec> pad_to_grid(const ShiftStack& stack, int levels);
Image undo_pad(const Image& img, const CropSpec& crop);
ShiftStack undo_pad(const ShiftStack& stack, const CropSpec& crop);

struct InpaintOptions {
  CoarseConfig coarse;
  double shift_fraction = kDefaultShiftFraction;
  /// Caps the longer processing side when > 0.
  int max_side = 0;
};

/// Full pipeline: coarse fill, shift stack, refiner, final composite.
Image inpaint(const RefinerModel& model, const Image& img, const Mask& mask,
              const InpaintOptions& opts = {});

struct LoadedCheckpoint {
  RefinerModel model;
  std::optional<nn::Adam> optimizer;
  long training_step = 0;
};

void save_checkpoint(const RefinerModel& model, const nn::Adam* optimizer, long training_step,
                     const std::filesystem::path& path);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hires
