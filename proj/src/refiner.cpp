#include "hires/refiner.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "hires/errors.hpp"

namespace hires {

void RefinerConfig::validate() const {
  require(!encoder_channels.empty(), "refiner: at least one encoder level");
  require(encoder_channels.size() == encoder_kernel_sizes.size(),
          "refiner: encoder channel and kernel lists differ in length");
  require(levels() <= 12, "refiner: too many levels");
  for (std::size_t i = 0; i < encoder_channels.size(); ++i) {
    require(encoder_channels[i] >= 1, "refiner: channel counts must be positive");
    require(encoder_kernel_sizes[i] >= 1 && encoder_kernel_sizes[i] % 2 == 1,
            "refiner: encoder kernels must be odd");
  }
  require(decoder_kernel_size == 3, "refiner: decoder kernels are 3x3");
  require(input_channels == kStackChannels, "refiner: input must be the 20-channel stack");
  require(output_channels == 3, "refiner: output is RGB");
  require(leaky_slope >= 0.0f && leaky_slope < 1.0f, "refiner: leaky slope in [0,1)");
  require(bn_momentum > 0.0f && bn_momentum <= 1.0f, "refiner: momentum in (0,1]");
  require(bn_eps > 0.0f, "refiner: bn eps must be positive");
}

nlohmann::json RefinerConfig::to_json() const {
  return {{"encoder_channels", encoder_channels},
          {"encoder_kernel_sizes", encoder_kernel_sizes},
          {"decoder_kernel_size", decoder_kernel_size},
          {"input_channels", input_channels},
          {"output_channels", output_channels},
          {"leaky_slope", leaky_slope},
          {"bn_momentum", bn_momentum},
          {"bn_eps", bn_eps},
          {"input_skip", input_skip}};
}

RefinerConfig RefinerConfig::from_json(const nlohmann::json& j) {
  RefinerConfig c;
  c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
  c.encoder_kernel_sizes = j.value("encoder_kernel_sizes", c.encoder_kernel_sizes);
  c.decoder_kernel_size = j.value("decoder_kernel_size", c.decoder_kernel_size);
  c.input_channels = j.value("input_channels", c.input_channels);
  c.output_channels = j.value("output_channels", c.output_channels);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  c.bn_eps = j.value("bn_eps", c.bn_eps);
  c.input_skip = j.value("input_skip", c.input_skip);
  c.validate();
  return c;
}

RefinerModel::RefinerModel(RefinerConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto& ch = cfg_.encoder_channels;
  const int levels = cfg_.levels();
  for (int l = 0; l < levels; ++l) {
    const int in = l == 0 ? cfg_.input_channels : ch[l - 1];
    encoder_.push_back({nn::Conv2d<float>(in, ch[l], cfg_.encoder_kernel_sizes[l], l == 0 ? 1 : 2, false),
                        nn::BatchNorm2d<float>(ch[l], cfg_.bn_momentum, cfg_.bn_eps)});
  }
  for (int l = 0; l + 1 < levels; ++l) {
    decoder_.push_back({nn::Conv2d<float>(ch[l + 1] + ch[l], ch[l], cfg_.decoder_kernel_size, 1, false),
                        nn::BatchNorm2d<float>(ch[l], cfg_.bn_momentum, cfg_.bn_eps)});
  }
  const int head_in = ch[0] + (cfg_.input_skip ? cfg_.input_channels : 0);
  head_ = nn::Conv2d<float>(head_in, cfg_.output_channels, cfg_.decoder_kernel_size, 1, true);
}

RefinerModel init_model(const RefinerConfig& cfg, std::uint64_t seed) {
  RefinerModel m(cfg);
  std::mt19937_64 rng(seed);
  const double slope = cfg.leaky_slope;
  const double gain = std::sqrt(2.0 / (1.0 + slope * slope));
  for (auto& b : m.encoder()) b.conv.init(rng, gain);
  for (auto& b : m.decoder()) b.conv.init(rng, gain);
  m.head().init(rng, 1.0);
  return m;
}

void RefinerModel::check_input(const Tensor<float>& x) const {
  require(x.c == cfg_.input_channels, "refiner: expected a 20-channel input");
  require(x.n >= 1, "refiner: empty batch");
  require(x.h % cfg_.grid() == 0 && x.w % cfg_.grid() == 0,
          "refiner: input dimensions must be multiples of " + std::to_string(cfg_.grid()) +
              " (use pad_to_grid)");
}

Tensor<float> RefinerModel::infer(const Tensor<float>& x) const {
  check_input(x);
  const float slope = cfg_.leaky_slope;
  std::vector<Tensor<float>> skips;
  Tensor<float> cur = x;
  for (const auto& b : encoder_) {
    cur = b.bn.forward_infer(b.conv.forward(cur));
    nn::leaky_relu_(cur, slope);
    skips.push_back(cur);
  }
  cur = std::move(skips.back());
  skips.pop_back();
  for (int l = static_cast<int>(decoder_.size()) - 1; l >= 0; --l) {
    const auto& b = decoder_[l];
    Tensor<float> cat = nn::concat_channels(nn::upsample2x(cur), skips[l]);
    skips[l] = {};
    cur = b.bn.forward_infer(b.conv.forward(cat));
    nn::leaky_relu_(cur, slope);
  }
  if (cfg_.input_skip) cur = nn::concat_channels(cur, x);
  Tensor<float> y = head_.forward(cur);
  nn::sigmoid_(y);
  return y;
}

Tensor<float> RefinerModel::forward_train(const Tensor<float>& x, Tape& tape) {
  check_input(x);
  const float slope = cfg_.leaky_slope;
  tape.encoder.assign(encoder_.size(), {});
  tape.decoder.assign(decoder_.size(), {});
  const Tensor<float>* cur = &x;
  for (std::size_t l = 0; l < encoder_.size(); ++l) {
    auto& lv = tape.encoder[l];
    lv.input = *cur;
    lv.output = encoder_[l].bn.forward_train(encoder_[l].conv.forward(lv.input), lv.bn);
    nn::leaky_relu_(lv.output, slope);
    cur = &lv.output;
  }
  for (int l = static_cast<int>(decoder_.size()) - 1; l >= 0; --l) {
    auto& lv = tape.decoder[l];
    lv.input = nn::concat_channels(nn::upsample2x(*cur), tape.encoder[l].output);
    lv.output = decoder_[l].bn.forward_train(decoder_[l].conv.forward(lv.input), lv.bn);
    nn::leaky_relu_(lv.output, slope);
    cur = &lv.output;
  }
  tape.head_input = cfg_.input_skip ? nn::concat_channels(*cur, x) : *cur;
  tape.output = head_.forward(tape.head_input);
  nn::sigmoid_(tape.output);
  return tape.output;
}

void RefinerModel::backward(const Tape& tape, Tensor<float> grad) {
  require(grad.same_shape(tape.output), "refiner backward: gradient shape mismatch");
  const float slope = cfg_.leaky_slope;
  nn::sigmoid_backward_(grad, tape.output);
  grad = head_.backward(tape.head_input, grad);
  if (cfg_.input_skip) grad = nn::split_channels(grad, cfg_.encoder_channels[0]).first;

  const int levels = cfg_.levels();
  std::vector<Tensor<float>> skip_grad(levels);
  for (int l = 0; l + 1 < levels; ++l) {
    const auto& lv = tape.decoder[l];
    nn::leaky_relu_backward_(grad, lv.output, slope);
    grad = decoder_[l].bn.backward(grad, lv.bn);
    grad = decoder_[l].conv.backward(lv.input, grad);
    const int up_channels = lv.input.c - tape.encoder[l].output.c;
    auto [g_up, g_skip] = nn::split_channels(grad, up_channels);
    skip_grad[l] = std::move(g_skip);
    grad = nn::upsample2x_backward(g_up);
  }
  // grad now holds dL/d(deepest encoder output).
  for (int l = levels - 1; l >= 0; --l) {
    const auto& lv = tape.encoder[l];
    if (!skip_grad[l].data.empty()) {
      for (std::size_t k = 0; k < grad.size(); ++k) grad.data[k] += skip_grad[l].data[k];
    }
    nn::leaky_relu_backward_(grad, lv.output, slope);
    grad = encoder_[l].bn.backward(grad, lv.bn);
    grad = encoder_[l].conv.backward(lv.input, grad, l > 0);
  }
}

void RefinerModel::zero_grad() {
  for (auto& b : encoder_) {
    b.conv.zero_grad();
    b.bn.zero_grad();
  }
  for (auto& b : decoder_) {
    b.conv.zero_grad();
    b.bn.zero_grad();
  }
  head_.zero_grad();
}

namespace {

template <typename Fn>
void visit_blocks(std::vector<RefinerModel::Block>& enc, std::vector<RefinerModel::Block>& dec, Fn&& fn) {
  for (std::size_t l = 0; l < enc.size(); ++l) fn("enc" + std::to_string(l), enc[l]);
  for (std::size_t l = 0; l < dec.size(); ++l) fn("dec" + std::to_string(l), dec[l]);
}

std::span<float> span_of(std::vector<float>& v) { return {v.data(), v.size()}; }

}  // namespace

std::vector<nn::ParamRef> RefinerModel::parameters() {
  std::vector<nn::ParamRef> out;
  visit_blocks(encoder_, decoder_, [&](const std::string& p, Block& b) {
    out.push_back({p + ".conv.weight", span_of(b.conv.weight.data), b.conv.grad_weight.data});
    out.push_back({p + ".bn.gamma", span_of(b.bn.gamma), b.bn.grad_gamma});
    out.push_back({p + ".bn.beta", span_of(b.bn.beta), b.bn.grad_beta});
  });
  out.push_back({"head.conv.weight", span_of(head_.weight.data), head_.grad_weight.data});
  out.push_back({"head.conv.bias", span_of(head_.bias), head_.grad_bias});
  return out;
}

std::vector<NamedTensor> RefinerModel::state() const {
  std::vector<NamedTensor> out;
  auto add_block = [&](const std::string& p, const Block& b) {
    const auto& w = b.conv.weight;
    const int c = b.bn.channels();
    out.push_back({p + ".conv.weight", {w.n, w.c, w.h, w.w}, w.data});
    out.push_back({p + ".bn.gamma", {c}, b.bn.gamma});
    out.push_back({p + ".bn.beta", {c}, b.bn.beta});
    out.push_back({p + ".bn.running_mean", {c}, b.bn.running_mean});
    out.push_back({p + ".bn.running_var", {c}, b.bn.running_var});
  };
  for (std::size_t l = 0; l < encoder_.size(); ++l) add_block("enc" + std::to_string(l), encoder_[l]);
  for (std::size_t l = 0; l < decoder_.size(); ++l) add_block("dec" + std::to_string(l), decoder_[l]);
  const auto& hw = head_.weight;
  out.push_back({"head.conv.weight", {hw.n, hw.c, hw.h, hw.w}, hw.data});
  out.push_back({"head.conv.bias", {static_cast<int>(head_.bias.size())}, head_.bias});
  return out;
}

std::vector<NamedTensor> RefinerModel::gradients() const {
  std::vector<NamedTensor> out;
  auto add_block = [&](const std::string& p, const Block& b) {
    const auto& w = b.conv.grad_weight;
    const int c = b.bn.channels();
    out.push_back({p + ".conv.weight", {w.n, w.c, w.h, w.w}, w.data});
    out.push_back({p + ".bn.gamma", {c}, b.bn.grad_gamma});
    out.push_back({p + ".bn.beta", {c}, b.bn.grad_beta});
  };
  for (std::size_t l = 0; l < encoder_.size(); ++l) add_block("enc" + std::to_string(l), encoder_[l]);
  for (std::size_t l = 0; l < decoder_.size(); ++l) add_block("dec" + std::to_string(l), decoder_[l]);
  const auto& hw = head_.grad_weight;
  out.push_back({"head.conv.weight", {hw.n, hw.c, hw.h, hw.w}, hw.data});
  out.push_back({"head.conv.bias", {static_cast<int>(head_.grad_bias.size())}, head_.grad_bias});
  return out;
}

void RefinerModel::load_state(const std::vector<NamedTensor>& tensors) {
  auto fetch = [&](const std::string& name, std::vector<float>& dst) {
    const auto it = std::find_if(tensors.begin(), tensors.end(),
                                 [&](const NamedTensor& t) { return t.name == name; });
    if (it == tensors.end()) throw CheckpointError("checkpoint lacks tensor " + name);
    if (it->data.size() != dst.size()) throw CheckpointError("checkpoint tensor " + name + " has wrong size");
    dst = it->data;
  };
  visit_blocks(encoder_, decoder_, [&](const std::string& p, Block& b) {
    fetch(p + ".conv.weight", b.conv.weight.data);
    fetch(p + ".bn.gamma", b.bn.gamma);
    fetch(p + ".bn.beta", b.bn.beta);
    fetch(p + ".bn.running_mean", b.bn.running_mean);
    fetch(p + ".bn.running_var", b.bn.running_var);
  });
  fetch("head.conv.weight", head_.weight.data);
  fetch("head.conv.bias", head_.bias);
}

bool RefinerModel::operator==(const RefinerModel& o) const {
  const auto a = state();
  const auto b = o.state();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].shape != b[i].shape || a[i].data != b[i].data) return false;
  }
  return true;
}

Tensor<float> stacks_to_tensor(std::span<const ShiftStack> stacks) {
  require(!stacks.empty(), "stacks_to_tensor: empty batch");
  const int h = stacks[0].height;
  const int w = stacks[0].width;
  Tensor<float> t(static_cast<int>(stacks.size()), kStackChannels, h, w);
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    const auto& s = stacks[i];
    require(s.height == h && s.width == w, "stacks_to_tensor: stacks differ in size");
    const int n = static_cast<int>(i);
    for (int k = 0; k < kStackSlots; ++k) {
      const Image& img = s.images[k];
      require(img.channels == 3 && img.height == h && img.width == w, "stacks_to_tensor: bad slot image");
      for (int c = 0; c < 3; ++c) {
        float* dst = t.channel(n, 3 * k + c);
        for (std::size_t p = 0; p < img.pixel_count(); ++p) dst[p] = img.data[3 * p + c];
      }
      const Mask& m = s.masks[k];
      float* dst = t.channel(n, 3 * kStackSlots + k);
      for (std::size_t p = 0; p < m.data.size(); ++p) dst[p] = m.data[p] ? 1.0f : 0.0f;
    }
  }
  return t;
}

Tensor<float> stack_to_tensor(const ShiftStack& stack) {
  return stacks_to_tensor(std::span<const ShiftStack>(&stack, 1));
}

Image tensor_to_image(const Tensor<float>& t, int index) {
  require(t.c == 3 || t.c == 1, "tensor_to_image: 1 or 3 channels");
  Image img(t.h, t.w, t.c);
  for (int c = 0; c < t.c; ++c) {
    const float* src = t.channel(index, c);
    for (std::size_t p = 0; p < img.pixel_count(); ++p) {
      img.data[p * t.c + c] = std::clamp(src[p], 0.0f, 1.0f);
    }
  }
  return img;
}

Tensor<float> image_to_tensor(const Image& img) {
  Tensor<float> t(1, img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c) {
    float* dst = t.channel(0, c);
    for (std::size_t p = 0; p < img.pixel_count(); ++p) dst[p] = img.data[p * img.channels + c];
  }
  return t;
}

Image forward(RefinerModel& model, const ShiftStack& stack, Mode mode) {
  if (mode == Mode::kInfer) return forward(std::as_const(model), stack);
  RefinerModel::Tape tape;
  return tensor_to_image(model.forward_train(stack_to_tensor(stack), tape));
}

Image forward(const RefinerModel& model, const ShiftStack& stack) {
  return tensor_to_image(model.infer(stack_to_tensor(stack)));
}

namespace {

int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  return i < n ? i : period - i;
}

Image pad_image(const Image& img, int h, int w) {
  Image out(h, w, img.channels);
  for (int y = 0; y < h; ++y) {
    const int sy = reflect(y, img.height);
    for (int x = 0; x < w; ++x) {
      const int sx = reflect(x, img.width);
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

Mask pad_mask(const Mask& m, int h, int w) {
  Mask out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) out.at(y, x) = m.at(reflect(y, m.height), reflect(x, m.width));
  }
  return out;
}

}  // namespace

std::pair<ShiftStack, CropSpec> pad_to_grid(const ShiftStack& stack, int levels) {
  require(levels >= 1, "pad_to_grid: levels must be >= 1");
  const int grid = 1 << (levels - 1);
  const int h = (stack.height + grid - 1) / grid * grid;
  const int w = (stack.width + grid - 1) / grid * grid;
  if (h == stack.height && w == stack.width) return {stack, CropSpec{stack.height, stack.width, false}};
  ShiftStack out;
  out.height = h;
  out.width = w;
  out.shift_fraction = stack.shift_fraction;
  for (int k = 0; k < kStackSlots; ++k) {
    out.images[k] = pad_image(stack.images[k], h, w);
    out.masks[k] = pad_mask(stack.masks[k], h, w);
  }
  return {std::move(out), CropSpec{stack.height, stack.width, true}};
}

Image undo_pad(const Image& img, const CropSpec& c) {
  if (!c.active) return img;
  return crop(img, 0, 0, c.height, c.width);
}

ShiftStack undo_pad(const ShiftStack& stack, const CropSpec& c) {
  if (!c.active) return stack;
  ShiftStack out;
  out.height = c.height;
  out.width = c.width;
  out.shift_fraction = stack.shift_fraction;
  for (int k = 0; k < kStackSlots; ++k) {
    out.images[k] = crop(stack.images[k], 0, 0, c.height, c.width);
    out.masks[k] = crop(stack.masks[k], 0, 0, c.height, c.width);
  }
  return out;
}

}  // namespace hires
