#include <algorithm>
#include <cmath>

#include "hires/checkpoint.hpp"
#include "hires/errors.hpp"
#include "hires/refiner.hpp"

namespace hires {

Image inpaint(const RefinerModel& model, const Image& img, const Mask& mask, const InpaintOptions& opts) {
  require(img.height == mask.height && img.width == mask.width, "inpaint: image/mask dimension mismatch");
  const Image src = to_rgb(img);
  if (mask.all_valid()) return src;

  Image work = src;
  Mask work_mask = mask;
  const int longer = std::max(src.height, src.width);
  const bool capped = opts.max_side > 0 && longer > opts.max_side;
  if (capped) {
    const double s = static_cast<double>(opts.max_side) / longer;
    const int h = std::max(1, static_cast<int>(std::lround(src.height * s)));
    const int w = std::max(1, static_cast<int>(std::lround(src.width * s)));
    work = resize_bilinear(src, h, w);
    work_mask = resize_nearest(mask, h, w);
  }

  const CoarseResult coarse = coarse_fill(work, work_mask, opts.coarse);
  const ShiftStack stack = assemble_stack(coarse.filled_full, work_mask, opts.shift_fraction);
  const auto [padded, crop_spec] = pad_to_grid(stack, model.config().levels());
  Image refined = undo_pad(forward(model, padded), crop_spec);
  if (capped) refined = resize_bilinear(refined, src.height, src.width);
  return composite(src, refined, mask);
}

namespace {

constexpr const char* kRefinerKind = "refiner";

}  // namespace

void save_checkpoint(const RefinerModel& model, const nn::Adam* optimizer, long training_step,
                     const std::filesystem::path& path) {
  Container c;
  c.header["kind"] = kRefinerKind;
  c.header["channel_order"] = std::string(kChannelOrderTag);
  c.header["config"] = model.config().to_json();
  c.header["training_step"] = training_step;
  c.tensors = model.state();
  if (optimizer != nullptr) {
    const auto& cfg = optimizer->config();
    c.header["optimizer"] = {{"type", "adam"},
                             {"step", optimizer->steps()},
                             {"learning_rate", cfg.learning_rate},
                             {"beta1", cfg.beta1},
                             {"beta2", cfg.beta2},
                             {"eps", cfg.eps}};
    for (const auto& [name, m] : optimizer->first_moments()) {
      c.tensors.push_back({"adam.m." + name, {static_cast<int>(m.size())}, m});
    }
    for (const auto& [name, v] : optimizer->second_moments()) {
      c.tensors.push_back({"adam.v." + name, {static_cast<int>(v.size())}, v});
    }
  }
  write_container(c, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.header.value("kind", std::string{}) != kRefinerKind) {
    throw CheckpointError(path.string() + ": not a refiner checkpoint");
  }
  if (c.header.value("channel_order", std::string{}) != kChannelOrderTag) {
    throw CheckpointError(path.string() + ": channel order tag '" +
                          c.header.value("channel_order", std::string{}) + "' does not match '" +
                          std::string(kChannelOrderTag) + "'");
  }
  LoadedCheckpoint out;
  try {
    out.model = RefinerModel(RefinerConfig::from_json(c.header.at("config")));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": bad config: " + e.what());
  } catch (const ContractError& e) {
    throw CheckpointError(path.string() + ": bad config: " + e.what());
  }
  out.model.load_state(c.tensors);
  out.training_step = c.header.value("training_step", 0L);
  if (c.header.contains("optimizer")) {
    const auto& o = c.header["optimizer"];
    nn::AdamConfig cfg;
    cfg.learning_rate = o.value("learning_rate", cfg.learning_rate);
    cfg.beta1 = o.value("beta1", cfg.beta1);
    cfg.beta2 = o.value("beta2", cfg.beta2);
    cfg.eps = o.value("eps", cfg.eps);
    nn::Adam adam(cfg);
    adam.set_steps(o.value("step", 0L));
    for (const auto& t : c.tensors) {
      if (t.name.starts_with("adam.m.")) adam.first_moments()[t.name.substr(7)] = t.data;
      if (t.name.starts_with("adam.v.")) adam.second_moments()[t.name.substr(7)] = t.data;
    }
    out.optimizer = std::move(adam);
  }
  return out;
}

}  // namespace hires
