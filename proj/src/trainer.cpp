#include "hires/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "hires/errors.hpp"
#include "hires/metrics.hpp"

namespace hires {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xCBF29CE484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::uint64_t fnv1a(const std::string& s, std::uint64_t h) { return fnv1a(s.data(), s.size(), h); }

nlohmann::json loss_json(const LossReport& r) {
  return {{"tv", r.tv}, {"l1", r.l1}, {"perceptual", r.perceptual}, {"style", r.style}, {"total", r.total}};
}

}  // namespace

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.batch_size = 18;
  c.patch_size = 512;
  c.max_steps = 0;
  return c;
}

TrainConfig TrainConfig::preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw ContractError("unknown training preset '" + name + "' (expected desk or paper)");
}

void TrainConfig::validate() const {
  require(batch_size >= 1, "batch_size must be >= 1");
  require(patch_size >= 16, "patch_size must be >= 16");
  require(max_steps >= 0, "max_steps must be >= 0");
  require(validation_interval >= 0 && checkpoint_interval >= 0, "intervals must be >= 0");
  require(adam.learning_rate > 0.0 && adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 &&
              adam.beta2 < 1.0 && adam.eps > 0.0,
          "invalid Adam settings");
  require(shift_fraction > 0.0 && shift_fraction < 1.0, "shift_fraction must be in (0, 1)");
  coarse.validate();
  if (coarse.backend == CoarseBackend::kExternalFile) {
    require(!external_coarse_dir.empty(), "external coarse backend needs external_coarse_dir");
  }
  weights.validate();
  masks.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"patch_size", patch_size},
          {"learning_rate", adam.learning_rate},
          {"beta1", adam.beta1},
          {"beta2", adam.beta2},
          {"eps", adam.eps},
          {"max_steps", max_steps},
          {"validation_interval", validation_interval},
          {"checkpoint_interval", checkpoint_interval},
          {"seed", seed},
          {"checkpoint_dir", checkpoint_dir.string()},
          {"log_path", log_path.string()},
          {"shift_fraction", shift_fraction},
          {"working_size", coarse.working_size},
          {"upscale", to_string(coarse.upscale)},
          {"coarse_backend", to_string(coarse.backend)},
          {"external_coarse_dir", external_coarse_dir.string()},
          {"coarse_cache_dir", coarse_cache_dir.string()},
          {"recompute_coarse", recompute_coarse},
          {"loss_weights",
           {{"tv", weights.tv}, {"l1", weights.l1}, {"perceptual", weights.perceptual}, {"style", weights.style}}},
          {"layer_normalization", layer_normalization == LayerNormalization::kNone ? "none" : "per_element"},
          {"mask_seed", masks.seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.adam.learning_rate = j.value("learning_rate", c.adam.learning_rate);
  c.adam.beta1 = j.value("beta1", c.adam.beta1);
  c.adam.beta2 = j.value("beta2", c.adam.beta2);
  c.adam.eps = j.value("eps", c.adam.eps);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.validation_interval = j.value("validation_interval", c.validation_interval);
  c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir.string());
  c.log_path = j.value("log_path", c.log_path.string());
  c.shift_fraction = j.value("shift_fraction", c.shift_fraction);
  c.coarse.working_size = j.value("working_size", c.coarse.working_size);
  if (j.contains("upscale")) c.coarse.upscale = parse_upscale(j.at("upscale").get<std::string>());
  if (j.contains("coarse_backend")) c.coarse.backend = parse_backend(j.at("coarse_backend").get<std::string>());
  c.external_coarse_dir = j.value("external_coarse_dir", c.external_coarse_dir.string());
  c.coarse_cache_dir = j.value("coarse_cache_dir", c.coarse_cache_dir.string());
  c.recompute_coarse = j.value("recompute_coarse", c.recompute_coarse);
  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    c.weights.tv = w.value("tv", c.weights.tv);
    c.weights.l1 = w.value("l1", c.weights.l1);
    c.weights.perceptual = w.value("perceptual", c.weights.perceptual);
    c.weights.style = w.value("style", c.weights.style);
  }
  if (j.contains("layer_normalization")) {
    const auto s = j.at("layer_normalization").get<std::string>();
    require(s == "none" || s == "per_element", "layer_normalization must be none or per_element");
    c.layer_normalization = s == "none" ? LayerNormalization::kNone : LayerNormalization::kPerElement;
  }
  c.masks.seed = j.value("mask_seed", c.masks.seed);
  return c;
}

nlohmann::json ValidationSummary::to_json() const {
  return {{"images", images},
          {"l1_8bit", l1_8bit},
          {"psnr_db", psnr_db},
          {"ssim", ssim},
          {"hole_images", hole_images},
          {"hole_l1_8bit", hole_l1_8bit},
          {"hole_psnr_db", hole_psnr_db},
          {"hole_ssim", hole_ssim}};
}

nlohmann::json TrainRecord::to_json() const {
  nlohmann::json j = {{"step", step},
                      {"loss", loss_json(loss)},
                      {"batch", batch},
                      {"skipped", skipped},
                      {"wall_seconds", wall_seconds}};
  if (validation) j["validation"] = validation->to_json();
  return j;
}

std::filesystem::path checkpoint_name(const std::filesystem::path& dir, long step) {
  std::ostringstream os;
  os << "step_" << std::setw(8) << std::setfill('0') << step << ".ckpt";
  return dir / os.str();
}

Mask entry_mask(const Manifest& set, std::size_t index, int h, int w, const MaskGenConfig& gen) {
  const auto& e = set.entries.at(index);
  if (!e.mask_file.empty()) {
    Mask m = load_mask(set.mask_path(e));
    if (m.height != h || m.width != w) {
      throw DatasetError(e.mask_file + ": mask size does not match " + e.crop_file);
    }
    return m;
  }
  MaskGenConfig g = gen.scaled_for(h, w);
  g.seed = splitmix(gen.seed ^ splitmix(index));
  return generate_irregular_mask(h, w, g);
}

namespace {

struct Sample {
  Image image;
  Mask mask;
  Image coarse;
};

CoarseConfig coarse_for(const CoarseConfig& base, const std::filesystem::path& external_dir,
                        const ManifestEntry& e) {
  CoarseConfig c = base;
  if (c.backend == CoarseBackend::kExternalFile) c.external_path = external_dir / e.crop_file;
  return c;
}

std::filesystem::path cache_file(const TrainConfig& cfg, const ManifestEntry& e, const Mask& mask) {
  std::uint64_t h = fnv1a(e.crop_file, 0xCBF29CE484222325ULL);
  h = fnv1a(mask.data.data(), mask.data.size(), h);
  h = fnv1a(to_string(cfg.coarse.upscale) + "/" + to_string(cfg.coarse.backend) + "/" +
                std::to_string(cfg.coarse.working_size),
            h);
  std::ostringstream os;
  os << std::filesystem::path(e.crop_file).stem().string() << '_' << std::hex << std::setw(16) << std::setfill('0')
     << h << ".f32";
  return cfg.coarse_cache_dir / os.str();
}

constexpr char kCacheMagic[8] = {'H', 'R', 'C', 'O', 'A', 'R', 'S', '1'};

std::optional<Image> read_cached(const std::filesystem::path& p, int h, int w) {
  std::ifstream f(p, std::ios::binary);
  if (!f) return std::nullopt;
  char magic[8];
  std::int32_t dims[3];
  f.read(magic, 8);
  f.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (!f || std::memcmp(magic, kCacheMagic, 8) != 0 || dims[0] != h || dims[1] != w || dims[2] != 3) {
    return std::nullopt;
  }
  Image img(h, w, 3);
  f.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size() * sizeof(float)));
  if (!f) return std::nullopt;
  return img;
}

void write_cached(const std::filesystem::path& p, const Image& img) {
  std::filesystem::create_directories(p.parent_path());
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write coarse cache " + tmp);
    const std::int32_t dims[3] = {img.height, img.width, img.channels};
    f.write(kCacheMagic, 8);
    f.write(reinterpret_cast<const char*>(dims), sizeof dims);
    f.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size() * sizeof(float)));
    if (!f) throw IoError("cannot write coarse cache " + tmp);
  }
  std::filesystem::rename(tmp, p);
}

Sample load_sample(const TrainConfig& cfg, const Manifest& set, std::size_t i) {
  const auto& e = set.entries[i];
  Sample s;
  s.image = to_rgb(load_image(set.crop_path(e)));
  if (s.image.height < cfg.patch_size || s.image.width < cfg.patch_size) {
    throw DatasetError(e.crop_file + " is smaller than the training patch");
  }
  s.mask = entry_mask(set, i, s.image.height, s.image.width, cfg.masks);
  const bool use_cache = !cfg.coarse_cache_dir.empty();
  const auto path = use_cache ? cache_file(cfg, e, s.mask) : std::filesystem::path{};
  if (use_cache && !cfg.recompute_coarse) {
    if (auto c = read_cached(path, s.image.height, s.image.width)) {
      s.coarse = std::move(*c);
      return s;
    }
  }
  s.coarse = coarse_fill(s.image, s.mask, coarse_for(cfg.coarse, cfg.external_coarse_dir, e)).filled_full;
  if (use_cache) write_cached(path, s.coarse);
  return s;
}

void write_tensor_sample(Tensor<float>& dst, int b, const Tensor<double>& src, double scale) {
  float* out = dst.sample(b);
  for (std::size_t k = 0; k < src.size(); ++k) out[k] = static_cast<float>(src.data[k] * scale);
}

}  // namespace

std::vector<TrainRecord> train(const TrainConfig& cfg, const Manifest& train_set, const Manifest* val_set,
                               TrainState& state, const FeatureExtractor& fx,
                               const std::function<void(const TrainRecord&)>& on_record) {
  cfg.validate();
  if (train_set.entries.empty()) throw DatasetError("training manifest is empty");
  if (val_set != nullptr && val_set->entries.empty()) throw ValidationError("validation manifest is empty");
  require(state.model.config().input_channels == kStackChannels, "refiner must take the 20-channel stack");
  require(cfg.patch_size % state.model.config().grid() == 0,
          "patch_size must be a multiple of " + std::to_string(state.model.config().grid()));

  state.optimizer.set_config(cfg.adam);
  std::vector<TrainRecord> records;
  if (state.step >= cfg.max_steps) return records;

  std::vector<Sample> samples;
  samples.reserve(train_set.entries.size());
  for (std::size_t i = 0; i < train_set.entries.size(); ++i) samples.push_back(load_sample(cfg, train_set, i));
  std::vector<PatchSampler> samplers;
  samplers.reserve(samples.size());
  for (const auto& s : samples) samplers.emplace_back(s.mask);

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    if (cfg.log_path.has_parent_path()) std::filesystem::create_directories(cfg.log_path.parent_path());
    log.open(cfg.log_path, std::ios::app);
    if (!log) throw IoError("cannot open training log " + cfg.log_path.string());
  }
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

  ValidateOptions vopts{cfg.coarse, cfg.shift_fraction, cfg.external_coarse_dir, cfg.masks};
  std::mt19937_64 rng = make_rng(cfg.seed, static_cast<std::uint64_t>(state.step));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  const auto t0 = std::chrono::steady_clock::now();
  const int B = cfg.batch_size;
  const int P = cfg.patch_size;

  while (state.step < cfg.max_steps) {
    TrainRecord rec;
    rec.step = state.step;
    std::vector<ShiftStack> patches;
    std::vector<Image> truths;
    std::vector<Mask> holes;
    std::size_t misses = 0;
    while (static_cast<int>(patches.size()) < B) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::size_t i = order[cursor++];
      PatchSpec spec;
      try {
        spec = samplers[i].sample(P, rng);
      } catch (const SamplingExhausted& e) {
        ++rec.skipped;
        std::cerr << "step " << state.step << ": skipped " << train_set.entries[i].crop_file << ": " << e.what()
                  << '\n';
        if (++misses >= samples.size()) {
          throw TrainingError("patch sampling failed for every training sample");
        }
        continue;
      }
      misses = 0;
      const Sample& s = samples[i];
      const ShiftStack full = assemble_stack(s.coarse, s.mask, cfg.shift_fraction);
      patches.push_back(extract_patch(full, spec));
      truths.push_back(crop(s.image, spec.top, spec.left, P, P));
      holes.push_back(crop(s.mask, spec.top, spec.left, P, P));
    }
    rec.batch = B;

    const Tensor<float> x = stacks_to_tensor(patches);
    RefinerModel::Tape tape;
    const Tensor<float> y = state.model.forward_train(x, tape);
    Tensor<float> grad(B, y.c, y.h, y.w);
    for (int b = 0; b < B; ++b) {
      Tensor<double> g;
      const LossReport r = total_loss(fx, y.slice(b, 1).cast<double>(), to_planar(truths[b]), holes[b],
                                      cfg.weights, &g, cfg.layer_normalization);
      rec.loss.tv += r.tv / B;
      rec.loss.l1 += r.l1 / B;
      rec.loss.perceptual += r.perceptual / B;
      rec.loss.style += r.style / B;
      rec.loss.total += r.total / B;
      write_tensor_sample(grad, b, g, 1.0 / B);
    }
    if (!std::isfinite(rec.loss.total)) {
      const auto dir = cfg.checkpoint_dir.empty() ? std::filesystem::temp_directory_path() : cfg.checkpoint_dir;
      const auto diag = dir / ("nan_step_" + std::to_string(state.step) + ".ckpt");
      save_checkpoint(state.model, &state.optimizer, state.step, diag);
      throw TrainingError("non-finite loss at step " + std::to_string(state.step) + "; diagnostic checkpoint " +
                          diag.string());
    }

    state.model.zero_grad();
    state.model.backward(tape, std::move(grad));
    const auto params = state.model.parameters();
    state.optimizer.step(params);
    ++state.step;

    if (val_set != nullptr && cfg.validation_interval > 0 && state.step % cfg.validation_interval == 0) {
      rec.validation = validate(state.model, *val_set, vopts);
    }
    if (!cfg.checkpoint_dir.empty() && cfg.checkpoint_interval > 0 && state.step % cfg.checkpoint_interval == 0) {
      save_checkpoint(state.model, &state.optimizer, state.step, checkpoint_name(cfg.checkpoint_dir, state.step));
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log) log << rec.to_json().dump() << '\n' << std::flush;
    if (on_record) on_record(rec);
    records.push_back(std::move(rec));
  }
  if (!cfg.checkpoint_dir.empty()) {
    save_checkpoint(state.model, &state.optimizer, state.step, cfg.checkpoint_dir / "final.ckpt");
  }
  return records;
}

ValidationSummary validate(const RefinerModel& model, const Manifest& set, const ValidateOptions& opts) {
  if (set.entries.empty()) throw ValidationError("validation manifest is empty");
  InpaintOptions io;
  io.shift_fraction = opts.shift_fraction;
  ValidationSummary s;
  for (std::size_t i = 0; i < set.entries.size(); ++i) {
    const auto& e = set.entries[i];
    const Image ref = to_rgb(load_image(set.crop_path(e)));
    const Mask mask = entry_mask(set, i, ref.height, ref.width, opts.masks);
    io.coarse = coarse_for(opts.coarse, opts.external_coarse_dir, e);
    const Image out = inpaint(model, ref, mask, io);
    s.l1_8bit += mean_l1_8bit(out, ref);
    s.psnr_db += psnr(out, ref);
    s.ssim += ssim(out, ref);
    ++s.images;
    if (mask.hole_count() > 0) {
      s.hole_l1_8bit += mean_l1_8bit_masked(out, ref, mask);
      s.hole_psnr_db += psnr_masked(out, ref, mask);
      s.hole_ssim += ssim_masked(out, ref, mask);
      ++s.hole_images;
    }
  }
  s.l1_8bit /= s.images;
  s.psnr_db /= s.images;
  s.ssim /= s.images;
  if (s.hole_images > 0) {
    s.hole_l1_8bit /= s.hole_images;
    s.hole_psnr_db /= s.hole_images;
    s.hole_ssim /= s.hole_images;
  }
  return s;
}

}  // namespace hires
