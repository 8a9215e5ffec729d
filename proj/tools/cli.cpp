#include "cli.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hires/coarse.hpp"
#include "hires/dataset.hpp"
#include "hires/errors.hpp"
#include "hires/metrics.hpp"
#include "hires/ranking.hpp"
#include "hires/refiner.hpp"
#include "hires/service.hpp"
#include "hires/trainer.hpp"

namespace hires::cli {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

/// Flat JSON object mapping long flag names (without dashes) of the chosen
/// subcommand to values.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* root) : root_(root) {}

  std::string to_config(const CLI::App* app, bool, bool, std::string) const override {
    return resolved(*app).dump();
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<std::string> parents;
    for (const CLI::App* sub : root_->get_subcommands()) parents.push_back(sub->get_name());
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(key, v));
      } else {
        item.inputs.push_back(scalar(key, value));
      }
      items.push_back(std::move(item));
    }
    return items;
  }

  static json resolved(const CLI::App& app) {
    json out = json::object();
    for (const CLI::Option* opt : app.get_options()) {
      if (opt->get_lnames().empty()) continue;
      const std::string name = opt->get_lnames().front();
      if (name == "help" || name == "config") continue;
      const auto& results = opt->results();
      if (results.empty()) {
        const std::string def = opt->get_default_str();
        out[name] = def.empty() ? json(nullptr) : json(def);
      } else if (results.size() == 1) {
        out[name] = results.front();
      } else {
        out[name] = results;
      }
    }
    return out;
  }

 private:
  static std::string scalar(const std::string& key, const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw CLI::ConversionError("config key '" + key + "' must be a scalar or a list of scalars");
  }

  const CLI::App* root_;
};

void add_config(CLI::App* sub) {
  // --config itself belongs to the root app.
  sub->fallthrough();
  sub->footer("  --config FILE               JSON object of the flags above; explicit flags take precedence");
}

const CLI::Range kShiftRange(0.0, 0.5);
const CLI::IsMember kBackends({"builtin_pyramid", "builtin", "external_file", "external"});

struct CoarseFlags {
  std::string backend = "builtin_pyramid";
  std::string external;
  int working_size = 512;
  std::string upscale = "bilinear";

  void add(CLI::App* sub, bool with_external_file) {
    sub->add_option("--backend", backend, "Stage-one backend: builtin_pyramid or external_file")
        ->check(kBackends)
        ->capture_default_str();
    if (with_external_file) sub->add_option("--external", external, "Precomputed stage-one raster");
    sub->add_option("--working-size", working_size, "Stage-one working resolution")
        ->check(CLI::Range(64, 1 << 16))
        ->capture_default_str();
    sub->add_option("--upscale", upscale, "Stage-one upscaling: nearest or bilinear")
        ->check(CLI::IsMember({"nearest", "bilinear"}))
        ->capture_default_str();
  }

  [[nodiscard]] CoarseConfig build() const {
    CoarseConfig c;
    c.backend = parse_backend(backend);
    c.external_path = external;
    c.working_size = working_size;
    c.upscale = parse_upscale(upscale);
    c.validate();
    return c;
  }
};

Manifest open_manifest(const fs::path& p) {
  if (fs::is_directory(p)) {
    if (fs::exists(p / "manifest.json")) return load_manifest(p / "manifest.json");
    return manifest_from_directory(p);
  }
  return load_manifest(p);
}

Service* g_service = nullptr;

extern "C" void stop_service(int) {
  if (g_service != nullptr) g_service->stop();
}

std::pair<std::string, int> split_addr(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw ContractError("--addr must be host:port");
  const std::string port = addr.substr(colon + 1);
  std::size_t used = 0;
  int p = -1;
  try {
    p = std::stoi(port, &used);
  } catch (const std::exception&) {
  }
  if (used != port.size() || p < 0 || p > 65535) throw ContractError("--addr has an invalid port: " + port);
  return {addr.substr(0, colon), p};
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage high-resolution image inpainting", "hires-inpaint"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "hires-inpaint 1.0.0");
  app.set_config("--config", "", "JSON file of flag values; explicit flags take precedence");
  app.config_formatter(std::make_shared<JsonConfig>(&app));
  app.allow_config_extras(CLI::config_extras_mode::error);
  std::function<void()> action;

  // prepare-data
  auto* prep = app.add_subcommand("prepare-data", "Cut square training crops and generate hole masks");
  add_config(prep);
  std::string prep_in, prep_out;
  DatasetOptions prep_opts;
  bool prep_no_masks = false;
  prep->add_option("--input", prep_in, "Directory of source images")->required();
  prep->add_option("--out", prep_out, "Output directory for crops, masks and manifest.json")->required();
  prep->add_option("--squares-per-image", prep_opts.squares_per_image, "Random square crops per source")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  prep->add_option("--working-size", prep_opts.working_size, "Crop side after resizing (0 keeps native)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  prep->add_option("--seed", prep_opts.seed, "Random seed")->capture_default_str();
  prep->add_flag("--no-masks", prep_no_masks, "Do not generate hole masks");
  prep->callback([&] {
    action = [&] {
      if (!prep_no_masks) {
        MaskGenConfig mg;
        mg.seed = prep_opts.seed;
        prep_opts.masks = mg;
      }
      const Manifest m = prepare_dataset(prep_in, prep_out, prep_opts);
      out << "wrote " << m.entries.size() << " crops to " << prep_out << "\n";
    };
  });

  // coarse
  auto* coarse = app.add_subcommand("coarse", "Run stage one only and write the coarse result and shift stack");
  add_config(coarse);
  std::string co_image, co_mask, co_out, co_stack;
  double co_shift = kDefaultShiftFraction;
  CoarseFlags co_flags;
  coarse->add_option("--image", co_image, "Source image")->required();
  coarse->add_option("--mask", co_mask, "Mask (white = known, black = hole)")->required();
  coarse->add_option("--out", co_out, "Coarse result image")->required();
  coarse->add_option("--stack-dir", co_stack, "Directory for the 20-channel shift stack");
  coarse->add_option("--shift-fraction", co_shift, "Shift as a fraction of the image side")
      ->check(kShiftRange)
      ->capture_default_str();
  co_flags.add(coarse, true);
  coarse->callback([&] {
    action = [&] {
      const Image img = to_rgb(load_image(co_image));
      const Mask mask = load_mask(co_mask);
      const CoarseResult r = coarse_fill(img, mask, co_flags.build());
      save_image(r.filled_full, co_out);
      if (!co_stack.empty()) save_stack(assemble_stack(r.filled_full, mask, co_shift), co_stack, img.height, img.width);
      out << "wrote " << co_out << "\n";
    };
  });

  // train
  auto* tr = app.add_subcommand("train", "Train the refinement network");
  add_config(tr);
  std::string tr_train, tr_val, tr_preset = "desk", tr_resume, tr_features, tr_ckdir, tr_log, tr_extdir, tr_cache;
  std::optional<long> tr_steps, tr_val_every, tr_ck_every;
  std::optional<int> tr_batch, tr_patch, tr_working;
  std::optional<double> tr_lr, tr_shift;
  std::optional<std::string> tr_backend;
  std::uint64_t tr_seed = 0;
  bool tr_recompute = false;
  std::vector<int> tr_channels, tr_kernels;
  tr->add_option("--train", tr_train, "Training manifest (file or prepared directory)")->required();
  tr->add_option("--val", tr_val, "Validation manifest");
  tr->add_option("--preset", tr_preset, "Base settings: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}))
      ->capture_default_str();
  tr->add_option("--steps", tr_steps, "Absolute step count to train to")->check(CLI::NonNegativeNumber);
  tr->add_option("--batch-size", tr_batch, "Patches per step")->check(CLI::PositiveNumber);
  tr->add_option("--patch-size", tr_patch, "Patch side in pixels")->check(CLI::PositiveNumber);
  tr->add_option("--lr", tr_lr, "Adam learning rate")->check(CLI::PositiveNumber);
  tr->add_option("--seed", tr_seed, "Seed for initialization and sampling")->capture_default_str();
  tr->add_option("--checkpoint-dir", tr_ckdir, "Directory for checkpoints");
  tr->add_option("--log", tr_log, "NDJSON training log");
  tr->add_option("--validation-interval", tr_val_every, "Steps between validations (0 = never)")
      ->check(CLI::NonNegativeNumber);
  tr->add_option("--checkpoint-interval", tr_ck_every, "Steps between checkpoints (0 = final only)")
      ->check(CLI::NonNegativeNumber);
  tr->add_option("--resume", tr_resume, "Checkpoint to continue from");
  tr->add_option("--features", tr_features, "Feature extractor weights for the perceptual and style losses");
  tr->add_option("--coarse-backend", tr_backend, "Stage-one backend: builtin_pyramid or external_file")
      ->check(kBackends);
  tr->add_option("--external-coarse-dir", tr_extdir, "Stage-one rasters named like the crops");
  tr->add_option("--coarse-cache-dir", tr_cache, "Cache directory for stage-one results");
  tr->add_flag("--recompute-coarse", tr_recompute, "Ignore cached stage-one results");
  tr->add_option("--working-size", tr_working, "Stage-one working resolution")->check(CLI::Range(64, 1 << 16));
  tr->add_option("--shift-fraction", tr_shift, "Shift as a fraction of the image side")->check(kShiftRange);
  tr->add_option("--channels", tr_channels, "Encoder channel counts for a fresh model");
  tr->add_option("--kernels", tr_kernels, "Encoder kernel sizes for a fresh model");
  tr->callback([&] {
    action = [&] {
      TrainConfig cfg = TrainConfig::preset(tr_preset);
      if (tr_steps) cfg.max_steps = *tr_steps;
      if (tr_batch) cfg.batch_size = *tr_batch;
      if (tr_patch) cfg.patch_size = *tr_patch;
      if (tr_lr) cfg.adam.learning_rate = *tr_lr;
      if (tr_val_every) cfg.validation_interval = *tr_val_every;
      if (tr_ck_every) cfg.checkpoint_interval = *tr_ck_every;
      if (tr_backend) cfg.coarse.backend = parse_backend(*tr_backend);
      if (tr_working) cfg.coarse.working_size = *tr_working;
      if (tr_shift) cfg.shift_fraction = *tr_shift;
      cfg.seed = tr_seed;
      cfg.masks.seed = tr_seed;
      cfg.checkpoint_dir = tr_ckdir;
      cfg.log_path = tr_log;
      cfg.external_coarse_dir = tr_extdir;
      cfg.coarse_cache_dir = tr_cache;
      cfg.recompute_coarse = tr_recompute;
      cfg.validate();
      err << "train config: " << cfg.to_json().dump() << "\n";

      const Manifest train_set = open_manifest(tr_train);
      std::optional<Manifest> val_set;
      if (!tr_val.empty()) val_set = open_manifest(tr_val);

      TrainState state;
      if (!tr_resume.empty()) {
        LoadedCheckpoint ck = load_checkpoint(tr_resume);
        state.model = std::move(ck.model);
        if (ck.optimizer) state.optimizer = std::move(*ck.optimizer);
        state.step = ck.training_step;
      } else {
        RefinerConfig rc;
        if (!tr_channels.empty()) rc.encoder_channels = tr_channels;
        if (!tr_kernels.empty()) rc.encoder_kernel_sizes = tr_kernels;
        state.model = init_model(rc, tr_seed);
      }
      const FeatureExtractor fx = tr_features.empty() ? FeatureExtractor{} : FeatureExtractor::load(tr_features);
      const auto records = train(cfg, train_set, val_set ? &*val_set : nullptr, state, fx,
                                 [&](const TrainRecord& r) { out << r.to_json().dump() << "\n"; });
      out << "trained to step " << state.step << " (" << records.size() << " steps this run)\n";
    };
  });

  // inpaint
  auto* inp = app.add_subcommand("inpaint", "Fill the holes of one image");
  add_config(inp);
  std::string in_image, in_mask, in_out, in_ckpt;
  InpaintOptions in_opts;
  CoarseFlags in_flags;
  inp->add_option("--image", in_image, "Source image")->required();
  inp->add_option("--mask", in_mask, "Mask (white = known, black = hole)")->required();
  inp->add_option("--out", in_out, "Output image")->required();
  inp->add_option("--checkpoint", in_ckpt, "Refiner checkpoint")->required();
  inp->add_option("--max-side", in_opts.max_side, "Cap the longer processing side (0 = off)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  inp->add_option("--shift-fraction", in_opts.shift_fraction, "Shift as a fraction of the image side")
      ->check(kShiftRange)
      ->capture_default_str();
  in_flags.add(inp, true);
  inp->callback([&] {
    action = [&] {
      in_opts.coarse = in_flags.build();
      const LoadedCheckpoint ck = load_checkpoint(in_ckpt);
      const Image img = load_image(in_image);
      const Mask mask = load_mask(in_mask);
      save_image(inpaint(ck.model, img, mask, in_opts), in_out);
      out << "wrote " << in_out << "\n";
    };
  });

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Objective metrics of predictions against references");
  add_config(ev);
  std::string ev_pred, ev_ref, ev_masks, ev_csv;
  EvaluateOptions ev_opts;
  ev->add_option("--pred", ev_pred, "Directory of predicted images")->required();
  ev->add_option("--ref", ev_ref, "Directory of reference images")->required();
  ev->add_option("--masks", ev_masks, "Directory of masks for hole-region rows");
  ev->add_option("--resolutions", ev_opts.resolutions, "Square evaluation sides (0 = native)");
  ev->add_option("--method", ev_opts.method, "Method label")->capture_default_str();
  ev->add_option("--csv", ev_csv, "Also write rows as CSV");
  ev->callback([&] {
    action = [&] {
      if (!ev_masks.empty()) ev_opts.mask_dir = fs::path(ev_masks);
      const auto rows = evaluate_pairs(ev_pred, ev_ref, ev_opts);
      out << format_table(rows);
      if (!ev_csv.empty()) {
        std::ofstream f(ev_csv);
        f << format_csv(rows);
        if (!f) throw IoError("cannot write " + ev_csv);
      }
    };
  });

  // rank-votes
  auto* rv = app.add_subcommand("rank-votes", "Bradley-Terry scores from pairwise votes");
  add_config(rv);
  std::string rv_votes;
  BradleyTerryOptions rv_opts;
  rv->add_option("--votes", rv_votes, "CSV of winner,loser[,count] lines")->required();
  rv->add_option("--smoothing", rv_opts.smoothing, "Pseudo-votes per direction of each compared pair")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  rv->add_option("--max-iter", rv_opts.max_iter, "Iteration limit")->check(CLI::PositiveNumber)->capture_default_str();
  rv->add_option("--tol", rv_opts.tol, "Convergence tolerance")->check(CLI::PositiveNumber)->capture_default_str();
  rv->callback([&] { action = [&] { out << format_scores(bradley_terry(load_votes(rv_votes), rv_opts)); }; });

  // serve
  auto* sv = app.add_subcommand("serve", "Run the HTTP inpainting service");
  add_config(sv);
  std::string sv_addr = "127.0.0.1:8080", sv_ckpt, sv_static;
  ServiceConfig sv_cfg;
  long sv_ttl = sv_cfg.session_ttl.count();
  CoarseFlags sv_flags;
  sv->add_option("--addr", sv_addr, "Listen address host:port")
      ->check(CLI::Validator(
          [](std::string& v) {
            try {
              split_addr(v);
            } catch (const Error& e) {
              return std::string(e.what());
            }
            return std::string();
          },
          "HOST:PORT"))
      ->capture_default_str();
  sv->add_option("--checkpoint", sv_ckpt, "Refiner checkpoint to load at start");
  sv->add_option("--static-dir", sv_static, "Web UI bundle served at /");
  sv->add_option("--max-pixels", sv_cfg.max_pixels, "Upload size limit in pixels")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sv->add_option("--session-ttl", sv_ttl, "Idle session lifetime in seconds")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sv->add_option("--threads", sv_cfg.threads, "HTTP worker threads (0 = automatic)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  sv->add_option("--cors-origin", sv_cfg.cors_origin, "Allowed CORS origin")->capture_default_str();
  sv->add_option("--max-side", sv_cfg.inpaint.max_side, "Cap the longer processing side (0 = off)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  sv->add_option("--shift-fraction", sv_cfg.inpaint.shift_fraction, "Default shift fraction")
      ->check(kShiftRange)
      ->capture_default_str();
  sv_flags.add(sv, false);
  sv->callback([&] {
    action = [&] {
      std::tie(sv_cfg.host, sv_cfg.port) = split_addr(sv_addr);
      sv_cfg.checkpoint = sv_ckpt;
      sv_cfg.static_dir = sv_static;
      sv_cfg.session_ttl = std::chrono::seconds(sv_ttl);
      sv_cfg.inpaint.coarse = sv_flags.build();
      Service service(sv_cfg);
      const int port = service.bind();
      out << "listening on " << sv_cfg.host << ":" << port << (service.has_model() ? "" : " (no model loaded)")
          << std::endl;
      g_service = &service;
      std::signal(SIGINT, stop_service);
      std::signal(SIGTERM, stop_service);
      service.run();
      g_service = nullptr;
    };
  });

  std::vector<std::string> argv_store{"hires-inpaint"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help("hires-inpaint"));
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion& e) {
    out << e.what() << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    for (const CLI::App* sub : app.get_subcommands()) {
      err << "resolved config: " << sub->get_name() << " " << JsonConfig::resolved(*sub).dump() << "\n";
    }
    if (action) action();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}

}  // namespace hires::cli
