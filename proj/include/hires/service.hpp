#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "hires/refiner.hpp"

namespace hires {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks an ephemeral port
  std::filesystem::path checkpoint;
  /// Served at "/" when set (the web UI bundle).
  std::filesystem::path static_dir;
  std::int64_t max_pixels = 32'000'000;
  std::chrono::seconds session_ttl{1800};
  InpaintOptions inpaint;
  std::string cors_origin = "*";
  /// HTTP worker threads; 0 uses the HIRES_INPAINT_THREADS cap or the hardware count.
  int threads = 0;

  void validate() const;
};

/// REST facade over the inpainting pipeline.
///
///   POST /api/v1/images                  multipart "image"        -> {session_id, width, height}
///   POST /api/v1/sessions/{id}/inpaint   multipart "mask" [+ "options" JSON, "coarse"] -> PNG
///   POST /api/v1/sessions/{id}/promote   last result becomes the source
///   GET  /api/v1/health                  {status, checkpoint_id, uptime_seconds}
class Service {
 public:
  explicit Service(ServiceConfig cfg);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Replaces the model atomically; in-flight requests finish on the old one.
  void load_checkpoint(const std::filesystem::path& path);
  void set_model(RefinerModel model, std::string checkpoint_id);
  [[nodiscard]] bool has_model() const;

  /// Binds the listening socket and returns the port.
  int bind();
  /// Serves on a background thread; bind() is called if needed.
  void start();
  /// Serves on the calling thread until stop().
  void run();
  void stop();
  [[nodiscard]] int port() const;

  [[nodiscard]] std::size_t session_count() const;
  /// Drops sessions idle for longer than the configured ttl.
  std::size_t purge_expired();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Worker count honouring HIRES_INPAINT_THREADS.
int thread_budget(int requested = 0);

}  // namespace hires
