#include "hires/service.hpp"

#include <httplib.h>
#include <openssl/rand.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

#include <nlohmann/json.hpp>

#include "hires/checkpoint.hpp"
#include "hires/errors.hpp"

namespace hires {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

void ServiceConfig::validate() const {
  require(port >= 0 && port <= 65535, "service: port out of range");
  require(max_pixels > 0, "service: max_pixels must be positive");
  require(session_ttl.count() > 0, "service: session ttl must be positive");
  require(threads >= 0, "service: threads must be >= 0");
  inpaint.coarse.validate();
}

int thread_budget(int requested) {
  int n = requested > 0 ? requested : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("HIRES_INPAINT_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && cap >= 1) n = std::min<long>(n, cap);
  }
  return n;
}

namespace {

struct LoadedModel {
  RefinerModel model;
  std::string id;
};

struct Session {
  std::mutex mu;
  Image source;
  std::optional<Mask> last_mask;
  std::optional<Image> last_result;
  Clock::time_point created;
  Clock::time_point touched;
  std::atomic<bool> busy{false};
};

std::string random_token() {
  unsigned char raw[16];
  if (RAND_bytes(raw, sizeof raw) != 1) throw Error("session id: entropy source failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char b : raw) {
    out += kHex[b >> 4];
    out += kHex[b & 15];
  }
  return out;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& msg) {
  send_json(res, status, {{"error", msg}});
}

const std::uint8_t* as_bytes(const std::string& s) { return reinterpret_cast<const std::uint8_t*>(s.data()); }

class BusyGuard {
 public:
  explicit BusyGuard(std::atomic<bool>& flag) : flag_(flag) {}
  ~BusyGuard() { flag_.store(false); }
  BusyGuard(const BusyGuard&) = delete;
  BusyGuard& operator=(const BusyGuard&) = delete;

 private:
  std::atomic<bool>& flag_;
};

}  // namespace

struct Service::Impl {
  ServiceConfig cfg;
  httplib::Server server;
  std::thread thread;
  int bound_port = -1;
  Clock::time_point started = Clock::now();

  mutable std::mutex model_mu;
  std::shared_ptr<const LoadedModel> model;

  mutable std::mutex sessions_mu;
  std::map<std::string, std::shared_ptr<Session>> sessions;

  std::shared_ptr<const LoadedModel> current_model() const {
    std::lock_guard lock(model_mu);
    return model;
  }

  std::shared_ptr<Session> find(const std::string& id) {
    purge();
    std::lock_guard lock(sessions_mu);
    auto it = sessions.find(id);
    if (it == sessions.end()) return nullptr;
    it->second->touched = Clock::now();
    return it->second;
  }

  std::size_t purge() {
    const auto now = Clock::now();
    std::lock_guard lock(sessions_mu);
    return std::erase_if(sessions, [&](const auto& kv) {
      return !kv.second->busy.load() && now - kv.second->touched > cfg.session_ttl;
    });
  }

  void routes();
  void upload(const httplib::Request& req, httplib::Response& res);
  void run_inpaint(const httplib::Request& req, httplib::Response& res);
  void promote(const httplib::Request& req, httplib::Response& res);
  void health(httplib::Response& res) const;
};

void Service::Impl::upload(const httplib::Request& req, httplib::Response& res) {
  if (!req.has_file("image")) return send_error(res, 400, "missing multipart field 'image'");
  const auto part = req.get_file_value("image");
  std::pair<int, int> dims;
  try {
    dims = probe_dimensions(as_bytes(part.content), part.content.size());
  } catch (const Error&) {
    return send_error(res, 415, "undecodable image");
  }
  if (static_cast<std::int64_t>(dims.first) * dims.second > cfg.max_pixels) {
    return send_error(res, 413, "image exceeds " + std::to_string(cfg.max_pixels) + " pixels");
  }
  Image img;
  try {
    img = to_rgb(decode_image(as_bytes(part.content), part.content.size()));
  } catch (const Error&) {
    return send_error(res, 415, "undecodable image");
  }
  auto s = std::make_shared<Session>();
  s->source = std::move(img);
  s->created = s->touched = Clock::now();
  const int h = s->source.height;
  const int w = s->source.width;
  std::string id = random_token();
  purge();
  {
    std::lock_guard lock(sessions_mu);
    sessions.emplace(id, std::move(s));
  }
  send_json(res, 200, {{"session_id", id}, {"width", w}, {"height", h}});
}

void Service::Impl::run_inpaint(const httplib::Request& req, httplib::Response& res) {
  auto session = find(req.matches[1].str());
  if (!session) return send_error(res, 404, "unknown session");
  const auto loaded = current_model();
  if (!loaded) return send_error(res, 503, "no model loaded");
  if (!req.has_file("mask")) return send_error(res, 400, "missing multipart field 'mask'");

  InpaintOptions opts = cfg.inpaint;
  try {
    if (req.has_file("options")) {
      const json o = json::parse(req.get_file_value("options").content);
      if (o.contains("coarse_backend")) opts.coarse.backend = parse_backend(o.at("coarse_backend").get<std::string>());
      if (o.contains("shift_fraction")) opts.shift_fraction = o.at("shift_fraction").get<double>();
    }
    require(opts.shift_fraction > 0.0 && opts.shift_fraction < 0.5, "shift_fraction must be in (0, 0.5)");
  } catch (const std::exception& e) {
    return send_error(res, 400, std::string("bad options: ") + e.what());
  }

  Mask mask;
  try {
    const auto part = req.get_file_value("mask");
    mask = decode_mask(as_bytes(part.content), part.content.size());
  } catch (const Error&) {
    return send_error(res, 400, "undecodable mask");
  }

  bool expected = false;
  if (!session->busy.compare_exchange_strong(expected, true)) {
    return send_error(res, 409, "an inpaint request is already running for this session");
  }
  BusyGuard guard(session->busy);
  Image source;
  {
    std::lock_guard lock(session->mu);
    source = session->source;
  }
  if (mask.height != source.height || mask.width != source.width) {
    return send_error(res, 409, "mask is " + std::to_string(mask.width) + "x" + std::to_string(mask.height) +
                                    ", source is " + std::to_string(source.width) + "x" +
                                    std::to_string(source.height));
  }

  struct TempFile {
    std::filesystem::path path;
    ~TempFile() {
      std::error_code ec;
      if (!path.empty()) std::filesystem::remove(path, ec);
    }
  } temp;
  if (opts.coarse.backend == CoarseBackend::kExternalFile) {
    if (!req.has_file("coarse")) return send_error(res, 400, "external coarse backend needs a 'coarse' part");
    temp.path = std::filesystem::temp_directory_path() / ("hires-coarse-" + random_token() + ".bin");
    std::ofstream(temp.path, std::ios::binary) << req.get_file_value("coarse").content;
    opts.coarse.external_path = temp.path;
  }

  Image result;
  try {
    result = inpaint(loaded->model, source, mask, opts);
  } catch (const BackendError& e) {
    return send_error(res, 400, e.what());
  } catch (const ContractError& e) {
    return send_error(res, 400, e.what());
  }
  const auto png = encode_png(result);
  {
    std::lock_guard lock(session->mu);
    session->last_mask = std::move(mask);
    session->last_result = std::move(result);
  }
  res.status = 200;
  res.set_content(std::string(png.begin(), png.end()), "image/png");
}

void Service::Impl::promote(const httplib::Request& req, httplib::Response& res) {
  auto session = find(req.matches[1].str());
  if (!session) return send_error(res, 404, "unknown session");
  if (session->busy.load()) return send_error(res, 409, "an inpaint request is running for this session");
  std::lock_guard lock(session->mu);
  if (!session->last_result) return send_error(res, 409, "no result to promote");
  session->source = *session->last_result;
  session->last_result.reset();
  session->last_mask.reset();
  send_json(res, 200, {{"session_id", req.matches[1].str()},
                       {"width", session->source.width},
                       {"height", session->source.height}});
}

void Service::Impl::health(httplib::Response& res) const {
  const auto loaded = current_model();
  const double uptime = std::chrono::duration<double>(Clock::now() - started).count();
  send_json(res, 200,
            {{"status", loaded ? "ok" : "degraded"},
             {"checkpoint_id", loaded ? json(loaded->id) : json(nullptr)},
             {"uptime_seconds", uptime}});
}

void Service::Impl::routes() {
  server.set_post_routing_handler([this](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", cfg.cors_origin);
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  });
  server.Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Post("/api/v1/images", [this](const httplib::Request& req, httplib::Response& res) { upload(req, res); });
  server.Post(R"(/api/v1/sessions/([0-9a-f]+)/inpaint)",
              [this](const httplib::Request& req, httplib::Response& res) { run_inpaint(req, res); });
  server.Post(R"(/api/v1/sessions/([0-9a-f]+)/promote)",
              [this](const httplib::Request& req, httplib::Response& res) { promote(req, res); });
  server.Get("/api/v1/health", [this](const httplib::Request&, httplib::Response& res) { health(res); });
  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    } catch (...) {
      send_error(res, 500, "internal error");
    }
  });
  if (!cfg.static_dir.empty()) {
    if (!server.set_mount_point("/", cfg.static_dir.string())) {
      throw IoError("service: static directory not found: " + cfg.static_dir.string());
    }
  }
  const int workers = thread_budget(cfg.threads);
  server.new_task_queue = [workers] { return new httplib::ThreadPool(static_cast<std::size_t>(workers)); };
}

Service::Service(ServiceConfig cfg) : impl_(std::make_unique<Impl>()) {
  cfg.validate();
  impl_->cfg = std::move(cfg);
  impl_->routes();
  if (!impl_->cfg.checkpoint.empty()) load_checkpoint(impl_->cfg.checkpoint);
}

Service::~Service() { stop(); }

void Service::load_checkpoint(const std::filesystem::path& path) {
  LoadedCheckpoint ck = hires::load_checkpoint(path);
  set_model(std::move(ck.model), file_sha256(path));
}

void Service::set_model(RefinerModel model, std::string checkpoint_id) {
  auto next = std::make_shared<const LoadedModel>(LoadedModel{std::move(model), std::move(checkpoint_id)});
  std::lock_guard lock(impl_->model_mu);
  impl_->model = std::move(next);
}

bool Service::has_model() const { return impl_->current_model() != nullptr; }

int Service::bind() {
  if (impl_->bound_port >= 0) return impl_->bound_port;
  const auto& c = impl_->cfg;
  if (c.port == 0) {
    impl_->bound_port = impl_->server.bind_to_any_port(c.host);
  } else {
    impl_->bound_port = impl_->server.bind_to_port(c.host, c.port) ? c.port : -1;
  }
  if (impl_->bound_port < 0) {
    throw IoError("service: cannot bind " + c.host + ":" + std::to_string(c.port));
  }
  return impl_->bound_port;
}

void Service::start() {
  bind();
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void Service::run() {
  bind();
  impl_->server.listen_after_bind();
}

void Service::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int Service::port() const { return impl_->bound_port; }

std::size_t Service::session_count() const {
  std::lock_guard lock(impl_->sessions_mu);
  return impl_->sessions.size();
}

std::size_t Service::purge_expired() { return impl_->purge(); }

}  // namespace hires
