#include <gtest/gtest.h>

#include <cstdlib>
#include <thread>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "hires/checkpoint.hpp"
#include "hires/service.hpp"

// After the Eigen headers: <resolv.h> defines a _res macro.
#include <httplib.h>

using namespace hires;
using json = nlohmann::json;

namespace {

RefinerModel small_model(std::uint64_t seed = 3) {
  RefinerConfig c;
  c.encoder_channels = {4, 6, 8};
  c.encoder_kernel_sizes = {3, 3, 3};
  return init_model(c, seed);
}

std::string png_of(const Image& img) {
  const auto bytes = encode_png(img);
  return {bytes.begin(), bytes.end()};
}

std::string png_of(const Mask& m) {
  const auto bytes = encode_mask_png(m);
  return {bytes.begin(), bytes.end()};
}

Image decode(const std::string& s) { return decode_image(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()); }

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override { start(ServiceConfig{}); }

  void start(ServiceConfig cfg, bool with_model = true) {
    if (client) client.reset();
    if (service) service->stop();
    cfg.port = 0;
    service = std::make_unique<Service>(cfg);
    if (with_model) service->set_model(small_model(), "test-model");
    service->start();
    client = std::make_unique<httplib::Client>("127.0.0.1", service->port());
    client->set_read_timeout(60, 0);
  }

  httplib::Result upload(const std::string& body, const std::string& field = "image") {
    return client->Post("/api/v1/images", httplib::MultipartFormDataItems{{field, body, "x.png", "image/png"}});
  }

  std::string open_session(const Image& img) {
    auto r = upload(png_of(img));
    EXPECT_TRUE(r && r->status == 200);
    return json::parse(r->body).at("session_id");
  }

  httplib::Result inpaint(const std::string& id, const Mask& mask, const std::string& options = "") {
    httplib::MultipartFormDataItems items{{"mask", png_of(mask), "m.png", "image/png"}};
    if (!options.empty()) items.push_back({"options", options, "", "application/json"});
    return client->Post("/api/v1/sessions/" + id + "/inpaint", items);
  }

  std::unique_ptr<Service> service;
  std::unique_ptr<httplib::Client> client;
};

}  // namespace

TEST_F(ServiceTest, UploadReturnsSessionWithDims) {
  auto r = upload(png_of(hires::testing::synthetic_image(512, 512, 1)));
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200) << r->body;
  const json j = json::parse(r->body);
  EXPECT_EQ(j.at("width"), 512);
  EXPECT_EQ(j.at("height"), 512);
  const std::string id = j.at("session_id");
  EXPECT_EQ(id.size(), 32u);  // 128 random bits, hex
  EXPECT_NE(id, json::parse(upload(png_of(hires::testing::synthetic_image(8, 8, 1)))->body).at("session_id"));
  EXPECT_EQ(r->get_header_value("Access-Control-Allow-Origin"), "*");
}

TEST_F(ServiceTest, OversizedAndUndecodableUploads) {
  // A PNG whose header claims 8000 x 5000 (40 MP).
  std::string big = png_of(hires::testing::synthetic_image(8, 8, 1));
  auto put_be32 = [&](std::size_t at, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) big[at + k] = static_cast<char>((v >> (24 - 8 * k)) & 0xff);
  };
  put_be32(16, 8000);
  put_be32(20, 5000);
  EXPECT_EQ(upload(big)->status, 413);
  EXPECT_EQ(upload("just some text, not an image")->status, 415);
  EXPECT_EQ(upload(png_of(hires::testing::synthetic_image(8, 8, 1)), "file")->status, 400);
}

TEST_F(ServiceTest, AllKnownMaskReturnsSourceExactly) {
  const Image img = hires::testing::synthetic_image(48, 40, 2);
  const std::string id = open_session(img);
  auto r = inpaint(id, Mask(48, 40, 1));
  ASSERT_EQ(r->status, 200) << r->body;
  EXPECT_EQ(r->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(decode(r->body), decode(png_of(img)));
}

TEST_F(ServiceTest, HoleMaskIsDeterministicAndKeepsKnownPixels) {
  const Image img = hires::testing::synthetic_image(64, 72, 3);
  const Mask mask = hires::testing::rect_mask(64, 72, 16, 20, 24, 24);
  const std::string id = open_session(img);
  auto a = inpaint(id, mask);
  auto b = inpaint(id, mask);
  ASSERT_EQ(a->status, 200) << a->body;
  ASSERT_EQ(b->status, 200);
  EXPECT_EQ(a->body, b->body);
  const Image out = decode(a->body);
  const Image src = decode(png_of(img));
  ASSERT_EQ(out.height, 64);
  ASSERT_EQ(out.width, 72);
  for (std::size_t p = 0; p < mask.data.size(); ++p) {
    if (!mask.data[p]) continue;
    for (int c = 0; c < 3; ++c) ASSERT_EQ(out.data[p * 3 + c], src.data[p * 3 + c]);
  }
  EXPECT_EQ(inpaint(id, mask, R"({"shift_fraction": 0.1, "coarse_backend": "builtin_pyramid"})")->status, 200);
  EXPECT_EQ(inpaint(id, mask, R"({"shift_fraction": 0.7})")->status, 400);
  EXPECT_EQ(inpaint(id, mask, R"({"coarse_backend": "external_file"})")->status, 400);
}

TEST_F(ServiceTest, ErrorStatuses) {
  const std::string id = open_session(hires::testing::synthetic_image(32, 32, 4));
  EXPECT_EQ(inpaint("0123456789abcdef0123456789abcdef", Mask(32, 32, 1))->status, 404);
  EXPECT_EQ(inpaint(id, Mask(16, 32, 1))->status, 409);
  EXPECT_EQ(client->Post("/api/v1/sessions/" + id + "/promote")->status, 409);

  start(ServiceConfig{}, false);
  const std::string id2 = open_session(hires::testing::synthetic_image(32, 32, 4));
  EXPECT_EQ(inpaint(id2, Mask(32, 32, 1))->status, 503);
}

TEST_F(ServiceTest, HealthReflectsModelState) {
  auto h = client->Get("/api/v1/health");
  ASSERT_EQ(h->status, 200);
  EXPECT_EQ(json::parse(h->body).at("status"), "ok");
  EXPECT_GE(json::parse(h->body).at("uptime_seconds").get<double>(), 0.0);

  start(ServiceConfig{}, false);
  h = client->Get("/api/v1/health");
  EXPECT_EQ(json::parse(h->body).at("status"), "degraded");
  EXPECT_TRUE(json::parse(h->body).at("checkpoint_id").is_null());

  hires::testing::TempDir dir("svc");
  save_checkpoint(small_model(5), nullptr, 0, dir / "m.ckpt");
  service->load_checkpoint(dir / "m.ckpt");
  h = client->Get("/api/v1/health");
  EXPECT_EQ(json::parse(h->body).at("status"), "ok");
  EXPECT_EQ(json::parse(h->body).at("checkpoint_id"), file_sha256(dir / "m.ckpt"));
}

TEST_F(ServiceTest, PromoteMakesResultTheSource) {
  const Image img = hires::testing::synthetic_image(40, 40, 6);
  const std::string id = open_session(img);
  auto first = inpaint(id, hires::testing::rect_mask(40, 40, 10, 10, 12, 12));
  ASSERT_EQ(first->status, 200);
  auto p = client->Post("/api/v1/sessions/" + id + "/promote");
  ASSERT_EQ(p->status, 200) << p->body;
  auto again = inpaint(id, Mask(40, 40, 1));
  EXPECT_EQ(decode(again->body), decode(first->body));
}

TEST_F(ServiceTest, ConcurrentSessionsDoNotInterfere) {
  const Image a = hires::testing::synthetic_image(64, 64, 7);
  const Image b = hires::testing::synthetic_image(64, 64, 8);
  const Mask mask = hires::testing::rect_mask(64, 64, 20, 20, 20, 20);
  const std::string ia = open_session(a);
  const std::string ib = open_session(b);
  const std::string want_a = inpaint(ia, mask)->body;
  const std::string want_b = inpaint(ib, mask)->body;
  ASSERT_NE(want_a, want_b);

  std::vector<std::string> got(8);
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      httplib::Client c("127.0.0.1", service->port());
      c.set_read_timeout(60, 0);
      const std::string& id = t % 2 ? ib : ia;
      auto r = c.Post("/api/v1/sessions/" + id + "/inpaint",
                      httplib::MultipartFormDataItems{{"mask", png_of(mask), "m.png", "image/png"}});
      if (r && r->status == 200) got[t] = r->body;
      if (r && r->status == 409) got[t] = "busy";
    });
  }
  for (auto& th : threads) th.join();
  for (int t = 0; t < 8; ++t) {
    if (got[t] == "busy") continue;
    EXPECT_EQ(got[t], t % 2 ? want_b : want_a) << "request " << t;
  }
}

TEST_F(ServiceTest, SessionsExpire) {
  ServiceConfig cfg;
  cfg.session_ttl = std::chrono::seconds(1);
  start(cfg);
  const std::string id = open_session(hires::testing::synthetic_image(16, 16, 9));
  EXPECT_EQ(service->session_count(), 1u);
  std::this_thread::sleep_for(std::chrono::milliseconds(1100));
  EXPECT_EQ(service->purge_expired(), 1u);
  EXPECT_EQ(service->session_count(), 0u);
  EXPECT_EQ(inpaint(id, Mask(16, 16, 1))->status, 404);
}

TEST_F(ServiceTest, PreflightAndConfigLimits) {
  auto r = client->Options("/api/v1/images");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 204);
  EXPECT_FALSE(r->get_header_value("Access-Control-Allow-Methods").empty());

  ServiceConfig cfg;
  cfg.max_pixels = 100;
  start(cfg);
  EXPECT_EQ(upload(png_of(hires::testing::synthetic_image(11, 10, 1)))->status, 413);
  EXPECT_EQ(upload(png_of(hires::testing::synthetic_image(10, 10, 1)))->status, 200);

  ServiceConfig bad;
  bad.max_pixels = 0;
  EXPECT_THROW(Service{bad}, ContractError);
}

TEST(ThreadBudget, HonoursEnvironmentCap) {
  ::setenv("HIRES_INPAINT_THREADS", "2", 1);
  EXPECT_EQ(thread_budget(8), 2);
  EXPECT_EQ(thread_budget(1), 1);
  ::setenv("HIRES_INPAINT_THREADS", "bogus", 1);
  EXPECT_EQ(thread_budget(8), 8);
  ::unsetenv("HIRES_INPAINT_THREADS");
  EXPECT_GE(thread_budget(), 1);
}
