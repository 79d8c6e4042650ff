#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <thread>

#include "ffdnet/model_io.hpp"
#include "ffdnet/service.hpp"
#include "test_util.hpp"

using namespace ffdnet;
using namespace ffdnet::service;

namespace {

const std::string kFixtures = std::string(FFDNET_FIXTURE_DIR);

std::string read_text(const std::string& path) {
  const Bytes b = read_file(path);
  std::string s(b.begin(), b.end());
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

std::string spec_fixture(const std::string& name) { return read_text(kFixtures + "/map_specs/" + name); }

ParameterSet<Real> small_model() { return merge_batchnorm(default_init<Real>({3, 6, 1, 2, 1}, 5)); }

std::string test_png(std::size_t w = 32, std::size_t h = 16, std::size_t channels = 1) {
  Image8 img{w, h, channels, std::vector<std::uint8_t>(w * h * channels)};
  CounterRng rng(11);
  for (auto& p : img.pixels) p = std::uint8_t(rng.below(256));
  const Bytes b = encode_png(img);
  return {b.begin(), b.end()};
}

Request json_request(const std::string& png, const std::string& map_json) {
  const std::string body = R"({"image":")" + base64_encode(Bytes(png.begin(), png.end())) + R"(","map":)" + map_json + "}";
  return {"POST", "/api/denoise", "application/json", body, {}};
}

Request multipart_request(const std::string& png, const std::string& map_json) {
  return {"POST", "/api/denoise", "multipart/form-data; boundary=x", "", {{"image", png}, {"map", map_json}}};
}

Image8 response_image(const Response& r) {
  const auto j = json::parse(r.body);
  return decode_png(base64_decode(j.at("image").get<std::string>()));
}

}  // namespace

TEST(ModelRoute, GrayscalePresetFields) {
  const Service svc(default_init<Real>(ModelConfig::grayscale(), 1));
  const auto r = svc.handle({"GET", "/api/model", "", "", {}});
  ASSERT_EQ(r.status, 200);
  const auto j = json::parse(r.body);
  EXPECT_EQ(j["layers"], 15);
  EXPECT_EQ(j["channels"], 64);
  EXPECT_EQ(j["in_channels"], 1);
  EXPECT_EQ(j["color"], false);
  EXPECT_EQ(j["noise_range"], json::array({0, 75}));
  EXPECT_EQ(j["downsample_factor"], 2);
  EXPECT_EQ(j["receptive_field"], 62);
  EXPECT_EQ(j["bn_merged"], false);
}

TEST(ModelRoute, ColorAndToyModels) {
  const auto c = json::parse(Service(default_init<Real>(ModelConfig::color(), 1)).handle({"GET", "/api/model", "", "", {}}).body);
  EXPECT_EQ(c["layers"], 12);
  EXPECT_EQ(c["channels"], 96);
  EXPECT_EQ(c["color"], true);
  const auto t = json::parse(Service(small_model()).handle({"GET", "/api/model", "", "", {}}).body);
  EXPECT_EQ(t["layers"], 3);
  EXPECT_EQ(t["channels"], 6);
  EXPECT_EQ(t["bn_merged"], true);
}

TEST(Routing, UnknownRouteAndWrongMethod) {
  const Service svc(small_model());
  EXPECT_EQ(svc.handle({"GET", "/api/nothing", "", "", {}}).status, 404);
  EXPECT_EQ(svc.handle({"GET", "/", "", "", {}}).status, 404);
  EXPECT_EQ(svc.handle({"POST", "/api/model", "", "", {}}).status, 405);
  EXPECT_EQ(svc.handle({"GET", "/api/denoise", "", "", {}}).status, 405);
}

TEST(Denoise, ResponseCarriesImageAndResolvedMap) {
  const Service svc(small_model());
  const auto r = svc.handle(json_request(test_png(), spec_fixture("uniform_25.json")));
  ASSERT_EQ(r.status, 200) << r.body;
  const auto j = json::parse(r.body);
  EXPECT_EQ(j["width"], 32);
  EXPECT_EQ(j["height"], 16);
  EXPECT_EQ(j["channels"], 1);
  const auto img = response_image(r);
  EXPECT_EQ(img.width, 32u);
  EXPECT_EQ(img.height, 16u);
  const auto map = parse_map_spec(j["map"], 16, 32);
  for (double v : map.values) EXPECT_NEAR(v * 255, 25.0, 1e-5);
}

TEST(Denoise, MatchesLibraryDenoise) {
  const auto params = small_model();
  const Service svc(params);
  const std::string png = test_png(30, 14);
  const auto r = svc.handle(json_request(png, spec_fixture("anchors_two.json")));
  ASSERT_EQ(r.status, 200) << r.body;
  const auto x = image_to_tensor<Real>(decode_png(Bytes(png.begin(), png.end())));
  const auto map = anchored_map(14, 30, {{8, 4, 10}, {8, 27, 40}});
  EXPECT_EQ(response_image(r), tensor_to_image(denoise(params, x, map)));
}

TEST(Denoise, OneAnchorIsByteIdenticalToUniform) {
  const Service svc(small_model());
  const std::string png = test_png();
  const auto a = svc.handle(json_request(png, spec_fixture("anchors_one.json")));
  const auto u = svc.handle(json_request(png, spec_fixture("uniform_25.json")));
  ASSERT_EQ(a.status, 200);
  EXPECT_EQ(a.body, u.body);
  EXPECT_EQ(svc.handle(multipart_request(png, spec_fixture("anchors_one.json"))).body, u.body);
}

TEST(Denoise, IdempotentAndTransportIndependent) {
  const Service svc(small_model());
  const std::string png = test_png();
  const auto req = json_request(png, spec_fixture("anchors_two.json"));
  const auto first = svc.handle(req);
  EXPECT_EQ(svc.handle(req).body, first.body);
  EXPECT_EQ(svc.handle(multipart_request(png, spec_fixture("anchors_two.json"))).body, first.body);
}

TEST(Denoise, RawMapRoundTrip) {
  const Service svc(small_model());
  const auto r = svc.handle(json_request(test_png(4, 2), spec_fixture("raw_4x2.json")));
  ASSERT_EQ(r.status, 200) << r.body;
  const auto j = json::parse(r.body);
  EXPECT_EQ(j["map"].dump(), json::parse(spec_fixture("raw_4x2.json")).dump());
}

TEST(Denoise, ColorImageOnGrayModelIsConverted) {
  const Service svc(small_model());
  const auto r = svc.handle(json_request(test_png(8, 8, 3), spec_fixture("uniform_25.json")));
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(json::parse(r.body)["channels"], 1);
}

TEST(Denoise, MalformedMapSpecsAre400) {
  const Service svc(small_model());
  const std::string png = test_png();
  for (const auto& entry : std::filesystem::directory_iterator(kFixtures + "/map_specs")) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("bad_", 0) != 0) continue;
    const auto r = svc.handle(json_request(png, read_text(entry.path().string())));
    EXPECT_EQ(r.status, 400) << name << " " << r.body;
    EXPECT_TRUE(json::parse(r.body).contains("error")) << name;
    EXPECT_EQ(svc.handle(multipart_request(png, read_text(entry.path().string()))).status, 400) << name;
  }
}

TEST(Denoise, MalformedBodiesAre400) {
  const Service svc(small_model());
  const std::string png = test_png();
  EXPECT_EQ(svc.handle({"POST", "/api/denoise", "application/json", "not json", {}}).status, 400);
  EXPECT_EQ(svc.handle({"POST", "/api/denoise", "application/json", R"({"map":{"kind":"uniform","sigma":5}})", {}}).status, 400);
  EXPECT_EQ(svc.handle({"POST", "/api/denoise", "application/json", R"({"image":"@@@","map":{"kind":"uniform","sigma":5}})", {}}).status, 400);
  EXPECT_EQ(svc.handle(json_request("GIF89a", spec_fixture("uniform_25.json"))).status, 400);
  std::string truncated = png.substr(0, png.size() - 10);
  EXPECT_EQ(svc.handle(json_request(truncated, spec_fixture("uniform_25.json"))).status, 400);
  EXPECT_EQ(svc.handle({"POST", "/api/denoise", "multipart/form-data; boundary=x", "", {{"image", png}}}).status, 400);
}

TEST(Denoise, OversizeIs413) {
  const Service svc(small_model(), Options{100});
  const auto r = svc.handle(json_request(test_png(), spec_fixture("uniform_25.json")));
  EXPECT_EQ(r.status, 413);
  EXPECT_EQ(Service(small_model(), Options{512}).handle(json_request(test_png(), spec_fixture("uniform_25.json"))).status, 200);
}

TEST(MapSpec, TwoAnchorFixtureMatchesCanonicalSerialization) {
  EXPECT_EQ(anchors_spec({{8, 4, 10}, {8, 27, 40}}), spec_fixture("anchors_two.json"));
  EXPECT_EQ(anchors_spec({{3, 5, 25}}), spec_fixture("anchors_one.json"));
  EXPECT_EQ(anchors_spec({{0, 1, 12.5}}), R"({"kind":"anchors","points":[{"r":0,"c":1,"sigma":12.5}]})");
  const auto m = parse_map_spec(json::parse(spec_fixture("anchors_two.json")), 16, 32);
  EXPECT_EQ(m.at(8, 4), 10.0 / 255);
  EXPECT_EQ(m.at(8, 27), 40.0 / 255);
  EXPECT_TRUE(m.same_field(anchored_map(16, 32, {{8, 4, 10}, {8, 27, 40}})));
}

TEST(MapSpec, RawSpecRoundTrip) {
  const auto m = gradient_map(5, 7, 0, 60);
  const auto back = parse_map_spec(raw_map_spec(m), 5, 7);
  for (std::size_t i = 0; i < m.values.size(); ++i) EXPECT_NEAR(back.values[i], m.values[i], 1e-7);
  EXPECT_THROW(parse_map_spec(raw_map_spec(m), 7, 5), HttpError);
}

TEST(Errors, InternalErrorIdsAreOpaqueAndDistinct) {
  const auto a = service::detail::new_error_id(), b = service::detail::new_error_id();
  EXPECT_EQ(a.size(), 16u);
  EXPECT_NE(a, b);
}

TEST(Errors, UnexpectedFailureIs500WithLoggedId) {
  // Two-channel models pass validation but no image converts to them.
  std::ostringstream log;
  const Service svc(merge_batchnorm(default_init<Real>({3, 4, 2, 2, 1}, 1)), {}, &log);
  const auto r = svc.handle(json_request(test_png(), R"({"kind":"uniform","sigma":10})"));
  ASSERT_EQ(r.status, 500);
  const auto j = json::parse(r.body);
  EXPECT_EQ(j.at("error"), "internal error");
  const std::string id = j.at("id");
  EXPECT_EQ(id.size(), 16u);
  EXPECT_EQ(log.str().rfind("error id=" + id + " what=", 0), 0u) << log.str();
  EXPECT_EQ(r.body.find("channel"), std::string::npos);
}

TEST(AccessLog, LineLayout) {
  const Request req{"POST", "/api/denoise", "multipart/form-data", "", {{"image", "12345"}, {"map", "{}"}}};
  const Response resp{400, "application/json", "{\"error\":\"x\"}"};
  EXPECT_EQ(access_log_line(req, resp, 1.25),
            "access method=POST path=/api/denoise status=400 bytes_in=7 bytes_out=13 ms=1.2");
}

TEST(Golden, UniformZeroMatchesToyModelOutput) {
  const Service svc(load_model<Real>(std::string(FFDNET_DATA_DIR) + "/models/toy.model"));
  const Bytes clean = read_file(std::string(FFDNET_DATA_DIR) + "/images/chelsea.png");
  const auto r = svc.handle(json_request(std::string(clean.begin(), clean.end()), R"({"kind":"uniform","sigma":0})"));
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(response_image(r), read_image8(kFixtures + "/toy_chelsea_sigma0.png"));
}

TEST(Socket, ServesOverHttp) {
  const Service svc(small_model());
  httplib::Server server;
  std::ostringstream log;
  mount(server, svc, log);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  const auto model = client.Get("/api/model");
  ASSERT_TRUE(model);
  EXPECT_EQ(model->status, 200);
  EXPECT_EQ(json::parse(model->body)["layers"], 3);

  const std::string png = test_png();
  httplib::MultipartFormDataItems items{{"image", png, "in.png", "image/png"},
                                        {"map", spec_fixture("uniform_25.json"), "", "application/json"}};
  const auto mp = client.Post("/api/denoise", items);
  ASSERT_TRUE(mp);
  EXPECT_EQ(mp->status, 200);
  EXPECT_EQ(mp->body, svc.handle(json_request(png, spec_fixture("uniform_25.json"))).body);

  const auto js = client.Post("/api/denoise", json_request(png, spec_fixture("uniform_25.json")).body, "application/json");
  ASSERT_TRUE(js);
  EXPECT_EQ(js->body, mp->body);

  const auto bad = client.Post("/api/denoise", "{", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  const auto missing = client.Get("/nope");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);

  server.stop();
  t.join();
  const std::string text = log.str();
  EXPECT_NE(text.find("access method=GET path=/api/model status=200"), std::string::npos) << text;
  EXPECT_NE(text.find("access method=POST path=/api/denoise status=400"), std::string::npos) << text;
  EXPECT_NE(text.find("access method=GET path=/nope status=404"), std::string::npos) << text;
}

TEST(Socket, ConcurrentRequestsAgree) {
  const Service svc(small_model());
  httplib::Server server;
  std::ostringstream log;
  mount(server, svc, log);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  const std::string body = json_request(test_png(), spec_fixture("anchors_two.json")).body;
  std::vector<std::string> results(4);
  std::vector<std::thread> clients;
  for (std::size_t i = 0; i < results.size(); ++i)
    clients.emplace_back([&, i] {
      httplib::Client c("127.0.0.1", port);
      if (auto r = c.Post("/api/denoise", body, "application/json")) results[i] = r->body;
    });
  for (auto& c : clients) c.join();
  server.stop();
  t.join();
  for (const auto& r : results) EXPECT_EQ(r, results[0]);
  EXPECT_FALSE(results[0].empty());
}
