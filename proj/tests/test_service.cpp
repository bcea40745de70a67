#include <gtest/gtest.h>

#include "support/cartoon.hpp"

#include <autopainter/painter.hpp>
#include <autopainter/service.hpp>

#include <cstdio>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>
#include <unistd.h>

using namespace autopainter;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("autopainter_svc_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string as_string(const std::vector<unsigned char>& v) { return std::string(v.begin(), v.end()); }

// Non-square line drawing: 72 rows by 96 columns.
RasterImage test_sketch() {
  const RasterImage full = xdog(testsupport::make_cartoon(96, 4), {});
  RasterImage out(72, 96, 1);
  for (int y = 0; y < 72; ++y)
    for (int x = 0; x < 96; ++x) out.at(y, x) = full.at(y + 12, x);
  return out;
}

// Colours are exact in 8-bit hex so the wire format carries them losslessly.
const std::vector<Scribble> kScribbles{{{{20, 30}, {60, 30}}, {1.0f, 0.2f, 0.0f}, 4}, {{{48, 10}}, {0.0f, 0.0f, 1.0f}, 2}};

class ServiceTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(fresh_dir("fixture"));
    GeneratorConfig c;
    c.resolution = 64;
    c.depth = 5;
    c.base_filters = 8;
    const ParamSet<float> g = build_generator(c, 12);
    save_checkpoint(*dir_ / "model.json", {{"generator", &g}});
    painter_ = new std::shared_ptr<const Painter>(
        std::make_shared<const Painter>(Painter::from_checkpoint(*dir_ / "model.json")));
    write_png(*dir_ / "sketch.png", test_sketch());
    std::ofstream(*dir_ / "scribbles.json") << scribbles_to_json(kScribbles).dump();
    ASSERT_EQ(scribbles_to_json(parse_scribbles(scribbles_to_json(kScribbles))), scribbles_to_json(kScribbles));
  }
  static void TearDownTestSuite() {
    fs::remove_all(*dir_);
    delete painter_;
    delete dir_;
  }

  void SetUp() override {
    service_ = std::make_unique<PaintService>(*painter_, ServiceOptions{"127.0.0.1", 0, 4});
    port_ = service_->bind();
    thread_ = std::thread([this] { service_->run(); });
    service_->wait_until_ready();
  }
  void TearDown() override {
    service_->stop();
    thread_.join();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(120, 0);
    return c;
  }

  static httplib::MultipartFormDataItems paint_form(const std::string& png, const std::string& scribbles,
                                                    const std::string& seed) {
    httplib::MultipartFormDataItems items{{"sketch", png, "sketch.png", "image/png"}};
    if (!scribbles.empty()) items.push_back({"scribbles", scribbles, "scribbles.json", "application/json"});
    if (!seed.empty()) items.push_back({"seed", seed, "", "text/plain"});
    return items;
  }

  static fs::path* dir_;
  static std::shared_ptr<const Painter>* painter_;
  std::unique_ptr<PaintService> service_;
  std::thread thread_;
  int port_ = 0;
};

fs::path* ServiceTest::dir_ = nullptr;
std::shared_ptr<const Painter>* ServiceTest::painter_ = nullptr;

}  // namespace

TEST_F(ServiceTest, PaintIsDeterministicAndCroppedBack) {
  const Painter& p = **painter_;
  const RasterImage sketch = test_sketch();
  const PaintResult a = p.paint(sketch, kScribbles, 7), b = p.paint(sketch, kScribbles, 7);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.crop.x, 12);
  EXPECT_EQ(a.crop.y, 0);
  EXPECT_EQ(a.crop.side, 72);
  EXPECT_EQ(a.image.height, 72);
  EXPECT_EQ(a.image.width, 72);
  EXPECT_EQ(a.image.channels, 3);
  EXPECT_TRUE(a.image.in_unit_range());
  EXPECT_EQ(p.paint(sketch).image, p.paint(sketch).image);
  EXPECT_FALSE(p.paint(sketch, kScribbles, 8).image == a.image);
}

TEST_F(ServiceTest, HintChannelsAreTheOnlyScribbleDifference) {
  const Painter& p = **painter_;
  const RasterImage sketch = test_sketch();
  const Tensor<float> plain = p.prepare_input(sketch, {}, 3), hinted = p.prepare_input(sketch, kScribbles, 3);
  ASSERT_EQ(plain.shape(), (Shape{1, 4, 64, 64}));
  std::size_t changed = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      EXPECT_EQ(plain.at(0, 3, y, x), hinted.at(0, 3, y, x));
      for (int c = 0; c < 3; ++c) changed += plain.at(0, c, y, x) != hinted.at(0, c, y, x);
    }
  EXPECT_GT(changed, 0u);
  // Plain sketch: three identical grey channels. No seed: zero noise plane.
  const Tensor<float> seedless = p.prepare_input(sketch, {}, std::nullopt);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      EXPECT_EQ(seedless.at(0, 3, y, x), 0.0f);
      EXPECT_EQ(plain.at(0, 0, y, x), plain.at(0, 2, y, x));
    }
  // Scribble outside the sketch names its index.
  try {
    p.paint(sketch, {kScribbles[0], Scribble{{{5, 90}}, {0, 0, 0}, 1}});
    FAIL() << "expected ParameterError";
  } catch (const ParameterError& e) {
    EXPECT_NE(std::string(e.what()).find("scribble 1"), std::string::npos);
  }
}

TEST_F(ServiceTest, HealthAndModelEndpoints) {
  auto c = client();
  const auto h = c.Get("/health");
  ASSERT_TRUE(h);
  EXPECT_EQ(h->status, 200);
  const auto hj = nlohmann::json::parse(h->body);
  EXPECT_EQ(hj.at("status"), "ready");
  EXPECT_EQ(hj.at("model_id"), (*painter_)->model_id());
  EXPECT_EQ(hj.at("resolution"), 64);

  const auto m = c.Get("/model");
  ASSERT_TRUE(m);
  const auto mj = nlohmann::json::parse(m->body);
  EXPECT_EQ(mj.at("config").at("depth"), 5);
  EXPECT_EQ(mj.at("config").at("base_filters"), 8);
  EXPECT_EQ(mj.at("parameters"), (*painter_)->model_summary().at("parameters"));
  EXPECT_EQ(c.Get("/nope")->status, 404);
}

TEST_F(ServiceTest, PaintEndpointMatchesLocalPaintByteForByte) {
  const std::string png = slurp(*dir_ / "sketch.png");
  const std::string scribbles = slurp(*dir_ / "scribbles.json");
  // Local reference goes through the same PNG decode as the service.
  const RasterImage decoded = read_png(*dir_ / "sketch.png");
  const std::string expected = as_string(encode_png((*painter_)->paint(decoded, kScribbles, 99).image));

  auto c = client();
  const auto res = c.Post("/paint", paint_form(png, scribbles, "99"));
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200) << res->body;
  EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(res->get_header_value("X-Crop-Box"), "12,0,72");
  EXPECT_EQ(res->get_header_value("X-Model-Id"), (*painter_)->model_id());
  EXPECT_TRUE(res->body == expected) << "service PNG differs from local paint()";

  const auto plain = c.Post("/paint", paint_form(png, "", ""));
  ASSERT_TRUE(plain);
  ASSERT_EQ(plain->status, 200);
  EXPECT_TRUE(plain->body == as_string(encode_png((*painter_)->paint(decoded).image)));
}

TEST_F(ServiceTest, ConcurrentIdenticalRequestsReturnIdenticalBytes) {
  const std::string png = slurp(*dir_ / "sketch.png"), scribbles = slurp(*dir_ / "scribbles.json");
  std::vector<std::future<std::pair<int, std::string>>> jobs;
  for (int i = 0; i < 16; ++i)
    jobs.push_back(std::async(std::launch::async, [&] {
      auto c = client();
      const auto r = c.Post("/paint", paint_form(png, scribbles, "5"));
      return r ? std::pair{r->status, r->body} : std::pair{-1, std::string()};
    }));
  std::vector<std::pair<int, std::string>> results;
  for (auto& j : jobs) results.push_back(j.get());
  const std::string expected =
      as_string(encode_png((*painter_)->paint(read_png(*dir_ / "sketch.png"), kScribbles, 5).image));
  for (std::size_t i = 0; i < results.size(); ++i) {
    EXPECT_EQ(results[i].first, 200) << "request " << i;
    EXPECT_TRUE(results[i].second == expected) << "request " << i << " returned different bytes";
  }
}

TEST_F(ServiceTest, BadRequestsGet400WithJsonError) {
  const std::string png = slurp(*dir_ / "sketch.png");
  auto c = client();
  auto expect_400 = [&](const httplib::Result& r, const std::string& fragment) {
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 400) << fragment;
    const auto j = nlohmann::json::parse(r->body);
    EXPECT_NE(j.at("error").get<std::string>().find(fragment), std::string::npos) << j.dump();
  };
  expect_400(c.Post("/paint", httplib::MultipartFormDataItems{{"seed", "1", "", ""}}), "sketch");
  expect_400(c.Post("/paint", paint_form("not a png", "", "")), "PNG");
  expect_400(c.Post("/paint", paint_form(png, "{nope", "")), "scribbles");
  expect_400(c.Post("/paint", paint_form(png, R"([{"points": [[1, 2]], "color": "red", "radius": 1}])", "")),
             "#RRGGBB");
  expect_400(c.Post("/paint", paint_form(png, R"([{"points": [[500, 2]], "color": "#FF0000", "radius": 1}])", "")),
             "scribble 0");
  expect_400(c.Post("/paint", paint_form(png, "", "-3")), "seed");
  expect_400(c.Post("/paint", paint_form(png, "", "12abc")), "seed");
  expect_400(c.Post("/paint", "{}", "application/json"), "multipart");
}

#ifdef AUTOPAINTER_CLI_PATH
TEST_F(ServiceTest, CliPaintMatchesLibraryAndBenchReports) {
  const fs::path out = *dir_ / "cli_out.png", log = *dir_ / "cli.log";
  const std::string cli = AUTOPAINTER_CLI_PATH;
  const std::string base = "\"" + cli + "\" paint --checkpoint \"" + (*dir_ / "model.json").string() +
                           "\" --sketch \"" + (*dir_ / "sketch.png").string() + "\"";
  ASSERT_EQ(std::system((base + " --scribbles \"" + (*dir_ / "scribbles.json").string() + "\" --seed 99 --out \"" +
                         out.string() + "\" > \"" + log.string() + "\" 2>&1")
                            .c_str()),
            0)
      << slurp(log);
  const RasterImage decoded = read_png(*dir_ / "sketch.png");
  EXPECT_TRUE(slurp(out) == as_string(encode_png((*painter_)->paint(decoded, kScribbles, 99).image)));

  ASSERT_EQ(std::system((base + " --bench 2 > \"" + log.string() + "\" 2>&1").c_str()), 0) << slurp(log);
  const std::string report = slurp(log);
  EXPECT_NE(report.find("bench runs=2"), std::string::npos) << report;
  EXPECT_NE(report.find("target=1s"), std::string::npos) << report;
  EXPECT_TRUE(report.find("within target") != std::string::npos || report.find("over target") != std::string::npos);

  EXPECT_NE(std::system(("\"" + cli + "\" paint --checkpoint /nonexistent.json --sketch x.png --out y.png > \"" +
                         log.string() + "\" 2>&1")
                            .c_str()),
            0);
  EXPECT_NE(slurp(log).find("error:"), std::string::npos);
}
#endif
