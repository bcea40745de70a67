#include <gtest/gtest.h>

#include <autopainter/checkpoint.hpp>
#include <autopainter/features.hpp>
#include <autopainter/painter.hpp>
#include <autopainter/training.hpp>

#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <unistd.h>

using namespace autopainter;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("autopainter_ckpt_" + name + "_" + std::to_string(::getpid()));
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

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

GeneratorConfig small_generator() {
  GeneratorConfig c;
  c.resolution = 32;
  c.depth = 4;
  c.base_filters = 4;
  return c;
}

bool bit_identical(const ParamSet<float>& a, const ParamSet<float>& b) {
  if (a.names() != b.names() || a.config() != b.config()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a.at(k).shape() != b.at(k).shape()) return false;
    if (std::memcmp(a.at(k).data(), b.at(k).data(), a.at(k).size() * sizeof(float)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST(Checkpoint, BitExactRoundTrip) {
  const fs::path dir = fresh_dir("roundtrip");
  ParamSet<float> g = build_generator(small_generator(), 3);
  // Awkward values survive untouched.
  Tensor<float>& b = g["enc0.bias"];
  b[0] = -0.0f;
  b[1] = std::numeric_limits<float>::denorm_min();
  b[2] = std::numeric_limits<float>::max();
  b[3] = std::nextafter(1.0f, 2.0f);
  const ParamSet<float> d = build_discriminator(DiscriminatorConfig{64, 3, 3, 4, 4}, 4);
  const nlohmann::json meta{{"step", 12}, {"note", "x"}};
  save_checkpoint(dir / "c.json", {{"generator", &g}, {"discriminator", &d}}, meta);
  EXPECT_TRUE(fs::exists(dir / "c.bin"));
  EXPECT_EQ(checkpoint_blob_path(dir / "c.json"), dir / "c.bin");

  const CheckpointData back = load_checkpoint_file(dir / "c.json");
  ASSERT_EQ(back.groups.size(), 2u);
  EXPECT_TRUE(bit_identical(back.groups.at("generator"), g));
  EXPECT_TRUE(bit_identical(back.groups.at("discriminator"), d));
  EXPECT_EQ(back.metadata, meta);
  EXPECT_TRUE(std::signbit(back.groups.at("generator")["enc0.bias"][0]));

  // Blob is the tensors' float32 values in little-endian order.
  const std::string blob = slurp(dir / "c.bin");
  EXPECT_EQ(blob.size(), 4 * (g.parameter_count() + d.parameter_count()));
  const float first = d.at(0)[0];  // "discriminator" sorts first
  std::uint32_t bits;
  std::memcpy(&bits, &first, 4);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(static_cast<unsigned char>(blob[i]), (bits >> (8 * i)) & 0xFF);

  // Saving again produces identical bytes.
  save_checkpoint(dir / "c2.json", {{"generator", &g}, {"discriminator", &d}}, meta);
  EXPECT_EQ(slurp(dir / "c2.bin"), blob);
  fs::remove_all(dir);
}

TEST(Checkpoint, CorruptFilesAreRefused) {
  const fs::path dir = fresh_dir("corrupt");
  const ParamSet<float> g = build_generator(small_generator(), 1);
  save_checkpoint(dir / "c.json", {{"generator", &g}});
  const std::string manifest = slurp(dir / "c.json"), blob = slurp(dir / "c.bin");
  auto reset = [&] {
    spit(dir / "c.json", manifest);
    spit(dir / "c.bin", blob);
  };
  auto refused = [&](const std::string& what) {
    EXPECT_THROW(load_checkpoint_file(dir / "c.json"), LoadError) << what;
    EXPECT_THROW(Painter::from_checkpoint(dir / "c.json"), LoadError) << what;
    reset();
  };

  spit(dir / "c.bin", blob.substr(0, blob.size() - 4));
  refused("truncated blob");
  spit(dir / "c.bin", blob + "abcd");
  refused("trailing bytes");
  fs::remove(dir / "c.bin");
  refused("missing blob");
  spit(dir / "c.json", manifest.substr(0, manifest.size() / 2));
  refused("truncated manifest");
  spit(dir / "c.json", "not json at all");
  refused("garbage manifest");

  nlohmann::json j = nlohmann::json::parse(manifest);
  j["format"] = "something-else";
  spit(dir / "c.json", j.dump());
  refused("wrong format tag");

  j = nlohmann::json::parse(manifest);
  j["version"] = 99;
  spit(dir / "c.json", j.dump());
  refused("future version");

  j = nlohmann::json::parse(manifest);
  j["tensors"][1]["offset"] = j["tensors"][1]["offset"].get<std::uint64_t>() + 4;
  spit(dir / "c.json", j.dump());
  refused("overlapping tensor offsets");

  j = nlohmann::json::parse(manifest);
  j["tensors"][0]["shape"][0] = 999;
  spit(dir / "c.json", j.dump());
  refused("shape/count disagreement");

  j = nlohmann::json::parse(manifest);
  j["groups"]["generator"]["config"]["base_filters"] = 8;
  spit(dir / "c.json", j.dump());
  refused("config edited without its hash");

  EXPECT_NO_THROW(Painter::from_checkpoint(dir / "c.json"));
  fs::remove_all(dir);
}

TEST(Checkpoint, ArchitectureMismatchIsRefused) {
  const fs::path dir = fresh_dir("mismatch");
  const ParamSet<float> g = build_generator(small_generator(), 1);
  GeneratorConfig other = small_generator();
  other.base_filters = 8;
  EXPECT_THROW(require_config(g, other.to_json(), "gen"), LoadError);
  EXPECT_NO_THROW(require_config(g, small_generator().to_json(), "gen"));
  EXPECT_NE(config_hash(other.to_json()), config_hash(small_generator().to_json()));

  // Tensors from one architecture under another architecture's (consistently hashed) config.
  ParamSet<float> lying(other.to_json());
  for (std::size_t k = 0; k < g.size(); ++k) lying.add(g.name(k), g.at(k));
  save_checkpoint(dir / "lying.json", {{"generator", &lying}});
  EXPECT_THROW(Painter::from_checkpoint(dir / "lying.json"), LoadError);

  // No generator group at all.
  const ParamSet<float> d = build_discriminator(DiscriminatorConfig{64, 3, 3, 4, 4}, 4);
  save_checkpoint(dir / "disc.json", {{"discriminator", &d}});
  EXPECT_THROW(Painter::from_checkpoint(dir / "disc.json"), LoadError);

  // Training state saved under one config does not resume under another.
  TrainConfig a;
  a.resolution = 64;
  a.generator_filters = 4;
  a.discriminator_filters = 4;
  const Trainer<float> ta(a);
  ta.save_state(ta.init_state(), dir / "state.json");
  EXPECT_NO_THROW(ta.load_state(dir / "state.json"));
  TrainConfig b = a;
  b.generator_filters = 8;
  EXPECT_THROW(Trainer<float>(b).load_state(dir / "state.json"), LoadError);
  b = a;
  b.discriminator_strided_layers = 3;
  EXPECT_THROW(Trainer<float>(b).load_state(dir / "state.json"), LoadError);
  fs::remove_all(dir);
}

#if defined(AUTOPAINTER_PYTHON) && defined(AUTOPAINTER_TOOLS_DIR)
// Weights exported from torchvision drive our extractor to torch's own activations.
TEST(FeatureExport, TorchVgg16ActivationsMatchExtractor) {
  const fs::path dir = fresh_dir("vgg_export");
  const std::string cmd = std::string("\"") + AUTOPAINTER_PYTHON + "\" \"" + AUTOPAINTER_TOOLS_DIR +
                          "/export_vgg16.py\" --out \"" + (dir / "vgg.json").string() +
                          "\" --tap 4 --random-init 3 --reference \"" + (dir / "ref.json").string() + "\" > \"" +
                          (dir / "log.txt").string() + "\" 2>&1";
  if (std::system(cmd.c_str()) != 0) {
    const std::string log = slurp(dir / "log.txt");
    fs::remove_all(dir);
    if (log.find("ModuleNotFoundError") != std::string::npos) GTEST_SKIP() << "torch/torchvision not importable";
    FAIL() << log;
  }
  const CheckpointData data = load_checkpoint_file(dir / "vgg.json");
  ASSERT_EQ(data.groups.count("features"), 1u);
  const ParamSet<float>& f = data.groups.at("features");
  ParamSet<double> p(f.config());
  for (std::size_t i = 0; i < f.size(); ++i) p.add(f.name(i), f.at(i).cast<double>());
  const Vgg16Extractor<double> vgg(std::move(p));

  const auto ref = nlohmann::json::parse(slurp(dir / "ref.json"));
  Tensor<double> input(ref.at("input_shape").get<Shape>(), ref.at("input").get<std::vector<double>>());
  const Tensor<double> expected(ref.at("shape").get<Shape>(), ref.at("values").get<std::vector<double>>());
  const Tensor<double> got = vgg.forward(input);
  ASSERT_EQ(got.shape(), expected.shape());
  double scale = 0, err = 0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    scale = std::max(scale, std::abs(expected[i]));
    err = std::max(err, std::abs(got[i] - expected[i]));
  }
  EXPECT_GT(scale, 0.0);
  EXPECT_LT(err, 1e-9 * std::max(1.0, scale));

  // The trainer picks the export up in place of the surrogate.
  TrainConfig cfg;
  cfg.resolution = 64;
  cfg.generator_filters = 4;
  cfg.discriminator_filters = 4;
  cfg.feature_checkpoint = (dir / "vgg.json").string();
  const Trainer<float> t(cfg);
  EXPECT_NE(t.extractor().params().config().at("provenance").get<std::string>().find("torchvision"),
            std::string::npos);
  fs::remove_all(dir);
}
#endif
