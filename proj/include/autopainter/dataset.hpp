#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "autopainter/color_hints.hpp"
#include "autopainter/errors.hpp"
#include "autopainter/image.hpp"
#include "autopainter/png_io.hpp"
#include "autopainter/sketch.hpp"
#include "autopainter/tensor.hpp"

namespace autopainter {

namespace fs = std::filesystem;

/// Bilinear resize with half-pixel centres; equal sizes copy exactly.
inline RasterImage resize_bilinear(const RasterImage& src, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ParameterError("resize: size must be >= 1");
  if (out_h == src.height && out_w == src.width) return src;
  RasterImage out(out_h, out_w, src.channels);
  const double sy = static_cast<double>(src.height) / out_h;
  const double sx = static_cast<double>(src.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(src.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(src.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < src.channels; ++c) {
        const double top = (1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c);
        const double bottom = (1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c);
        out.at(y, x, c) = static_cast<float>((1 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

struct CropBox {
  int x = 0;
  int y = 0;
  int side = 0;
};

inline CropBox center_square(int height, int width) {
  const int side = std::min(height, width);
  return {(width - side) / 2, (height - side) / 2, side};
}

inline RasterImage crop(const RasterImage& src, const CropBox& box) {
  RasterImage out(box.side, box.side, src.channels);
  for (int y = 0; y < box.side; ++y)
    for (int x = 0; x < box.side; ++x)
      for (int c = 0; c < src.channels; ++c) out.at(y, x, c) = src.at(box.y + y, box.x + x, c);
  return out;
}

/// Centre-crops to the largest square, then resizes bilinearly to size x size.
inline RasterImage square_crop_resize(const RasterImage& image, int size) {
  if (size < 1) throw ParameterError("square_crop_resize: size must be >= 1");
  const CropBox box = center_square(image.height, image.width);
  return resize_bilinear(box.side == image.width && box.side == image.height ? image : crop(image, box), size,
                         size);
}

struct ManifestEntry {
  std::string source;
  std::string sketch;
  std::string hint;  // empty when hints are disabled
  std::string target;
  double gamma = 0.0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Paired-sample index. Paths are relative to `root`.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  int resolution = 0;
  std::string split_tag;  // "train", "test" or "" before splitting
  fs::path root;

  fs::path resolve(const std::string& rel) const { return root / rel; }
};

inline std::string gamma_tag(double gamma) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", gamma);
  return buf;
}

inline std::string manifest_to_jsonl(const DatasetManifest& m) {
  std::string out;
  for (const ManifestEntry& e : m.entries) {
    nlohmann::ordered_json line{{"source", e.source}, {"sketch", e.sketch},         {"hint", e.hint},
                                {"target", e.target}, {"gamma", e.gamma},           {"resolution", m.resolution},
                                {"split", m.split_tag}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

inline void write_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write manifest " + path.string());
  out << manifest_to_jsonl(m);
}

inline DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      m.entries.push_back({j.at("source"), j.at("sketch"), j.value("hint", ""), j.at("target"), j.at("gamma")});
      m.resolution = j.at("resolution");
      m.split_tag = j.value("split", "");
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

struct BuildOptions {
  std::vector<double> gammas = default_sketch_gammas();
  std::optional<BlockGrowthParams> hints = BlockGrowthParams{};
  XdogParams xdog{};
  std::uint64_t seed = 0;
  int size = 512;
  unsigned workers = 0;  // 0 = hardware concurrency
};

struct BuildResult {
  DatasetManifest manifest;
  std::size_t skipped = 0;
};

/// splitmix64 finaliser, used to derive per-sample seeds from a run seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Builds targets/, sketches/ and (optionally) hints/ under `out_dir` and returns the
/// unsplit manifest, one entry per (source image, gamma).
inline BuildResult build_pairs(const fs::path& image_dir, const fs::path& out_dir, const BuildOptions& opt,
                               std::ostream& log = std::cerr) {
  if (opt.gammas.empty()) throw ParameterError("build_pairs: gamma list is empty");
  if (opt.size < 1) throw ParameterError("build_pairs: size must be >= 1");
  if (opt.hints) opt.hints->validate();
  if (!fs::is_directory(image_dir)) throw LoadError("not a directory: " + image_dir.string());

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(image_dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  fs::create_directories(out_dir / "targets");
  fs::create_directories(out_dir / "sketches");
  if (opt.hints) fs::create_directories(out_dir / "hints");

  std::vector<std::optional<std::vector<ManifestEntry>>> per_source(files.size());
  std::vector<std::string> errors(files.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < files.size(); i = next++) {
      try {
        const fs::path& file = files[i];
        const RasterImage target = replicate_rgb(square_crop_resize(read_png(file), opt.size));
        const std::string stem = file.stem().string();
        const std::string target_rel = "targets/" + stem + ".png";
        write_png(out_dir / target_rel, target);
        std::vector<ManifestEntry> entries;
        for (std::size_t g = 0; g < opt.gammas.size(); ++g) {
          XdogParams xp = opt.xdog;
          xp.gamma = opt.gammas[g];
          const RasterImage sketch = xdog(target, xp);
          const std::string tag = stem + "_g" + gamma_tag(opt.gammas[g]) + ".png";
          ManifestEntry e{file.filename().string(), "sketches/" + tag, "", target_rel, opt.gammas[g]};
          write_png(out_dir / e.sketch, sketch);
          if (opt.hints) {
            const HintImage hint =
                synthesize_hints(target, sketch, *opt.hints, mix_seed(opt.seed, i * opt.gammas.size() + g));
            e.hint = "hints/" + tag;
            write_png(out_dir / e.hint, hint.image);
          }
          entries.push_back(std::move(e));
        }
        per_source[i] = std::move(entries);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const unsigned n_workers =
      std::max(1u, std::min<unsigned>(opt.workers ? opt.workers : std::thread::hardware_concurrency(),
                                      static_cast<unsigned>(files.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n_workers; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  BuildResult result;
  result.manifest.resolution = opt.size;
  result.manifest.root = out_dir;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (!per_source[i]) {
      log << "skipping " << files[i].string() << ": " << errors[i] << "\n";
      ++result.skipped;
      continue;
    }
    for (auto& e : *per_source[i]) result.manifest.entries.push_back(std::move(e));
  }
  if (result.skipped) log << result.skipped << " of " << files.size() << " files skipped\n";
  if (result.manifest.entries.empty()) throw LoadError("build_pairs: no usable images in " + image_dir.string());
  return result;
}

/// Seeded split over source images; every gamma variant of a source lands in the same split.
inline std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& manifest, double train_fraction,
                                                         std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ParameterError("split: train fraction must lie in (0, 1)");
  std::vector<std::string> sources;
  for (const auto& e : manifest.entries)
    if (std::find(sources.begin(), sources.end(), e.source) == sources.end()) sources.push_back(e.source);
  std::mt19937_64 rng(seed);
  std::shuffle(sources.begin(), sources.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * sources.size() + 1e-9));
  std::map<std::string, bool> in_train;
  for (std::size_t i = 0; i < sources.size(); ++i) in_train[sources[i]] = i < n_train;

  DatasetManifest train = manifest, test = manifest;
  train.entries.clear();
  test.entries.clear();
  train.split_tag = "train";
  test.split_tag = "test";
  for (const auto& e : manifest.entries) (in_train[e.source] ? train : test).entries.push_back(e);
  return {std::move(train), std::move(test)};
}

/// A stacked, [-1,1]-normalised minibatch: input is the hint (or replicated sketch), NCHW.
template <typename T>
struct Batch {
  Tensor<T> input;
  Tensor<T> target;

  std::int64_t size() const { return input.empty() ? 0 : input.dim(0); }
};

template <typename T>
Batch<T> stack_batch(const std::vector<RasterImage>& inputs, const std::vector<RasterImage>& targets) {
  if (inputs.empty() || inputs.size() != targets.size()) throw ParameterError("stack_batch: bad sample counts");
  const int h = inputs[0].height, w = inputs[0].width;
  const auto n = static_cast<std::int64_t>(inputs.size());
  Batch<T> batch{Tensor<T>({n, 3, h, w}), Tensor<T>({n, 3, h, w})};
  for (std::int64_t i = 0; i < n; ++i) {
    const RasterImage in = replicate_rgb(inputs[i]);
    const RasterImage tg = replicate_rgb(targets[i]);
    if (in.height != h || in.width != w || tg.height != h || tg.width != w)
      throw ParameterError("stack_batch: samples differ in size");
    write_normalized(in, batch.input, i);
    write_normalized(tg, batch.target, i);
  }
  return batch;
}

template <typename T = float>
Batch<T> load_batch(const DatasetManifest& manifest, const std::vector<std::size_t>& indices) {
  std::vector<RasterImage> inputs, targets;
  for (std::size_t idx : indices) {
    if (idx >= manifest.entries.size())
      throw ParameterError("load_batch: index " + std::to_string(idx) + " out of range");
    const ManifestEntry& e = manifest.entries[idx];
    try {
      inputs.push_back(read_png(manifest.resolve(e.hint.empty() ? e.sketch : e.hint)));
      targets.push_back(read_png(manifest.resolve(e.target)));
    } catch (const LoadError& err) {
      throw LoadError("entry " + std::to_string(idx) + " (" + e.source + "): " + err.what());
    }
  }
  return stack_batch<T>(inputs, targets);
}

}  // namespace autopainter
