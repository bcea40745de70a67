#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autopainter/checkpoint.hpp"
#include "autopainter/color_hints.hpp"
#include "autopainter/dataset.hpp"
#include "autopainter/image.hpp"
#include "autopainter/networks.hpp"
#include "autopainter/sketch.hpp"

namespace autopainter {

struct PaintResult {
  RasterImage image;
  CropBox crop;  // region of the input sketch the output corresponds to
};

/// Inference front end around a trained generator. Holds the parameters read-only, so one
/// instance may serve concurrent requests.
class Painter {
 public:
  Painter(ParamSet<float> generator, std::string model_id)
      : params_(std::move(generator)),
        net_(GeneratorConfig::from_json(params_.config())),
        model_id_(std::move(model_id)) {
    net_.check_params(params_);
  }

  /// Loads the "generator" group of a checkpoint produced by training.
  static Painter from_checkpoint(const std::filesystem::path& path) {
    CheckpointData data = load_checkpoint_file(path);
    auto it = data.groups.find("generator");
    if (it == data.groups.end()) throw LoadError(path.string() + ": checkpoint has no generator");
    try {
      return Painter(std::move(it->second), path.stem().string() + "@" + it->second.config_hash());
    } catch (const ConfigError& e) {
      throw LoadError(path.string() + ": " + e.what());
    }
  }

  const GeneratorConfig& config() const { return net_.config(); }
  const std::string& model_id() const { return model_id_; }
  int resolution() const { return net_.config().resolution; }

  /// The 4-channel generator input for a request: hint image in [-1,1] plus the noise plane.
  /// Scribble coordinates are pixels of the uploaded sketch; the hint is cropped and resized after
  /// rasterisation. Without a seed the noise plane is zero.
  Tensor<float> prepare_input(const RasterImage& sketch, const std::vector<Scribble>& scribbles,
                              std::optional<std::uint64_t> seed) const {
    const int r = resolution();
    const HintImage hint = rasterize_user_scribbles(sketch, scribbles);
    Tensor<float> condition({1, 3, r, r});
    write_normalized(square_crop_resize(hint.image, r), condition, 0);
    Tensor<float> noise({1, 1, r, r});
    if (seed) {
      std::mt19937_64 rng(*seed);
      noise = gaussian_tensor<float>({1, 1, r, r}, net_.config().noise_stddev, rng);
    }
    return generator_input(condition, noise);
  }

  PaintResult paint(const RasterImage& sketch, const std::vector<Scribble>& scribbles = {},
                    std::optional<std::uint64_t> seed = std::nullopt) const {
    const CropBox box = center_square(sketch.height, sketch.width);
    const Tensor<float> out = net_.forward(params_, prepare_input(sketch, scribbles, seed));
    return {resize_bilinear(to_raster(out, 0), box.side, box.side), box};
  }

  nlohmann::json health() const {
    return {{"status", "ready"}, {"model_id", model_id_}, {"resolution", resolution()}};
  }

  nlohmann::json model_summary() const {
    return {{"model_id", model_id_},
            {"config", net_.config().to_json()},
            {"config_hash", params_.config_hash()},
            {"parameters", params_.parameter_count()},
            {"tensors", params_.size()}};
  }

 private:
  ParamSet<float> params_;
  Generator<float> net_;
  std::string model_id_;
};

struct BenchReport {
  int runs = 0;
  double mean_seconds = 0.0;
  double max_seconds = 0.0;
  double target_seconds = 1.0;
  bool within_target() const { return mean_seconds <= target_seconds; }
};

/// Times repeated paints of `sketch`; reported against the one-second interactive target.
inline BenchReport bench_paint(const Painter& painter, const RasterImage& sketch, int runs) {
  BenchReport r;
  r.runs = std::max(runs, 1);
  double total = 0.0;
  for (int i = 0; i < r.runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)painter.paint(sketch);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    total += s;
    r.max_seconds = std::max(r.max_seconds, s);
  }
  r.mean_seconds = total / r.runs;
  return r;
}

}  // namespace autopainter
