#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autopainter/errors.hpp"
#include "autopainter/ops.hpp"
#include "autopainter/param_set.hpp"
#include "autopainter/tensor.hpp"

namespace autopainter {

inline constexpr double kInitStddev = 0.02;
inline constexpr double kLeakySlope = 0.2;

inline bool is_power_of_two_multiple(int resolution, int depth) {
  return depth >= 0 && depth < 31 && resolution % (1 << depth) == 0;
}

// ---------------------------------------------------------------------------------------------
// Generator: U-Net with encoder/decoder skip concatenation.

struct GeneratorConfig {
  int resolution = 512;
  int input_channels = 4;  // RGB hint sketch + one noise plane
  int output_channels = 3;
  int depth = 8;
  int base_filters = 64;
  double noise_stddev = 0.1;

  /// Filters of encoder stage i: doubling from base, capped at 8x base.
  int encoder_channels(int stage) const { return base_filters * std::min(1 << std::min(stage, 3), 8); }

  void validate() const {
    if (resolution < 2) throw ConfigError("generator: resolution must be >= 2");
    if (depth < 1) throw ConfigError("generator: depth must be >= 1");
    if (depth > std::bit_width(static_cast<unsigned>(resolution)) - 1 ||
        !is_power_of_two_multiple(resolution, depth))
      throw ConfigError("generator: resolution " + std::to_string(resolution) + " does not support depth " +
                        std::to_string(depth) + " (need resolution divisible by 2^depth)");
    if (input_channels < 1 || output_channels < 1 || base_filters < 1)
      throw ConfigError("generator: channel counts must be positive");
    if (!(noise_stddev >= 0.0)) throw ConfigError("generator: noise_stddev must be >= 0");
  }

  /// Depth leaving a 2x2 bottleneck, capped at 8.
  static int default_depth(int resolution) {
    const int log2 = std::bit_width(static_cast<unsigned>(std::max(resolution, 1))) - 1;
    return std::clamp(log2 - 1, 1, 8);
  }

  nlohmann::json to_json() const {
    return {{"kind", "unet_generator"},   {"resolution", resolution},     {"input_channels", input_channels},
            {"output_channels", output_channels}, {"depth", depth}, {"base_filters", base_filters},
            {"noise_stddev", noise_stddev}};
  }

  static GeneratorConfig from_json(const nlohmann::json& j) {
    GeneratorConfig c;
    c.resolution = j.value("resolution", c.resolution);
    c.input_channels = j.value("input_channels", c.input_channels);
    c.output_channels = j.value("output_channels", c.output_channels);
    c.depth = j.contains("depth") ? j.at("depth").get<int>() : default_depth(c.resolution);
    c.base_filters = j.value("base_filters", c.base_filters);
    c.noise_stddev = j.value("noise_stddev", c.noise_stddev);
    return c;
  }
};

/// Shapes seen at one decoder concatenation, recorded for the skip-shape law.
struct SkipRecord {
  Shape decoder_output;
  Shape mirror_encoder;
  Shape concatenated;
};

template <typename T>
struct GeneratorTape {
  std::vector<Tensor<T>> enc_conv_in;
  std::vector<Tensor<T>> enc_out;
  std::vector<ops::InstanceNormCache<T>> enc_norm;
  std::vector<Tensor<T>> dec_in;
  std::vector<Tensor<T>> dec_conv_in;
  std::vector<ops::InstanceNormCache<T>> dec_norm;
  std::vector<SkipRecord> skips;
  Tensor<T> output;
};

template <typename T>
class Generator {
 public:
  explicit Generator(GeneratorConfig config) : cfg_(config) { cfg_.validate(); }

  const GeneratorConfig& config() const { return cfg_; }
  int depth() const { return cfg_.depth; }

  bool encoder_has_norm(int i) const { return i > 0 && i < cfg_.depth - 1; }
  bool decoder_has_norm(int i) const { return i < cfg_.depth - 1; }

  int decoder_in_channels(int i) const {
    return i == 0 ? cfg_.encoder_channels(cfg_.depth - 1) : 2 * cfg_.encoder_channels(cfg_.depth - 1 - i);
  }
  int decoder_out_channels(int i) const {
    return i == cfg_.depth - 1 ? cfg_.output_channels : cfg_.encoder_channels(cfg_.depth - 2 - i);
  }

  /// Parameter names and shapes in initialisation order.
  std::vector<std::pair<std::string, Shape>> parameter_shapes() const {
    std::vector<std::pair<std::string, Shape>> out;
    auto add_stage = [&](const std::string& n, Shape weight, int channels, bool norm) {
      out.emplace_back(n + ".weight", std::move(weight));
      if (norm) {
        out.emplace_back(n + ".norm.gamma", Shape{channels});
        out.emplace_back(n + ".norm.beta", Shape{channels});
      } else {
        out.emplace_back(n + ".bias", Shape{channels});
      }
    };
    for (int i = 0; i < cfg_.depth; ++i) {
      const int in = i == 0 ? cfg_.input_channels : cfg_.encoder_channels(i - 1);
      const int c = cfg_.encoder_channels(i);
      add_stage("enc" + std::to_string(i), {c, in, 4, 4}, c, encoder_has_norm(i));
    }
    for (int i = 0; i < cfg_.depth; ++i) {
      const int c = decoder_out_channels(i);
      add_stage("dec" + std::to_string(i), {decoder_in_channels(i), c, 4, 4}, c, decoder_has_norm(i));
    }
    return out;
  }

  /// Weights ~ N(0, 0.02), norm scales ~ N(1, 0.02), shifts and biases zero.
  ParamSet<T> init(std::uint64_t seed) const {
    ParamSet<T> p(cfg_.to_json());
    std::mt19937_64 rng(seed);
    for (const auto& [name, shape] : parameter_shapes()) {
      if (name.ends_with(".weight")) {
        p.add(name, gaussian_tensor<T>(shape, kInitStddev, rng));
      } else if (name.ends_with(".gamma")) {
        Tensor<T> gamma = gaussian_tensor<T>(shape, kInitStddev, rng);
        for (auto& v : gamma.storage()) v += T(1);
        p.add(name, std::move(gamma));
      } else {
        p.add(name, Tensor<T>(shape));
      }
    }
    return p;
  }

  /// Throws unless `p` has exactly this architecture's names and shapes.
  void check_params(const ParamSet<T>& p) const {
    const auto expected = parameter_shapes();
    if (p.size() != expected.size())
      throw ConfigError("generator: expected " + std::to_string(expected.size()) + " tensors, got " +
                        std::to_string(p.size()));
    for (std::size_t i = 0; i < expected.size(); ++i)
      if (p.name(i) != expected[i].first || p.at(i).shape() != expected[i].second)
        throw ConfigError("generator: tensor " + p.name(i) + " " + shape_string(p.at(i).shape()) +
                          " does not match architecture (" + expected[i].first + " " +
                          shape_string(expected[i].second) + ")");
  }

  void check_input(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != cfg_.input_channels || x.dim(2) != cfg_.resolution ||
        x.dim(3) != cfg_.resolution)
      throw InferenceError("generator: expected input (N," + std::to_string(cfg_.input_channels) + "," +
                           std::to_string(cfg_.resolution) + "," + std::to_string(cfg_.resolution) + "), got " +
                           shape_string(x.shape()));
  }

  Tensor<T> forward(const ParamSet<T>& p, const Tensor<T>& x, GeneratorTape<T>* tape = nullptr) const {
    check_input(x);
    const ops::ConvGeometry g{4, 2, 1};
    const T slope = T(kLeakySlope);
    GeneratorTape<T> local;
    GeneratorTape<T>& t = tape ? *tape : local;
    t = GeneratorTape<T>{};

    std::vector<Tensor<T>> enc_out;
    for (int i = 0; i < cfg_.depth; ++i) {
      const std::string n = "enc" + std::to_string(i);
      Tensor<T> in = i == 0 ? x : ops::leaky_relu(enc_out.back(), slope);
      Tensor<T> y;
      ops::InstanceNormCache<T> nc;
      if (encoder_has_norm(i)) {
        y = ops::instance_norm(ops::conv2d(in, p[n + ".weight"], nullptr, g), p[n + ".norm.gamma"],
                               p[n + ".norm.beta"], tape ? &nc : nullptr);
      } else {
        const Tensor<T>& bias = p[n + ".bias"];
        y = ops::conv2d(in, p[n + ".weight"], &bias, g);
      }
      if (tape) {
        t.enc_conv_in.push_back(std::move(in));
        t.enc_norm.push_back(std::move(nc));
      }
      enc_out.push_back(std::move(y));
    }

    Tensor<T> h = enc_out.back();
    Tensor<T> out;
    for (int i = 0; i < cfg_.depth; ++i) {
      const std::string n = "dec" + std::to_string(i);
      Tensor<T> r = ops::relu(h);
      Tensor<T> y;
      ops::InstanceNormCache<T> nc;
      if (decoder_has_norm(i)) {
        y = ops::instance_norm(ops::conv_transpose2d(r, p[n + ".weight"], nullptr, g), p[n + ".norm.gamma"],
                               p[n + ".norm.beta"], tape ? &nc : nullptr);
      } else {
        const Tensor<T>& bias = p[n + ".bias"];
        y = ops::tanh(ops::conv_transpose2d(r, p[n + ".weight"], &bias, g));
      }
      if (tape) {
        t.dec_in.push_back(std::move(h));
        t.dec_conv_in.push_back(std::move(r));
        t.dec_norm.push_back(std::move(nc));
      }
      if (i == cfg_.depth - 1) {
        out = std::move(y);
      } else {
        const Tensor<T>& mirror = enc_out[cfg_.depth - 2 - i];
        h = ops::concat_channels(y, mirror);
        t.skips.push_back({y.shape(), mirror.shape(), h.shape()});
      }
    }
    if (tape) {
      t.enc_out = std::move(enc_out);
      t.output = out;
    }
    return out;
  }

  /// Accumulates parameter gradients into `grads` and returns d(loss)/d(input).
  Tensor<T> backward(const ParamSet<T>& p, const GeneratorTape<T>& t, const Tensor<T>& d_out,
                     ParamSet<T>& grads) const {
    const ops::ConvGeometry g{4, 2, 1};
    const T slope = T(kLeakySlope);
    const int depth = cfg_.depth;
    std::vector<Tensor<T>> d_enc(depth);
    for (int i = 0; i < depth; ++i) d_enc[i] = Tensor<T>(t.enc_out[i].shape());

    Tensor<T> d = d_out;
    for (int i = depth - 1; i >= 0; --i) {
      const std::string n = "dec" + std::to_string(i);
      Tensor<T> d_pre;
      if (decoder_has_norm(i)) {
        auto ng = ops::instance_norm_backward(t.dec_norm[i], p[n + ".norm.gamma"], d);
        grads.accumulate(n + ".norm.gamma", ng.gamma);
        grads.accumulate(n + ".norm.beta", ng.beta);
        d_pre = std::move(ng.input);
      } else {
        d_pre = ops::tanh_backward(t.output, d);
      }
      auto cg = ops::conv_transpose2d_backward(t.dec_conv_in[i], p[n + ".weight"], !decoder_has_norm(i), d_pre, g);
      grads.accumulate(n + ".weight", cg.weight);
      if (!decoder_has_norm(i)) grads.accumulate(n + ".bias", cg.bias);
      Tensor<T> d_in = ops::relu_backward(t.dec_in[i], cg.input);
      if (i == 0) {
        d_enc[depth - 1] += d_in;
      } else {
        auto [d_prev, d_mirror] = ops::split_channels(d_in, decoder_out_channels(i - 1));
        d_enc[depth - 1 - i] += d_mirror;
        d = std::move(d_prev);
      }
    }

    Tensor<T> d_input;
    for (int i = depth - 1; i >= 0; --i) {
      const std::string n = "enc" + std::to_string(i);
      Tensor<T> d_pre;
      if (encoder_has_norm(i)) {
        auto ng = ops::instance_norm_backward(t.enc_norm[i], p[n + ".norm.gamma"], d_enc[i]);
        grads.accumulate(n + ".norm.gamma", ng.gamma);
        grads.accumulate(n + ".norm.beta", ng.beta);
        d_pre = std::move(ng.input);
      } else {
        d_pre = std::move(d_enc[i]);
      }
      auto cg = ops::conv2d_backward(t.enc_conv_in[i], p[n + ".weight"], !encoder_has_norm(i), d_pre, g);
      grads.accumulate(n + ".weight", cg.weight);
      if (!encoder_has_norm(i)) grads.accumulate(n + ".bias", cg.bias);
      if (i == 0)
        d_input = std::move(cg.input);
      else
        d_enc[i - 1] += ops::leaky_relu_backward(t.enc_out[i - 1], cg.input, slope);
    }
    return d_input;
  }

 private:
  GeneratorConfig cfg_;
};

template <typename T = float>
ParamSet<T> build_generator(const GeneratorConfig& config, std::uint64_t seed) {
  return Generator<T>(config).init(seed);
}

/// Pure forward pass; the network is reconstructed from the config stored in `params`.
/// `train_mode` records no extra state here (instance norm behaves identically in both modes).
template <typename T>
Tensor<T> generator_forward(const ParamSet<T>& params, const Tensor<T>& input, bool train_mode = false) {
  (void)train_mode;
  return Generator<T>(GeneratorConfig::from_json(params.config())).forward(params, input);
}

/// Stacks the RGB condition with a noise plane into the generator's 4-channel input.
template <typename T>
Tensor<T> generator_input(const Tensor<T>& condition, const Tensor<T>& noise) {
  return ops::concat_channels(condition, noise);
}

// ---------------------------------------------------------------------------------------------
// Patch discriminator over (condition, image) pairs.

struct DiscriminatorConfig {
  int resolution = 512;
  int condition_channels = 3;
  int image_channels = 3;
  int base_filters = 64;
  int strided_layers = 4;

  int layer_channels(int i) const { return base_filters * std::min(1 << std::min(i, 3), 8); }

  /// Two stride-1 4x4 convolutions (pad 1) follow the strided stack, each shrinking by one.
  int grid_size() const { return resolution / (1 << strided_layers) - 2; }

  void validate() const {
    if (strided_layers < 1 || strided_layers > 12) throw ConfigError("discriminator: strided_layers out of range");
    if (!is_power_of_two_multiple(resolution, strided_layers) || resolution / (1 << strided_layers) < 3)
      throw ConfigError("discriminator: resolution " + std::to_string(resolution) + " incompatible with " +
                        std::to_string(strided_layers) + " stride-2 layers");
    if (condition_channels < 1 || image_channels < 1 || base_filters < 1)
      throw ConfigError("discriminator: channel counts must be positive");
  }

  /// Input-pixel extent seen by one output cell.
  int receptive_field() const {
    int rf = 1;
    rf += 3;  // head, k4 s1
    rf += 3;  // stride-1 layer
    for (int i = 0; i < strided_layers; ++i) rf = (rf - 1) * 2 + 4;
    return rf;
  }

  nlohmann::json to_json() const {
    return {{"kind", "patch_discriminator"},
            {"resolution", resolution},
            {"condition_channels", condition_channels},
            {"image_channels", image_channels},
            {"base_filters", base_filters},
            {"strided_layers", strided_layers}};
  }

  static DiscriminatorConfig from_json(const nlohmann::json& j) {
    DiscriminatorConfig c;
    c.resolution = j.value("resolution", c.resolution);
    c.condition_channels = j.value("condition_channels", c.condition_channels);
    c.image_channels = j.value("image_channels", c.image_channels);
    c.base_filters = j.value("base_filters", c.base_filters);
    c.strided_layers = j.value("strided_layers", c.strided_layers);
    return c;
  }
};

template <typename T>
struct DiscriminatorTape {
  std::vector<Tensor<T>> conv_in;
  std::vector<Tensor<T>> pre_act;
  std::vector<ops::InstanceNormCache<T>> norm;
  Tensor<T> probs;
};

/// Gradients of a discriminator pass with respect to its two inputs.
template <typename T>
struct PairGrads {
  Tensor<T> condition;
  Tensor<T> image;
};

template <typename T>
class Discriminator {
 public:
  explicit Discriminator(DiscriminatorConfig config) : cfg_(config) { cfg_.validate(); }

  const DiscriminatorConfig& config() const { return cfg_; }

  /// Conv layers before the head: strided_layers stride-2 plus one stride-1.
  int body_layers() const { return cfg_.strided_layers + 1; }
  bool has_norm(int i) const { return i > 0; }
  ops::ConvGeometry geometry(int i) const {
    return i < cfg_.strided_layers ? ops::ConvGeometry{4, 2, 1} : ops::ConvGeometry{4, 1, 1};
  }

  ParamSet<T> init(std::uint64_t seed) const {
    ParamSet<T> p(cfg_.to_json());
    std::mt19937_64 rng(seed);
    int in = cfg_.condition_channels + cfg_.image_channels;
    for (int i = 0; i < body_layers(); ++i) {
      const int out = cfg_.layer_channels(i);
      const std::string n = "d" + std::to_string(i);
      p.add(n + ".weight", gaussian_tensor<T>({out, in, 4, 4}, kInitStddev, rng));
      if (has_norm(i)) {
        Tensor<T> gamma = gaussian_tensor<T>({out}, kInitStddev, rng);
        for (auto& v : gamma.storage()) v += T(1);
        p.add(n + ".norm.gamma", std::move(gamma));
        p.add(n + ".norm.beta", Tensor<T>({out}));
      } else {
        p.add(n + ".bias", Tensor<T>({out}));
      }
      in = out;
    }
    p.add("head.weight", gaussian_tensor<T>({1, in, 4, 4}, kInitStddev, rng));
    p.add("head.bias", Tensor<T>({1}));
    return p;
  }

  /// Returns pre-sigmoid logits, shape (N,1,G,G); the tape also stores the probabilities.
  Tensor<T> logits(const ParamSet<T>& p, const Tensor<T>& condition, const Tensor<T>& image,
                   DiscriminatorTape<T>* tape = nullptr) const {
    if (condition.rank() != 4 || image.rank() != 4 || condition.dim(0) != image.dim(0) ||
        condition.dim(1) != cfg_.condition_channels || image.dim(1) != cfg_.image_channels ||
        condition.dim(2) != cfg_.resolution || condition.dim(3) != cfg_.resolution ||
        image.dim(2) != cfg_.resolution || image.dim(3) != cfg_.resolution)
      throw InferenceError("discriminator: expected condition/image at " + std::to_string(cfg_.resolution) +
                           "^2, got " + shape_string(condition.shape()) + " and " + shape_string(image.shape()));
    const T slope = T(kLeakySlope);
    if (tape) *tape = DiscriminatorTape<T>{};
    Tensor<T> h = ops::concat_channels(condition, image);
    for (int i = 0; i < body_layers(); ++i) {
      const std::string n = "d" + std::to_string(i);
      Tensor<T> y;
      ops::InstanceNormCache<T> nc;
      if (has_norm(i)) {
        y = ops::instance_norm(ops::conv2d(h, p[n + ".weight"], nullptr, geometry(i)), p[n + ".norm.gamma"],
                               p[n + ".norm.beta"], tape ? &nc : nullptr);
      } else {
        const Tensor<T>& bias = p[n + ".bias"];
        y = ops::conv2d(h, p[n + ".weight"], &bias, geometry(i));
      }
      Tensor<T> next = ops::leaky_relu(y, slope);
      if (tape) {
        tape->conv_in.push_back(std::move(h));
        tape->pre_act.push_back(std::move(y));
        tape->norm.push_back(std::move(nc));
      }
      h = std::move(next);
    }
    const Tensor<T>& hb = p["head.bias"];
    Tensor<T> out = ops::conv2d(h, p["head.weight"], &hb, ops::ConvGeometry{4, 1, 1});
    if (tape) {
      tape->conv_in.push_back(std::move(h));
      tape->probs = ops::sigmoid(out);
    }
    return out;
  }

  Tensor<T> forward(const ParamSet<T>& p, const Tensor<T>& condition, const Tensor<T>& image) const {
    return ops::sigmoid(logits(p, condition, image));
  }

  /// Backpropagates d(loss)/d(logits). Parameter gradients are accumulated only when `grads` is set.
  PairGrads<T> backward(const ParamSet<T>& p, const DiscriminatorTape<T>& t, const Tensor<T>& d_logits,
                        ParamSet<T>* grads, bool need_input_grad = true) const {
    const T slope = T(kLeakySlope);
    const int layers = body_layers();
    const bool pg = grads != nullptr;
    auto hg = ops::conv2d_backward(t.conv_in[layers], p["head.weight"], true, d_logits, ops::ConvGeometry{4, 1, 1},
                                   true, pg);
    if (grads) {
      grads->accumulate("head.weight", hg.weight);
      grads->accumulate("head.bias", hg.bias);
    }
    Tensor<T> d = std::move(hg.input);
    for (int i = layers - 1; i >= 0; --i) {
      const std::string n = "d" + std::to_string(i);
      Tensor<T> d_pre = ops::leaky_relu_backward(t.pre_act[i], d, slope);
      if (has_norm(i)) {
        auto ng = ops::instance_norm_backward(t.norm[i], p[n + ".norm.gamma"], d_pre);
        if (grads) {
          grads->accumulate(n + ".norm.gamma", ng.gamma);
          grads->accumulate(n + ".norm.beta", ng.beta);
        }
        d_pre = std::move(ng.input);
      }
      auto cg = ops::conv2d_backward(t.conv_in[i], p[n + ".weight"], !has_norm(i), d_pre, geometry(i),
                                     i > 0 || need_input_grad, pg);
      if (grads) {
        grads->accumulate(n + ".weight", cg.weight);
        if (!has_norm(i)) grads->accumulate(n + ".bias", cg.bias);
      }
      d = std::move(cg.input);
    }
    if (!need_input_grad) return {};
    auto [dc, di] = ops::split_channels(d, cfg_.condition_channels);
    return {std::move(dc), std::move(di)};
  }

 private:
  DiscriminatorConfig cfg_;
};

template <typename T = float>
ParamSet<T> build_discriminator(const DiscriminatorConfig& config, std::uint64_t seed) {
  return Discriminator<T>(config).init(seed);
}

/// Grid of real/fake probabilities, shape (N,1,G,G), every entry in (0,1).
template <typename T>
Tensor<T> discriminator_forward(const ParamSet<T>& params, const Tensor<T>& condition, const Tensor<T>& image) {
  return Discriminator<T>(DiscriminatorConfig::from_json(params.config())).forward(params, condition, image);
}

}  // namespace autopainter
