#pragma once

#include <array>
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

/// VGG16 convolutional trunk: channel widths of the 13 conv layers; 0 marks a 2x2 max-pool.
inline const std::vector<int>& vgg16_layout() {
  static const std::vector<int> layout{64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512};
  return layout;
}

/// torchvision-style names conv<block>_<index> for the 13 conv layers.
inline std::vector<std::string> vgg16_conv_names() {
  std::vector<std::string> names;
  int block = 1, index = 1;
  for (int width : vgg16_layout()) {
    if (width == 0) {
      ++block;
      index = 1;
      continue;
    }
    names.push_back("conv" + std::to_string(block) + "_" + std::to_string(index++));
  }
  return names;
}

/// Frozen feature map phi_j: activations after the ReLU of the j-th 3x3 convolution of VGG16.
/// Inputs are generator-range images in [-1,1]; they are mapped to [0,1] and re-normalised with
/// ImageNet statistics before the first convolution.
template <typename T>
class Vgg16Extractor {
 public:
  struct Tape {
    std::vector<Tensor<T>> conv_in;  // input to each conv (for weight/input grads)
    std::vector<Tensor<T>> pre_act;
    std::vector<std::vector<std::size_t>> pool_argmax;
    std::vector<Shape> pool_in_shape;
  };

  static constexpr std::array<double, 3> kMean{0.485, 0.456, 0.406};
  static constexpr std::array<double, 3> kStd{0.229, 0.224, 0.225};

  explicit Vgg16Extractor(ParamSet<T> params) : params_(std::move(params)) {
    tap_layer_ = params_.config().value("tap_layer", 4);
    if (tap_layer_ < 1 || tap_layer_ > 13) throw ConfigError("feature extractor: tap_layer must be in [1, 13]");
    const auto names = vgg16_conv_names();
    for (int i = 0; i < tap_layer_; ++i)
      if (!params_.contains(names[i] + ".weight") || !params_.contains(names[i] + ".bias"))
        throw ConfigError("feature extractor: missing weights for " + names[i]);
  }

  /// Seeded He-normal initialisation of the layers up to `tap_layer`. Stand-in when no
  /// pretrained weights are available; provenance is recorded in the config.
  static ParamSet<T> surrogate_params(int tap_layer, std::uint64_t seed) {
    nlohmann::json cfg{{"kind", "vgg16_features"},
                       {"tap_layer", tap_layer},
                       {"provenance", "surrogate: he-normal init, seed " + std::to_string(seed)}};
    ParamSet<T> p(cfg);
    std::mt19937_64 rng(seed);
    const auto names = vgg16_conv_names();
    int in = 3, conv = 0;
    for (int width : vgg16_layout()) {
      if (conv >= tap_layer) break;
      if (width == 0) continue;
      p.add(names[conv] + ".weight", gaussian_tensor<T>({width, in, 3, 3}, std::sqrt(2.0 / (in * 9)), rng));
      p.add(names[conv] + ".bias", Tensor<T>({width}));
      in = width;
      ++conv;
    }
    return p;
  }

  int tap_layer() const { return tap_layer_; }
  const ParamSet<T>& params() const { return params_; }

  Tensor<T> forward(const Tensor<T>& images, Tape* tape = nullptr) const {
    if (images.rank() != 4 || images.dim(1) != 3)
      throw InferenceError("feature extractor: expected (N,3,H,W), got " + shape_string(images.shape()));
    Tensor<T> h(images.shape());
    const std::int64_t n = images.dim(0), plane = images.dim(2) * images.dim(3);
    for (std::int64_t b = 0; b < n; ++b)
      for (int c = 0; c < 3; ++c)
        for (std::int64_t i = 0; i < plane; ++i) {
          const std::size_t idx = static_cast<std::size_t>((b * 3 + c) * plane + i);
          h[idx] = static_cast<T>(((images[idx] + T(1)) * T(0.5) - T(kMean[c])) / T(kStd[c]));
        }
    if (tape) *tape = Tape{};
    const auto names = vgg16_conv_names();
    const ops::ConvGeometry g{3, 1, 1};
    int conv = 0;
    for (int width : vgg16_layout()) {
      if (conv >= tap_layer_) break;
      if (width == 0) {
        std::vector<std::size_t> argmax;
        Shape in_shape = h.shape();
        h = ops::max_pool2(h, tape ? &argmax : nullptr);
        if (tape) {
          tape->pool_argmax.push_back(std::move(argmax));
          tape->pool_in_shape.push_back(std::move(in_shape));
        }
        continue;
      }
      const Tensor<T>& bias = params_[names[conv] + ".bias"];
      Tensor<T> y = ops::conv2d(h, params_[names[conv] + ".weight"], &bias, g);
      Tensor<T> next = ops::relu(y);
      if (tape) {
        tape->conv_in.push_back(std::move(h));
        tape->pre_act.push_back(std::move(y));
      }
      h = std::move(next);
      ++conv;
    }
    return h;
  }

  /// d(loss)/d(images) given d(loss)/d(features). Weights are frozen; no parameter grads.
  Tensor<T> backward(const Tape& tape, const Tensor<T>& d_features) const {
    const auto names = vgg16_conv_names();
    const ops::ConvGeometry g{3, 1, 1};
    // Replay the layout in reverse over the layers actually executed.
    std::vector<int> executed;
    int conv = 0;
    for (int width : vgg16_layout()) {
      if (conv >= tap_layer_) break;
      executed.push_back(width);
      if (width != 0) ++conv;
    }
    Tensor<T> d = d_features;
    int pool = static_cast<int>(tape.pool_argmax.size());
    for (auto it = executed.rbegin(); it != executed.rend(); ++it) {
      if (*it == 0) {
        --pool;
        d = ops::max_pool2_backward(tape.pool_in_shape[pool], tape.pool_argmax[pool], d);
        continue;
      }
      --conv;
      Tensor<T> d_pre = ops::relu_backward(tape.pre_act[conv], d);
      d = ops::conv2d_backward(tape.conv_in[conv], params_[names[conv] + ".weight"], true, d_pre, g, true, false).input;
    }
    const std::int64_t n = d.dim(0), plane = d.dim(2) * d.dim(3);
    for (std::int64_t b = 0; b < n; ++b)
      for (int c = 0; c < 3; ++c)
        for (std::int64_t i = 0; i < plane; ++i) d[static_cast<std::size_t>((b * 3 + c) * plane + i)] *= T(0.5 / kStd[c]);
    return d;
  }

 private:
  ParamSet<T> params_;
  int tap_layer_ = 4;
};

/// phi(x) = x. Reduces the feature loss to the mean squared pixel error.
template <typename T>
struct IdentityExtractor {
  struct Tape {};
  Tensor<T> forward(const Tensor<T>& x, Tape* = nullptr) const { return x; }
  Tensor<T> backward(const Tape&, const Tensor<T>& d) const { return d; }
};

}  // namespace autopainter
