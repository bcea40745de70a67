#pragma once

#include <cmath>
#include <vector>

#include "autopainter/errors.hpp"
#include "autopainter/image.hpp"

namespace autopainter {

/// Luminance 0.299R + 0.587G + 0.114B; single-channel input is returned unchanged.
inline RasterImage to_grayscale(const RasterImage& image) {
  if (image.channels == 1) return image;
  RasterImage out(image.height, image.width, 1);
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    const float* px = &image.data[i * 3];
    out.data[i] = 0.299f * px[0] + 0.587f * px[1] + 0.114f * px[2];
  }
  return out;
}

/// Mirror an out-of-range index back into [0, n) without repeating the edge sample.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

/// Normalised 1-D Gaussian taps, radius ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += taps[i + radius];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

/// Separable Gaussian blur with reflect padding. sigma == 0 is the identity.
inline RasterImage gaussian_blur(const RasterImage& image, double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ParameterError("gaussian_blur: sigma must be >= 0");
  if (sigma == 0.0) return image;
  const std::vector<double> taps = gaussian_kernel(sigma);
  const int radius = static_cast<int>(taps.size() / 2);
  const int h = image.height, w = image.width, ch = image.channels;

  std::vector<double> horizontal(image.data.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k)
          acc += taps[k + radius] * image.at(y, reflect_index(x + k, w), c);
        horizontal[(static_cast<std::size_t>(y) * w + x) * ch + c] = acc;
      }

  RasterImage out(h, w, ch);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k)
          acc += taps[k + radius] *
                 horizontal[(static_cast<std::size_t>(reflect_index(y + k, h)) * w + x) * ch + c];
        out.at(y, x, c) = static_cast<float>(acc);
      }
  return out;
}

struct XdogParams {
  double gamma = 0.98;
  double sigma = 1.0;
  double k = 1.6;
  double epsilon = 0.01;
  double phi = 200.0;

  void validate() const {
    if (!(sigma > 0.0)) throw ParameterError("xdog: sigma must be > 0");
    if (!(k > 1.0)) throw ParameterError("xdog: k must be > 1");
    if (!(phi > 0.0)) throw ParameterError("xdog: phi must be > 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ParameterError("xdog: gamma must lie in (0, 1]");
  }
};

/// Thresholded difference of Gaussians. White (1) is background, dark values are lines.
inline RasterImage xdog(const RasterImage& image, const XdogParams& params) {
  params.validate();
  const RasterImage gray = to_grayscale(image);
  const RasterImage narrow = gaussian_blur(gray, params.sigma);
  const RasterImage wide = gaussian_blur(gray, params.k * params.sigma);
  RasterImage out(gray.height, gray.width, 1);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double response = double(narrow.data[i]) - params.gamma * double(wide.data[i]);
    const double e = response >= params.epsilon
                         ? 1.0
                         : 1.0 + std::tanh(params.phi * (response - params.epsilon));
    out.data[i] = static_cast<float>(std::clamp(e, 0.0, 1.0));
  }
  return out;
}

/// One sketch per gamma; the remaining parameters come from `base`.
inline std::vector<RasterImage> extract_sketch_set(const RasterImage& image, const std::vector<double>& gammas,
                                                   const XdogParams& base = {}) {
  if (gammas.empty()) throw ParameterError("extract_sketch_set: gamma list is empty");
  std::vector<RasterImage> sketches;
  sketches.reserve(gammas.size());
  for (double g : gammas) {
    XdogParams p = base;
    p.gamma = g;
    sketches.push_back(xdog(image, p));
  }
  return sketches;
}

inline const std::vector<double>& default_sketch_gammas() {
  static const std::vector<double> gammas{0.96, 0.97, 0.98, 0.99};
  return gammas;
}

}  // namespace autopainter
