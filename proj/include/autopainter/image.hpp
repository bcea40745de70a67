#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "autopainter/errors.hpp"
#include "autopainter/tensor.hpp"

namespace autopainter {

/// H x W x C intensity image, interleaved row-major, values in [0,1].
struct RasterImage {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  RasterImage() = default;
  RasterImage(int h, int w, int c, float fill = 0.0f) : height(h), width(w), channels(c) {
    if (h < 1 || w < 1) throw ParameterError("image dimensions must be positive");
    if (c != 1 && c != 3) throw ParameterError("image must have 1 or 3 channels");
    data.assign(static_cast<std::size_t>(h) * w * c, fill);
  }

  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }

  float& at(int y, int x, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool in_unit_range() const {
    return std::all_of(data.begin(), data.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
  }

  friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

inline void clamp_unit(RasterImage& image) {
  for (float& v : image.data) v = std::clamp(v, 0.0f, 1.0f);
}

/// Replicates a single-channel image to RGB; 3-channel input is returned as is.
inline RasterImage replicate_rgb(const RasterImage& gray) {
  if (gray.channels == 3) return gray;
  RasterImage out(gray.height, gray.width, 3);
  for (std::size_t i = 0; i < gray.pixel_count(); ++i)
    for (int c = 0; c < 3; ++c) out.data[i * 3 + c] = gray.data[i];
  return out;
}

/// Maps [0,1] intensities to [-1,1] and writes them into sample `n` of an NCHW tensor.
template <typename T>
void write_normalized(const RasterImage& image, Tensor<T>& dst, std::int64_t n,
                      std::int64_t channel_offset = 0) {
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x)
        dst.at(n, channel_offset + c, y, x) = static_cast<T>(2.0 * image.at(y, x, c) - 1.0);
}

inline float normalize_intensity(float v) { return 2.0f * v - 1.0f; }
inline float denormalize_intensity(float v) { return (v + 1.0f) * 0.5f; }

/// Extracts sample `n` (channels [offset, offset+count)) of an NCHW tensor back to [0,1].
template <typename T>
RasterImage to_raster(const Tensor<T>& src, std::int64_t n, int channel_count = 3,
                      std::int64_t channel_offset = 0) {
  const int h = static_cast<int>(src.dim(2));
  const int w = static_cast<int>(src.dim(3));
  RasterImage out(h, w, channel_count);
  for (int c = 0; c < channel_count; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float v = static_cast<float>((src.at(n, channel_offset + c, y, x) + T{1}) / T{2});
        out.at(y, x, c) = std::clamp(v, 0.0f, 1.0f);
      }
  return out;
}

}  // namespace autopainter
