#pragma once
// Synthetic flat-shaded "cartoon" frames for tests: solid background, a few filled
// discs and boxes with dark outlines.

#include <autopainter/autopainter.hpp>

#include <cmath>
#include <random>
#include <vector>

namespace testsupport {

using autopainter::RasterImage;

inline RasterImage make_cartoon(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> col(0.15f, 0.95f);
  std::uniform_real_distribution<float> pos(0.15f, 0.85f);
  std::uniform_real_distribution<float> rad(0.1f, 0.28f);
  RasterImage img(size, size, 3);
  const float bg[3] = {col(rng), col(rng), col(rng)};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = bg[c];
  const int shapes = 3;
  for (int s = 0; s < shapes; ++s) {
    const float fill[3] = {col(rng), col(rng), col(rng)};
    const float cx = pos(rng) * size, cy = pos(rng) * size, r = rad(rng) * size;
    const bool disc = (s % 2) == 0;
    const float line = std::max(1.0f, size / 48.0f);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const float dx = x + 0.5f - cx, dy = y + 0.5f - cy;
        const float d = disc ? std::sqrt(dx * dx + dy * dy) - r : std::max(std::abs(dx), std::abs(dy)) - r;
        if (d > 0) continue;
        const bool edge = d > -line;
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = edge ? 0.08f : fill[c];
      }
  }
  return img;
}

/// Sketch plus synthesized hint for a cartoon frame: returns (hint RGB, target).
inline std::pair<RasterImage, RasterImage> make_pair(int size, std::uint64_t seed) {
  RasterImage target = make_cartoon(size, seed);
  RasterImage sketch = autopainter::xdog(autopainter::to_grayscale(target), autopainter::XdogParams{});
  autopainter::BlockGrowthParams bp;
  bp.block_side = std::max(2, size / 16);
  bp.step = bp.block_side;
  bp.blur_sigma = size / 64.0;
  auto hint = autopainter::synthesize_hints(target, sketch, bp, seed ^ 0x5eedULL);
  return {hint.image, target};
}

inline autopainter::Batch<float> make_batch(int size, int count, std::uint64_t seed) {
  std::vector<RasterImage> in, tg;
  for (int i = 0; i < count; ++i) {
    auto [h, t] = make_pair(size, seed + static_cast<std::uint64_t>(i));
    in.push_back(h);
    tg.push_back(t);
  }
  return autopainter::stack_batch<float>(in, tg);
}

}  // namespace testsupport
