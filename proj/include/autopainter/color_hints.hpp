#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autopainter/errors.hpp"
#include "autopainter/image.hpp"
#include "autopainter/sketch.hpp"

namespace autopainter {

struct PixelCoord {
  int x = 0;
  int y = 0;
  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

using Rgb = std::array<float, 3>;

struct BlockGrowthParams {
  double blur_sigma = 8.0;
  int min_blocks = 2;
  int max_blocks = 8;
  int block_side = 12;
  int step = 12;
  double threshold = 0.12;
  int max_steps = 6;

  void validate() const {
    if (!(blur_sigma >= 0.0)) throw ParameterError("hints: blur_sigma must be >= 0");
    if (min_blocks < 1 || min_blocks > max_blocks)
      throw ParameterError("hints: need 1 <= min_blocks <= max_blocks");
    if (block_side < 1) throw ParameterError("hints: block_side must be >= 1");
    if (step < 1) throw ParameterError("hints: step must be >= 1");
    if (!(threshold > 0.0)) throw ParameterError("hints: threshold must be > 0");
    if (max_steps < 1) throw ParameterError("hints: max_steps must be >= 1");
  }
};

/// A run of b x b patches along the (+1,+1) diagonal. `cells` holds top-left anchors.
struct ColorBlock {
  std::vector<PixelCoord> cells;
  int side = 0;
  Rgb color{};
};

/// Sketch replicated to RGB with colour blocks painted on top. `mask` marks painted pixels.
struct HintImage {
  RasterImage image;
  std::vector<std::uint8_t> mask;
  std::vector<ColorBlock> blocks;
};

namespace detail {

inline std::array<double, 3> patch_sum(const RasterImage& img, PixelCoord anchor, int side) {
  std::array<double, 3> sum{};
  for (int y = anchor.y; y < anchor.y + side; ++y)
    for (int x = anchor.x; x < anchor.x + side; ++x)
      for (int c = 0; c < 3; ++c) sum[c] += img.at(y, x, c);
  return sum;
}

inline bool patch_fits(const RasterImage& img, PixelCoord anchor, int side) {
  return anchor.x >= 0 && anchor.y >= 0 && anchor.x + side <= img.width && anchor.y + side <= img.height;
}

}  // namespace detail

/// Grows a block from `seed` along the diagonal. The next patch is appended while the L2
/// distance between its mean colour and the running mean of all pixels covered so far stays
/// within `threshold`, it remains in bounds, and fewer than max_steps steps were taken.
inline ColorBlock grow_block(const RasterImage& blurred, PixelCoord seed, const BlockGrowthParams& params) {
  if (blurred.channels != 3) throw ParameterError("grow_block: blurred image must be RGB");
  const int b = params.block_side;
  if (!detail::patch_fits(blurred, seed, b))
    throw ParameterError("grow_block: seed patch at (" + std::to_string(seed.x) + "," + std::to_string(seed.y) +
                         ") is out of bounds");

  ColorBlock block;
  block.side = b;
  block.cells.push_back(seed);

  // Covered pixels as a mask over the block's bounding box, so overlapping cells
  // (step < side) are counted once in the running mean.
  const int extent = b + params.step * params.max_steps;
  std::vector<std::uint8_t> covered(static_cast<std::size_t>(extent) * extent, 0);
  std::array<double, 3> sum{};
  std::size_t count = 0;
  auto cover = [&](PixelCoord anchor) {
    for (int y = anchor.y; y < anchor.y + b; ++y)
      for (int x = anchor.x; x < anchor.x + b; ++x) {
        auto& flag = covered[static_cast<std::size_t>(y - seed.y) * extent + (x - seed.x)];
        if (flag) continue;
        flag = 1;
        for (int c = 0; c < 3; ++c) sum[c] += blurred.at(y, x, c);
        ++count;
      }
  };
  cover(seed);

  PixelCoord current = seed;
  for (int steps = 0; steps < params.max_steps; ++steps) {
    const PixelCoord next{current.x + params.step, current.y + params.step};
    if (!detail::patch_fits(blurred, next, b)) break;
    const auto next_sum = detail::patch_sum(blurred, next, b);
    const double area = static_cast<double>(b) * b;
    double dist2 = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double d = sum[c] / count - next_sum[c] / area;
      dist2 += d * d;
    }
    if (std::sqrt(dist2) > params.threshold) break;
    block.cells.push_back(next);
    cover(next);
    current = next;
  }
  for (int c = 0; c < 3; ++c) block.color[c] = static_cast<float>(sum[c] / count);
  return block;
}

/// Training-time hint synthesis: blur the target, grow K random blocks, paint the blurred
/// target's pixels over the RGB-replicated sketch. Deterministic for a given seed.
inline HintImage synthesize_hints(const RasterImage& target, const RasterImage& sketch,
                                  const BlockGrowthParams& params, std::uint64_t seed) {
  params.validate();
  if (target.channels != 3) throw ParameterError("synthesize_hints: target must be RGB");
  if (sketch.channels != 1) throw ParameterError("synthesize_hints: sketch must be single-channel");
  if (target.height != sketch.height || target.width != sketch.width)
    throw ParameterError("synthesize_hints: target and sketch dimensions differ");
  if (params.block_side > target.width || params.block_side > target.height)
    throw ParameterError("synthesize_hints: block_side exceeds image size");

  const RasterImage blurred = gaussian_blur(target, params.blur_sigma);
  HintImage hint{replicate_rgb(sketch), std::vector<std::uint8_t>(sketch.pixel_count(), 0), {}};

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> count_dist(params.min_blocks, params.max_blocks);
  std::uniform_int_distribution<int> x_dist(0, target.width - params.block_side);
  std::uniform_int_distribution<int> y_dist(0, target.height - params.block_side);
  const int k = count_dist(rng);
  for (int i = 0; i < k; ++i) {
    const int x = x_dist(rng);
    const int y = y_dist(rng);
    ColorBlock block = grow_block(blurred, {x, y}, params);
    for (const PixelCoord& cell : block.cells)
      for (int py = cell.y; py < cell.y + block.side; ++py)
        for (int px = cell.x; px < cell.x + block.side; ++px) {
          for (int c = 0; c < 3; ++c) hint.image.at(py, px, c) = blurred.at(py, px, c);
          hint.mask[static_cast<std::size_t>(py) * target.width + px] = 1;
        }
    hint.blocks.push_back(std::move(block));
  }
  return hint;
}

struct Scribble {
  std::vector<PixelCoord> points;
  Rgb color{};
  int radius = 0;
};

inline Rgb parse_hex_color(const std::string& text) {
  const bool ok = text.size() == 7 && text[0] == '#' &&
                  std::all_of(text.begin() + 1, text.end(), [](unsigned char ch) { return std::isxdigit(ch); });
  if (!ok) throw RequestError("colour must look like #RRGGBB: " + text);
  Rgb rgb{};
  for (int c = 0; c < 3; ++c) rgb[c] = std::stoi(text.substr(1 + 2 * c, 2), nullptr, 16) / 255.0f;
  return rgb;
}

inline std::string format_hex_color(const Rgb& rgb) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02X%02X%02X", static_cast<int>(std::lround(std::clamp(rgb[0], 0.f, 1.f) * 255)),
                static_cast<int>(std::lround(std::clamp(rgb[1], 0.f, 1.f) * 255)),
                static_cast<int>(std::lround(std::clamp(rgb[2], 0.f, 1.f) * 255)));
  return buf;
}

/// Parses the shared scribble wire format: [{points: [[x,y],...], color: "#RRGGBB", radius: int}].
inline std::vector<Scribble> parse_scribbles(const nlohmann::json& doc) {
  if (!doc.is_array()) throw RequestError("scribbles: expected a JSON array");
  std::vector<Scribble> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& item = doc[i];
    const std::string where = "scribble " + std::to_string(i);
    if (!item.is_object() || !item.contains("points") || !item.contains("color") || !item.contains("radius"))
      throw RequestError(where + ": needs points, color and radius");
    for (const auto& [key, value] : item.items())
      if (key != "points" && key != "color" && key != "radius") throw RequestError(where + ": unknown field " + key);
    Scribble s;
    if (!item["radius"].is_number_integer() || item["radius"].get<int>() < 0)
      throw RequestError(where + ": radius must be a non-negative integer");
    s.radius = item["radius"].get<int>();
    if (!item["color"].is_string()) throw RequestError(where + ": color must be a string");
    s.color = parse_hex_color(item["color"].get<std::string>());
    if (!item["points"].is_array() || item["points"].empty())
      throw RequestError(where + ": points must be a non-empty array");
    for (const auto& p : item["points"]) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() || !p[1].is_number_integer() ||
          p[0].get<long long>() < 0 || p[1].get<long long>() < 0)
        throw RequestError(where + ": each point must be [x, y] non-negative integers");
      s.points.push_back({p[0].get<int>(), p[1].get<int>()});
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline nlohmann::json scribbles_to_json(const std::vector<Scribble>& scribbles) {
  nlohmann::json doc = nlohmann::json::array();
  for (const Scribble& s : scribbles) {
    nlohmann::json points = nlohmann::json::array();
    for (const PixelCoord& p : s.points) points.push_back({p.x, p.y});
    doc.push_back({{"points", points}, {"color", format_hex_color(s.color)}, {"radius", s.radius}});
  }
  return doc;
}

/// Paints flat-colour disks swept along each polyline over the RGB-replicated sketch.
/// Later scribbles overwrite earlier ones.
inline HintImage rasterize_user_scribbles(const RasterImage& sketch, const std::vector<Scribble>& scribbles) {
  HintImage hint{replicate_rgb(to_grayscale(sketch)), std::vector<std::uint8_t>(sketch.pixel_count(), 0), {}};
  const int w = sketch.width, h = sketch.height;
  for (std::size_t i = 0; i < scribbles.size(); ++i) {
    const Scribble& s = scribbles[i];
    if (s.radius < 0) throw ParameterError("scribble " + std::to_string(i) + ": negative radius");
    for (float c : s.color)
      if (!(c >= 0.0f && c <= 1.0f)) throw ParameterError("scribble " + std::to_string(i) + ": colour outside [0,1]");
    for (const PixelCoord& p : s.points)
      if (p.x < 0 || p.y < 0 || p.x >= w || p.y >= h)
        throw ParameterError("scribble " + std::to_string(i) + ": point (" + std::to_string(p.x) + "," +
                             std::to_string(p.y) + ") is out of bounds");
  }
  const double eps = 1e-9;
  for (const Scribble& s : scribbles) {
    if (s.points.empty()) continue;
    const double r = s.radius;
    auto paint = [&](int x, int y) {
      for (int c = 0; c < 3; ++c) hint.image.at(y, x, c) = s.color[c];
      hint.mask[static_cast<std::size_t>(y) * w + x] = 1;
    };
    for (std::size_t k = 0; k < s.points.size(); ++k) {
      const PixelCoord a = s.points[k];
      const PixelCoord b = s.points[std::min(k + 1, s.points.size() - 1)];
      const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - r)));
      const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + r)));
      const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - r)));
      const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + r)));
      const double dx = b.x - a.x, dy = b.y - a.y;
      const double len2 = dx * dx + dy * dy;
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          double t = len2 > 0 ? ((x - a.x) * dx + (y - a.y) * dy) / len2 : 0.0;
          t = std::clamp(t, 0.0, 1.0);
          const double ex = a.x + t * dx - x, ey = a.y + t * dy - y;
          if (ex * ex + ey * ey <= r * r + eps) paint(x, y);
        }
    }
  }
  return hint;
}

}  // namespace autopainter
