#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "autopainter/errors.hpp"
#include "autopainter/image.hpp"

namespace autopainter {

namespace detail {

struct PngReadBuffer {
  const unsigned char* bytes;
  std::size_t size;
  std::size_t offset;
};

inline void png_read_from_buffer(png_structp png, png_bytep out, png_size_t count) {
  auto* buf = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
  if (buf->offset + count > buf->size) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, buf->bytes + buf->offset, count);
  buf->offset += count;
}

inline void png_write_to_vector(png_structp png, png_bytep data, png_size_t count) {
  auto* out = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + count);
}

inline void png_flush_noop(png_structp) {}

[[noreturn]] inline void png_throw(png_structp png, png_const_charp msg) {
  (void)png;
  throw LoadError(std::string("png: ") + msg);
}

inline void png_warn_ignore(png_structp, png_const_charp) {}

}  // namespace detail

/// Decodes PNG bytes. Gray(+alpha) yields 1 channel, RGB(A)/palette yields 3; alpha is dropped.
inline RasterImage decode_png(std::span<const unsigned char> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw LoadError("not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_throw,
                                           detail::png_warn_ignore);
  png_infop info = png_create_info_struct(png);
  detail::PngReadBuffer buffer{bytes.data(), bytes.size(), 0};
  RasterImage image;
  try {
    png_set_read_fn(png, &buffer, detail::png_read_from_buffer);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_packing(png);
    png_set_strip_alpha(png);
    const int color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
      png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_read_update_info(png, info);
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);
    std::vector<unsigned char> raw(static_cast<std::size_t>(height) * png_get_rowbytes(png, info));
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = raw.data() + y * png_get_rowbytes(png, info);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);

    // tRNS expansion may reintroduce alpha after strip; keep only colour planes.
    const int colour = (channels >= 3) ? 3 : 1;
    image = RasterImage(height, width, colour);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        for (int c = 0; c < colour; ++c)
          image.at(y, x, c) = rows[y][x * channels + c] / 255.0f;
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

/// 8-bit PNG encoding with fixed compression settings (output bytes depend only on pixels).
inline std::vector<unsigned char> encode_png(const RasterImage& image) {
  std::vector<unsigned char> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_throw,
                                            detail::png_warn_ignore);
  png_infop info = png_create_info_struct(png);
  try {
    png_set_write_fn(png, &out, detail::png_write_to_vector, detail::png_flush_noop);
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_FILTER_NONE);
    png_set_IHDR(png, info, image.width, image.height, 8,
                 image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(static_cast<std::size_t>(image.width) * image.channels);
    for (int y = 0; y < image.height; ++y) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        const float v = std::clamp(image.data[y * row.size() + i], 0.0f, 1.0f);
        row[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError("short write to " + path.string());
}

inline RasterImage read_png(const std::filesystem::path& path) {
  try {
    return decode_png(read_file_bytes(path));
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

inline void write_png(const std::filesystem::path& path, const RasterImage& image) {
  write_file_bytes(path, encode_png(image));
}

}  // namespace autopainter
