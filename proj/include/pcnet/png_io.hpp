#pragma once

// Thin libpng wrapper: 8/16-bit gray and 8-bit RGB in, same out.

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "pcnet/error.hpp"

namespace pcnet::png {

struct Raw {
  std::size_t width = 0, height = 0;
  std::size_t channels = 0;  // 1 (gray) or 3 (rgb) after normalization
  int bit_depth = 8;         // 8 or 16
  std::vector<std::uint16_t> samples;  // row-major, interleaved
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Error path of libpng. setjmp/longjmp stays inside the C-only sections below.
inline void on_error(png_structp png, png_const_charp) { std::longjmp(png_jmpbuf(png), 1); }
inline void on_warning(png_structp, png_const_charp) {}

}  // namespace detail

inline Raw read(const std::string& path) {
  detail::FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw DecodeError("cannot open " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw DecodeError("not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::on_error, detail::on_warning);
  if (!png) throw DecodeError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  Raw raw;
  std::vector<png_byte> buffer;
  std::vector<png_bytep> rows;
  volatile bool failed = false;
  if (setjmp(png_jmpbuf(png))) {
    failed = true;
  } else {
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    raw.width = png_get_image_width(png, info);
    raw.height = png_get_image_height(png, info);
    raw.bit_depth = png_get_bit_depth(png, info);
    raw.channels = png_get_channels(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    buffer.resize(stride * raw.height);
    rows.resize(raw.height);
    for (std::size_t y = 0; y < raw.height; ++y) rows[y] = buffer.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (failed) throw DecodeError("corrupt PNG data: " + path);
  if (raw.channels != 1 && raw.channels != 3) throw DecodeError("unsupported channel count in " + path);

  const std::size_t n = raw.width * raw.height * raw.channels;
  raw.samples.resize(n);
  if (raw.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i)
      raw.samples[i] = static_cast<std::uint16_t>((buffer[2 * i] << 8) | buffer[2 * i + 1]);  // big-endian on disk
  } else {
    for (std::size_t i = 0; i < n; ++i) raw.samples[i] = buffer[i];
  }
  return raw;
}

// Writes `samples` (interleaved, channels 1 or 3, bit_depth 8 or 16).
inline void write(const std::string& path, const Raw& raw) {
  if ((raw.channels != 1 && raw.channels != 3) || (raw.bit_depth != 8 && raw.bit_depth != 16))
    throw UsageError("png::write: unsupported format");
  const std::size_t bytes = raw.bit_depth / 8;
  const std::size_t stride = raw.width * raw.channels * bytes;
  std::vector<png_byte> buffer(stride * raw.height);
  for (std::size_t i = 0; i < raw.samples.size(); ++i) {
    if (bytes == 2) {
      buffer[2 * i] = static_cast<png_byte>(raw.samples[i] >> 8);
      buffer[2 * i + 1] = static_cast<png_byte>(raw.samples[i] & 0xff);
    } else {
      buffer[i] = static_cast<png_byte>(raw.samples[i]);
    }
  }
  std::vector<png_bytep> rows(raw.height);
  for (std::size_t y = 0; y < raw.height; ++y) rows[y] = buffer.data() + y * stride;

  detail::FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw DataError("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::on_error, detail::on_warning);
  if (!png) throw DataError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  volatile bool failed = false;
  if (setjmp(png_jmpbuf(png))) {
    failed = true;
  } else {
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(raw.width), static_cast<png_uint_32>(raw.height), raw.bit_depth,
                 raw.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  if (failed) throw DataError("failed writing PNG " + path);
}

}  // namespace pcnet::png
