#pragma once

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "aot/errors.hpp"
#include "aot/image.hpp"

namespace aot {

namespace png_detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace png_detail

// Reads an 8-bit PNG. Grayscale files come back as 1 channel, everything
// else (palette, RGB, RGBA, gray+alpha) as 3-channel RGB.
inline ImageBuffer read_png(const std::filesystem::path& path) {
  png_detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw StorageError("cannot open image: " + path.string());

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw StorageError("libpng init failed");
  }
  std::vector<png_bytep> rows;
  ImageBuffer img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw StorageError("failed to decode PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw StorageError("unsupported PNG layout: " + path.string());
  }
  img = ImageBuffer(static_cast<int>(w), static_cast<int>(h), channels);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = img.pixels.data() + static_cast<std::size_t>(y) * w * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void write_png(const std::filesystem::path& path,
                      const ImageBuffer& img) {
  if (img.width < 1 || img.height < 1)
    throw ContractViolation("write_png: empty image");
  png_detail::FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw StorageError("cannot write image: " + path.string());

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw StorageError("libpng init failed");
  }
  std::vector<png_bytep> rows(img.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw StorageError("failed to encode PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(
        img.pixels.data() +
        static_cast<std::size_t>(y) * img.width * img.channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

namespace png_detail {

struct MemoryReader {
  const unsigned char* data;
  std::size_t size;
  std::size_t pos = 0;
};

inline void mem_read(png_structp png, png_bytep out, png_size_t n) {
  auto* r = static_cast<MemoryReader*>(png_get_io_ptr(png));
  if (r->pos + n > r->size) png_error(png, "read past end of buffer");
  std::copy(r->data + r->pos, r->data + r->pos + n, out);
  r->pos += n;
}

inline void mem_write(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), n);
}

inline void mem_flush(png_structp) {}

}  // namespace png_detail

// In-memory PNG encoding, used for base64 image parts on the wire.
inline std::string encode_png(const ImageBuffer& img) {
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw StorageError("libpng init failed");
  }
  std::string out;
  std::vector<png_bytep> rows(img.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw StorageError("failed to encode PNG to memory");
  }
  png_set_write_fn(png, &out, png_detail::mem_write, png_detail::mem_flush);
  png_set_IHDR(png, info, img.width, img.height, 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(
        img.pixels.data() +
        static_cast<std::size_t>(y) * img.width * img.channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

inline ImageBuffer decode_png(std::string_view bytes) {
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw StorageError("libpng init failed");
  }
  png_detail::MemoryReader reader{
      reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()};
  std::vector<png_bytep> rows;
  ImageBuffer img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw StorageError("failed to decode PNG from memory");
  }
  png_set_read_fn(png, &reader, png_detail::mem_read);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw StorageError("unsupported PNG layout in memory buffer");
  }
  img = ImageBuffer(static_cast<int>(w), static_cast<int>(h), channels);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = img.pixels.data() + static_cast<std::size_t>(y) * w * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

// Masks persist as single-channel PNGs.
inline void write_png(const std::filesystem::path& path, const Mask& mask) {
  ImageBuffer img(mask.width, mask.height, 1);
  img.pixels = mask.values;
  write_png(path, img);
}

inline Mask read_mask_png(const std::filesystem::path& path) {
  ImageBuffer img = to_grayscale(read_png(path));
  Mask m(img.width, img.height, 0);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    m.values[i] = img.pixels[i] >= 128 ? 255 : 0;
  return m;
}

}  // namespace aot
