#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

#include "aot/errors.hpp"
#include "aot/geometry.hpp"
#include "aot/hash.hpp"

namespace aot {

// Row-major 8-bit raster, 1 (gray) or 3 (RGB) channels.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c),
        pixels(static_cast<std::size_t>(w) * h * c, fill) {
    if (w < 1 || h < 1 || (c != 1 && c != 3))
      throw ContractViolation("ImageBuffer: bad dimensions");
  }

  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t& at(int x, int y, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool same_dims(const ImageBuffer& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;
};

// Binary single-channel mask; 255 marks the region a generator may modify,
// 0 marks content that must be preserved. Same polarity in both pipeline
// stages.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;

  Mask() = default;
  Mask(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {
    if (w < 1 || h < 1) throw ContractViolation("Mask: bad dimensions");
    if (fill != 0 && fill != 255) throw ContractViolation("Mask: not binary");
  }

  std::uint8_t at(int x, int y) const {
    return values[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t& at(int x, int y) {
    return values[static_cast<std::size_t>(y) * width + x];
  }
  std::size_t count(std::uint8_t v) const {
    return static_cast<std::size_t>(
        std::count(values.begin(), values.end(), v));
  }

  friend bool operator==(const Mask&, const Mask&) = default;
};

// Stable digest of the raster content; used as fixture/registry key.
inline std::uint64_t image_digest(const ImageBuffer& img) {
  std::uint64_t h = fnv1a64(static_cast<std::uint64_t>(img.width), kFnvOffset);
  h = fnv1a64(static_cast<std::uint64_t>(img.height), h);
  h = fnv1a64(static_cast<std::uint64_t>(img.channels), h);
  return fnv1a64(
      std::string_view(reinterpret_cast<const char*>(img.pixels.data()),
                       img.pixels.size()),
      h);
}

// ITU-R BT.601 luma; 1-channel input is returned unchanged.
inline ImageBuffer to_grayscale(const ImageBuffer& img) {
  if (img.channels == 1) return img;
  ImageBuffer out(img.width, img.height, 1);
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = img.pixels[i * 3 + 0];
    const double g = img.pixels[i * 3 + 1];
    const double b = img.pixels[i * 3 + 2];
    out.pixels[i] = static_cast<std::uint8_t>(
        std::lround(0.299 * r + 0.587 * g + 0.114 * b));
  }
  return out;
}

namespace detail {

inline double lanczos3(double x) {
  x = std::fabs(x);
  if (x >= 3.0) return 0.0;
  if (x < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return 3.0 * std::sin(px) * std::sin(px / 3.0) / (px * px);
}

// One resampling pass along x. `scale` < 1 widens the kernel support so
// downscaling stays antialiased.
inline ImageBuffer lanczos_pass_x(const ImageBuffer& src, int out_w,
                                  double scale) {
  ImageBuffer out(out_w, src.height, src.channels);
  const double support = 3.0 / scale;
  std::vector<double> weights;
  for (int ox = 0; ox < out_w; ++ox) {
    const double center = (ox + 0.5) / scale - 0.5;
    const int lo = static_cast<int>(std::floor(center - support));
    const int hi = static_cast<int>(std::ceil(center + support));
    weights.clear();
    double wsum = 0.0;
    for (int sx = lo; sx <= hi; ++sx) {
      const double w = lanczos3((sx - center) * scale);
      weights.push_back(w);
      wsum += w;
    }
    for (int y = 0; y < src.height; ++y) {
      for (int c = 0; c < src.channels; ++c) {
        double acc = 0.0;
        for (int sx = lo; sx <= hi; ++sx) {
          const int cx = std::clamp(sx, 0, src.width - 1);
          acc += weights[static_cast<std::size_t>(sx - lo)] * src.at(cx, y, c);
        }
        out.at(ox, y, c) = static_cast<std::uint8_t>(
            std::clamp(std::lround(acc / wsum), 0l, 255l));
      }
    }
  }
  return out;
}

inline ImageBuffer transpose(const ImageBuffer& src) {
  ImageBuffer out(src.height, src.width, src.channels);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c) out.at(y, x, c) = src.at(x, y, c);
  return out;
}

}  // namespace detail

// Proportional downscale with separable Lanczos-3 until the image fits in
// max_w x max_h. Never upscales. Returns the image and the applied scale
// (output_w / input_w).
inline std::pair<ImageBuffer, double> resize_to_fit(const ImageBuffer& img,
                                                    int max_w, int max_h) {
  if (max_w < 1 || max_h < 1)
    throw ContractViolation("resize_to_fit: bad max dims");
  if (img.width <= max_w && img.height <= max_h) return {img, 1.0};
  const double s = std::min(static_cast<double>(max_w) / img.width,
                            static_cast<double>(max_h) / img.height);
  const int out_w =
      std::max(1, static_cast<int>(std::lround(img.width * s)));
  const int out_h =
      std::max(1, static_cast<int>(std::lround(img.height * s)));
  ImageBuffer tmp = detail::lanczos_pass_x(img, out_w, s);
  tmp = detail::transpose(tmp);
  tmp = detail::lanczos_pass_x(tmp, out_h, s);
  tmp = detail::transpose(tmp);
  return {std::move(tmp), static_cast<double>(out_w) / img.width};
}

// Places the image on a uniform canvas and returns the canvas plus the
// outpainting mask: 0 over the placed rectangle, 255 over the area the
// generator should fill.
inline std::pair<ImageBuffer, Mask> compose_on_canvas(
    const ImageBuffer& img, int canvas_w, int canvas_h,
    const Placement& placement, std::uint8_t background = 255) {
  if (placement.offset_x < 0 || placement.offset_y < 0 ||
      placement.offset_x + img.width > canvas_w ||
      placement.offset_y + img.height > canvas_h)
    throw ContractViolation("compose_on_canvas: placement out of bounds");
  ImageBuffer canvas(canvas_w, canvas_h, img.channels, background);
  Mask mask(canvas_w, canvas_h, 255);
  for (int y = 0; y < img.height; ++y) {
    const int cy = y + placement.offset_y;
    for (int x = 0; x < img.width; ++x) {
      const int cx = x + placement.offset_x;
      for (int c = 0; c < img.channels; ++c)
        canvas.at(cx, cy, c) = img.at(x, y, c);
      mask.at(cx, cy) = 0;
    }
  }
  return {std::move(canvas), std::move(mask)};
}

// Integer rasterization of a real-valued box: columns floor(x1)..ceil(x2)-1.
struct PixelRect {
  int x = 0, y = 0, w = 0, h = 0;
};

inline PixelRect rasterize_box(const BBox& b) {
  PixelRect r;
  r.x = static_cast<int>(std::floor(b.x1));
  r.y = static_cast<int>(std::floor(b.y1));
  r.w = static_cast<int>(std::ceil(b.x2)) - r.x;
  r.h = static_cast<int>(std::ceil(b.y2)) - r.y;
  return r;
}

// 255 inside the box, 0 elsewhere; the editable region for inpainting.
inline Mask make_inpaint_mask(int canvas_w, int canvas_h, const BBox& box) {
  if (validate_bbox(box, canvas_w, canvas_h, 0.0) != BoxVerdict::Ok)
    throw ContractViolation("make_inpaint_mask: invalid box for canvas");
  Mask mask(canvas_w, canvas_h, 0);
  const PixelRect r = rasterize_box(box);
  const int x2 = std::min(r.x + r.w, canvas_w);
  const int y2 = std::min(r.y + r.h, canvas_h);
  for (int y = std::max(r.y, 0); y < y2; ++y)
    for (int x = std::max(r.x, 0); x < x2; ++x) mask.at(x, y) = 255;
  return mask;
}

// Sub-image over the rasterized box clamped to image bounds. Comparing two
// images must use the same box so both patches crop identically.
inline ImageBuffer extract_patch(const ImageBuffer& img, const BBox& box) {
  if (!box.well_formed()) throw ContractViolation("extract_patch: malformed box");
  const PixelRect r = rasterize_box(box);
  const int x1 = std::max(r.x, 0);
  const int y1 = std::max(r.y, 0);
  const int x2 = std::min(r.x + r.w, img.width);
  const int y2 = std::min(r.y + r.h, img.height);
  if (x1 >= x2 || y1 >= y2)
    throw ContractViolation("extract_patch: box does not intersect image");
  ImageBuffer out(x2 - x1, y2 - y1, img.channels);
  for (int y = y1; y < y2; ++y)
    for (int x = x1; x < x2; ++x)
      for (int c = 0; c < img.channels; ++c)
        out.at(x - x1, y - y1, c) = img.at(x, y, c);
  return out;
}

// Per-pixel absolute difference, contrast-stretched so the largest deviation
// maps to 255. Identical images give an all-zero map.
inline ImageBuffer diff_map(const ImageBuffer& orig, const ImageBuffer& adv) {
  if (!orig.same_dims(adv))
    throw ContractViolation("diff_map: dimension mismatch");
  ImageBuffer out(orig.width, orig.height, orig.channels);
  int max_d = 0;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const int d = std::abs(static_cast<int>(orig.pixels[i]) -
                           static_cast<int>(adv.pixels[i]));
    out.pixels[i] = static_cast<std::uint8_t>(d);
    max_d = std::max(max_d, d);
  }
  if (max_d > 0) {
    for (auto& p : out.pixels)
      p = static_cast<std::uint8_t>(std::lround(p * 255.0 / max_d));
  }
  return out;
}

}  // namespace aot
