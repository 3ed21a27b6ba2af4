#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>

#include "aot/errors.hpp"
#include "aot/rng.hpp"

namespace aot {

// Axis-aligned box in pixel coordinates, corner form. Coordinates are
// real-valued internally; serialization rounds to 2 decimals.
struct BBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  bool well_formed() const { return x1 < x2 && y1 < y2; }
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }

  friend bool operator==(const BBox&, const BBox&) = default;
};

enum class PlacementKind { Center, Random, Corner };

inline const char* to_string(PlacementKind k) {
  switch (k) {
    case PlacementKind::Center: return "center";
    case PlacementKind::Random: return "random";
    case PlacementKind::Corner: return "corner";
  }
  return "?";
}

// Where a (possibly downscaled) source image lands on the canvas. scale is
// applied to the source before placement; offsets are canvas pixels.
struct Placement {
  PlacementKind kind = PlacementKind::Center;
  int offset_x = 0;
  int offset_y = 0;
  double scale = 1.0;
};

inline double iou(const BBox& a, const BBox& b) {
  if (!a.well_formed() || !b.well_formed())
    throw ContractViolation("iou: malformed box");
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  if (inter <= 0.0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

// True iff the candidate has IoU strictly above `threshold` with any target.
// Edge-touching boxes (IoU exactly 0) do not count; an empty target list is
// vacuously false.
inline bool overlaps_any(const BBox& candidate, std::span<const BBox> targets,
                         double threshold = 0.0) {
  if (threshold < 0.0 || threshold >= 1.0)
    throw ContractViolation("overlaps_any: threshold must be in [0,1)");
  for (const BBox& t : targets)
    if (iou(candidate, t) > threshold) return true;
  return false;
}

enum class BoxVerdict { Ok, Malformed, OutOfBounds, TooSmall };

inline const char* to_string(BoxVerdict v) {
  switch (v) {
    case BoxVerdict::Ok: return "ok";
    case BoxVerdict::Malformed: return "malformed";
    case BoxVerdict::OutOfBounds: return "out_of_bounds";
    case BoxVerdict::TooSmall: return "too_small";
  }
  return "?";
}

// Verdict-style validation: well-formed, inside [0,w]x[0,h], area strictly
// above min_area.
inline BoxVerdict validate_bbox(const BBox& b, double image_w, double image_h,
                                double min_area = 100.0) {
  if (image_w <= 0.0 || image_h <= 0.0)
    throw ContractViolation("validate_bbox: image dims must be positive");
  if (!b.well_formed()) return BoxVerdict::Malformed;
  if (b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > image_w || b.y2 > image_h)
    return BoxVerdict::OutOfBounds;
  if (!(b.area() > min_area)) return BoxVerdict::TooSmall;
  return BoxVerdict::Ok;
}

// Scale first, then translate; matches how canvas placement moves
// annotations.
inline BBox transform_bbox(const BBox& b, double scale, double offset_x,
                           double offset_y) {
  if (scale <= 0.0) throw ContractViolation("transform_bbox: scale must be > 0");
  return {b.x1 * scale + offset_x, b.y1 * scale + offset_y,
          b.x2 * scale + offset_x, b.y2 * scale + offset_y};
}

// Weighted draw of a placement strategy plus concrete offsets. The rng stream
// must be per-sample so parallel order never changes results. Weights are
// [center, random, corner].
inline Placement sample_placement(int canvas_w, int canvas_h, int image_w,
                                  int image_h,
                                  const std::array<double, 3>& weights,
                                  RngStream& rng, double scale = 1.0) {
  if (image_w > canvas_w || image_h > canvas_h)
    throw ContractViolation("sample_placement: image larger than canvas");
  const int max_x = canvas_w - image_w;
  const int max_y = canvas_h - image_h;
  Placement p;
  p.scale = scale;
  switch (rng.pick_weighted(weights)) {
    case 0:
      p.kind = PlacementKind::Center;
      p.offset_x = max_x / 2;
      p.offset_y = max_y / 2;
      break;
    case 1:
      p.kind = PlacementKind::Random;
      p.offset_x = static_cast<int>(rng.next_int(0, max_x));
      p.offset_y = static_cast<int>(rng.next_int(0, max_y));
      break;
    default: {
      p.kind = PlacementKind::Corner;
      const auto corner = rng.next_below(4);
      p.offset_x = (corner & 1) ? max_x : 0;
      p.offset_y = (corner & 2) ? max_y : 0;
      break;
    }
  }
  return p;
}

}  // namespace aot
