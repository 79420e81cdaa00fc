#pragma once

#include <array>
#include <cmath>

namespace p2b {

/// Center-parameterized rectangle in pixel units. All sampling and merging
/// formulas are center-native; the corner form is derived on demand.
struct Box {
  double cx = 0.0;  ///< center x
  double cy = 0.0;  ///< center y
  double w = 0.0;   ///< width, > 0
  double h = 0.0;   ///< height, > 0

  double x1() const { return cx - w / 2.0; }
  double y1() const { return cy - h / 2.0; }
  double x2() const { return cx + w / 2.0; }
  double y2() const { return cy + h / 2.0; }
  double area() const { return w * h; }

  bool valid() const {
    return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) &&
           std::isfinite(h) && w > 0.0 && h > 0.0;
  }
};

struct ImageShape {
  int width = 0;
  int height = 0;

  bool valid() const { return width > 0 && height > 0; }
};

/// Single point annotation. `category` is the dense category index in [0, K).
struct PointAnno {
  double px = 0.0;
  double py = 0.0;
  int category = 0;
};

/// Intersection over union; symmetric, in [0,1], 0 for disjoint boxes.
double iou(const Box& a, const Box& b);

/// Point-centered box of size `s` and aspect knob `v` (width v*s, height s/v),
/// with each side clipped so the box stays inside the image while the center
/// stays at the point. Throws DegenerateBoxError when the clipped width or
/// height collapses to zero (point on the image border).
Box clip_to_image(const PointAnno& p, double s, double v,
                  const ImageShape& shape);

/// (x1, y1, x2, y2) corner form.
std::array<double, 4> center_to_corner(const Box& b);

/// Inverse of center_to_corner. Throws DegenerateBoxError when x2 <= x1 or
/// y2 <= y1.
Box corner_to_center(const std::array<double, 4>& c);

/// True when the corner form lies inside [0,W] x [0,H] (tolerance eps).
bool box_inside_image(const Box& b, const ImageShape& shape,
                      double eps = 1e-9);

/// Corner-clips `b` to the image and re-centers. Returns an invalid
/// (zero-size) box when nothing remains inside.
Box intersect_with_image(const Box& b, const ImageShape& shape);

}  // namespace p2b
