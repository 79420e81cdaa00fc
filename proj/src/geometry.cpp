#include "p2b/geometry.hpp"

#include <algorithm>

#include "p2b/error.hpp"

namespace p2b {

double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) {
    throw ValidationError("iou: degenerate box");
  }
  const double ix1 = std::max(a.x1(), b.x1());
  const double iy1 = std::max(a.y1(), b.y1());
  const double ix2 = std::min(a.x2(), b.x2());
  const double iy2 = std::min(a.y2(), b.y2());
  const double iw = ix2 - ix1;
  const double ih = iy2 - iy1;
  if (iw <= 0.0 || ih <= 0.0) {
    return 0.0;
  }
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

Box clip_to_image(const PointAnno& p, double s, double v,
                  const ImageShape& shape) {
  if (!shape.valid()) {
    throw ValidationError("clip_to_image: empty image shape");
  }
  if (!(s > 0.0) || !(v > 0.0)) {
    throw ValidationError("clip_to_image: size and ratio must be positive");
  }
  const double W = static_cast<double>(shape.width);
  const double H = static_cast<double>(shape.height);
  if (p.px < 0.0 || p.px > W || p.py < 0.0 || p.py > H) {
    throw ValidationError("clip_to_image: point outside image");
  }
  const double w = std::min({v * s, 2.0 * p.px, 2.0 * (W - p.px)});
  const double h = std::min({s / v, 2.0 * p.py, 2.0 * (H - p.py)});
  if (w <= 0.0 || h <= 0.0) {
    throw DegenerateBoxError(
        "clip_to_image: point on image border yields zero-size box");
  }
  return Box{p.px, p.py, w, h};
}

std::array<double, 4> center_to_corner(const Box& b) {
  return {b.x1(), b.y1(), b.x2(), b.y2()};
}

Box corner_to_center(const std::array<double, 4>& c) {
  const double w = c[2] - c[0];
  const double h = c[3] - c[1];
  if (w <= 0.0 || h <= 0.0) {
    throw DegenerateBoxError("corner_to_center: non-positive extent");
  }
  return Box{c[0] + w / 2.0, c[1] + h / 2.0, w, h};
}

bool box_inside_image(const Box& b, const ImageShape& shape, double eps) {
  return b.x1() >= -eps && b.y1() >= -eps &&
         b.x2() <= static_cast<double>(shape.width) + eps &&
         b.y2() <= static_cast<double>(shape.height) + eps;
}

Box intersect_with_image(const Box& b, const ImageShape& shape) {
  const double x1 = std::max(b.x1(), 0.0);
  const double y1 = std::max(b.y1(), 0.0);
  const double x2 = std::min(b.x2(), static_cast<double>(shape.width));
  const double y2 = std::min(b.y2(), static_cast<double>(shape.height));
  if (x2 <= x1 || y2 <= y1) {
    return Box{0.0, 0.0, 0.0, 0.0};
  }
  return Box{(x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1};
}

}  // namespace p2b
