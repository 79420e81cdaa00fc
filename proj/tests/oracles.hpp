// Independent reference implementations used to validate derived quantities.
// Each oracle recomputes a result by brute force (rasterization, quadrature,
// finite differences) so the production code is never checked against itself.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "p2b/geometry.hpp"

namespace oracles {

/// IoU by counting sub-pixel grid cells whose centers fall inside each box.
/// Error is O(perimeter * cell / area); keep `cells_per_unit` high enough for
/// the tolerance used at the call site.
inline double raster_iou(const p2b::Box& a, const p2b::Box& b,
                         int cells_per_unit = 64) {
  const double x_lo = std::min(a.x1(), b.x1());
  const double x_hi = std::max(a.x2(), b.x2());
  const double y_lo = std::min(a.y1(), b.y1());
  const double y_hi = std::max(a.y2(), b.y2());
  const double cell = 1.0 / cells_per_unit;
  const std::int64_t nx =
      static_cast<std::int64_t>(std::ceil((x_hi - x_lo) / cell)) + 1;
  const std::int64_t ny =
      static_cast<std::int64_t>(std::ceil((y_hi - y_lo) / cell)) + 1;
  std::int64_t in_a = 0, in_b = 0, in_both = 0;
  for (std::int64_t iy = 0; iy < ny; ++iy) {
    const double y = y_lo + (iy + 0.5) * cell;
    const bool ya = y > a.y1() && y < a.y2();
    const bool yb = y > b.y1() && y < b.y2();
    if (!ya && !yb) continue;
    for (std::int64_t ix = 0; ix < nx; ++ix) {
      const double x = x_lo + (ix + 0.5) * cell;
      const bool ina = ya && x > a.x1() && x < a.x2();
      const bool inb = yb && x > b.x1() && x < b.x2();
      in_a += ina;
      in_b += inb;
      in_both += ina && inb;
    }
  }
  const std::int64_t uni = in_a + in_b - in_both;
  if (uni == 0) return 0.0;
  return static_cast<double>(in_both) / static_cast<double>(uni);
}

/// Midpoint-rule integral of f over [x1,x2] x [y1,y2].
inline double grid_integral(const std::function<double(double, double)>& f,
                            double x1, double y1, double x2, double y2,
                            int nx, int ny) {
  const double dx = (x2 - x1) / nx;
  const double dy = (y2 - y1) / ny;
  double sum = 0.0;
  for (int iy = 0; iy < ny; ++iy) {
    const double y = y1 + (iy + 0.5) * dy;
    for (int ix = 0; ix < nx; ++ix) {
      sum += f(x1 + (ix + 0.5) * dx, y);
    }
  }
  return sum * dx * dy;
}

/// Central-difference derivative of a scalar function of one coordinate.
inline double finite_diff(const std::function<double(double)>& f, double x,
                          double eps = 1e-6) {
  return (f(x + eps) - f(x - eps)) / (2.0 * eps);
}

/// Regularized lower incomplete gamma P(a, x) via series / continued
/// fraction (Numerical Recipes construction). Used for chi-square p-values.
inline double gamma_p(double a, double x) {
  if (x < 0.0 || a <= 0.0) return 0.0;
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int i = 0; i < 500; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::fabs(del) < std::fabs(sum) * 1e-14) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
  }
  double b = x + 1.0 - a;
  double c = 1e300;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 500; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < 1e-300) d = 1e-300;
    c = b + an / c;
    if (std::fabs(c) < 1e-300) c = 1e-300;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-14) break;
  }
  const double q = std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
  return 1.0 - q;
}

/// Chi-square upper-tail p-value for statistic `chi2` with `dof` degrees of
/// freedom.
inline double chi2_pvalue(double chi2, int dof) {
  return 1.0 - gamma_p(dof / 2.0, chi2 / 2.0);
}

}  // namespace oracles
