#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "p2b/geometry.hpp"

namespace p2b {

/// Binary pixel raster anchored at (x, y) in image coordinates. Pixel (ax,
/// ay) covers the unit square [ax, ax+1) x [ay, ay+1).
struct MaskRaster {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  ///< row-major, width*height entries, 0/1

  bool at_pixel(int ax, int ay) const {
    const int lx = ax - x;
    const int ly = ay - y;
    if (lx < 0 || ly < 0 || lx >= width || ly >= height) return false;
    return bits[static_cast<std::size_t>(ly) * width + lx] != 0;
  }

  /// Membership for a continuous point (the pixel containing it).
  bool contains(double px, double py) const {
    return at_pixel(static_cast<int>(std::floor(px)),
                    static_cast<int>(std::floor(py)));
  }

  bool any() const;

  /// Tight bounding box of the set pixels. Throws ValidationError when the
  /// raster is empty.
  Box tight_bounds() const;

  /// Mean position of set pixel centers. Throws ValidationError when empty.
  std::array<double, 2> centroid() const;
};

struct ImageRecord {
  int id = 0;
  ImageShape shape;
  std::string file_name;
};

struct CategoryRecord {
  int id = 0;
  std::string name;
};

/// One annotated object. `category` is the dense index into
/// Dataset::categories, not the raw category id from the file.
struct ObjectRecord {
  int object_id = 0;
  int image_id = 0;
  int category = 0;
  Box gt_box;
  std::optional<MaskRaster> mask;
  std::optional<PointAnno> point;
};

struct Dataset {
  std::vector<ImageRecord> images;
  std::vector<ObjectRecord> objects;
  std::vector<CategoryRecord> categories;

  int num_objects() const { return static_cast<int>(objects.size()); }
  int num_categories() const { return static_cast<int>(categories.size()); }

  const ImageRecord& image_by_id(int image_id) const;
  std::vector<int> object_indices_of_image(int image_id) const;

  /// Checks referential integrity, box/image containment, and the mask
  /// bounding-rectangle agreement (within 1 px). Throws ValidationError.
  void validate() const;
};

/// Parameters of the rectified Gaussian used for quasi-center points: a
/// Gaussian at the box center (relative offset `mu`, per-axis std
/// `sigma * side`), truncated to the intersection of the object mask with a
/// central ellipse whose semi-axes are min(kappa * side, axis_cap).
struct RGParams {
  double mu = 0.0;
  double sigma = 0.25;
  double kappa = 0.25;
  double axis_cap = 96.0;

  void validate() const;
};

/// Truncation support V of the rectified Gaussian for one object, plus the
/// Gaussian location parameters. Holds a pointer into the object's mask, so
/// the object must outlive it.
struct RgSupport {
  const MaskRaster* mask = nullptr;  ///< null: the box acts as the mask
  Box box;
  double mean_x = 0.0, mean_y = 0.0;    ///< Gaussian center
  double std_x = 0.0, std_y = 0.0;      ///< Gaussian per-axis std
  bool use_ellipse = false;             ///< ellipse cut is active
  double ell_cx = 0.0, ell_cy = 0.0;    ///< ellipse center
  double ell_ax = 0.0, ell_ay = 0.0;    ///< ellipse semi-axes

  bool contains(double px, double py) const;

  /// Rectangle enclosing V, as integration bounds.
  std::array<double, 4> bounds() const;

  /// Fallback location: mask centroid, or box center without a mask.
  std::array<double, 2> fallback_center() const;
};

RgSupport rg_support(const ObjectRecord& obj, const RGParams& params);

/// Draws one quasi-center point by rejection sampling from the rectified
/// Gaussian. Falls back to the mask centroid after 10,000 rejected attempts.
/// Deterministic given the seed.
PointAnno sample_qc_point(const ObjectRecord& obj, const RGParams& params,
                          std::uint64_t seed);

/// Rectified-Gaussian density with the normalization constant precomputed by
/// grid quadrature over the support bounds. Copies the object record.
class RgDensity {
 public:
  RgDensity(const ObjectRecord& obj, const RGParams& params,
            int grid_resolution = 512);

  /// Density value; exactly 0 outside the support.
  double operator()(double px, double py) const;

  double normalizer() const { return normalizer_; }

 private:
  ObjectRecord obj_;
  RGParams params_;
  RgSupport support_;
  double normalizer_ = 0.0;
};

/// Reads a COCO-style annotation file: top-level `images`, `annotations`
/// (bbox in [x, y, w, h] corner-origin form), `categories`. Category ids are
/// mapped to dense indices in file order.
Dataset load_dataset(const std::string& path);

/// Writes the dataset back in the same schema. Box and point values are
/// rounded to 2 decimals, so save -> load -> save is byte-identical.
void save_dataset(const Dataset& dataset, const std::string& path);

/// Writes the dataset with each object's box replaced by its pseudo box.
/// Mask rasters are omitted (they describe the original annotation, not the
/// replacement boxes). Throws ValidationError listing any uncovered objects.
void save_pseudo_boxes(const Dataset& dataset,
                       const std::map<int, Box>& pseudo,
                       const std::string& path);

}  // namespace p2b
