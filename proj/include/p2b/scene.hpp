#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "p2b/annotations.hpp"
#include "p2b/geometry.hpp"

namespace p2b {

/// Downsampled per-pixel signature grid standing in for a CNN feature map.
/// Cell (gx, gy) covers pixels [gx*stride, (gx+1)*stride) x [gy*stride,
/// (gy+1)*stride); channel vectors live contiguously per cell.
struct SceneGrid {
  int image_id = 0;
  ImageShape shape;
  int stride = 4;
  int dpix = 8;
  int gw = 0;
  int gh = 0;
  std::vector<float> grid;  ///< gh * gw * dpix, row-major (gy, gx, channel)

  /// Cell value with zero padding outside the grid.
  double at(int gx, int gy, int d) const {
    if (gx < 0 || gy < 0 || gx >= gw || gy >= gh) return 0.0;
    return grid[(static_cast<std::size_t>(gy) * gw + gx) * dpix + d];
  }

  /// Bilinear sample at pixel coordinates (half-cell aligned, zero padded).
  double sample(double x, double y, int d) const;
};

/// Configuration for the synthetic dataset generator.
struct SceneConfig {
  int num_images = 20;
  int width = 256;
  int height = 256;
  int num_categories = 3;   ///< K; signatures are one-hot, so K <= dpix
  int objects_min = 1;
  int objects_max = 3;
  double size_min = 32.0;   ///< box side range, pixels
  double size_max = 96.0;
  double max_overlap = 0.5; ///< placement retries until pairwise IoU <= this
  double noise_std = 0.1;
  int dpix = 8;
  int stride = 4;
  int pooled = 7;           ///< P: featurize lattice is P x P
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticData {
  Dataset dataset;
  std::vector<SceneGrid> grids;  ///< positionally aligned with dataset.images
};

/// Empty (all-zero) grid covering the image.
SceneGrid make_scene_grid(const ImageShape& shape, int stride, int dpix);

/// Adds the one-hot signature of `category` to every cell whose rectangle
/// intersects the box, so the object's evidence covers its full extent at
/// cell granularity.
void paint_object(SceneGrid& g, const Box& box, int category);

/// Adds iid Gaussian noise (std `noise_std`) to every cell channel.
void add_noise(SceneGrid& g, double noise_std, std::uint64_t seed);

/// Places random boxes (uniform sizes and centers, pairwise IoU capped at
/// cfg.max_overlap with bounded retries), paints their signatures plus
/// noise, and returns both the annotation records and the grids.
/// Reproducible given cfg.seed. Throws SamplingError when an object cannot
/// be placed.
SyntheticData generate_dataset(const SceneConfig& cfg);

/// Proposal feature: bilinear samples of the grid at a P x P lattice of
/// box-interior points (all dpix channels each), concatenated with 4
/// normalized shape features (w/W, h/H, cx/W, cy/H).
/// Dimension: P*P*dpix + 4. The box must intersect the image.
std::vector<double> featurize(const SceneGrid& g, const Box& b, int pooled);

/// Feature dimension produced by featurize.
int feature_dim(int pooled, int dpix);

/// Writes all grids to one binary sidecar (shared shape header + row-major
/// little-endian float32 bodies in image order).
void save_scene_grids(const std::vector<SceneGrid>& grids,
                      const std::string& path);

/// Reads a sidecar written by save_scene_grids. Grids come back in file
/// order; callers pair them with dataset images positionally.
std::vector<SceneGrid> load_scene_grids(const std::string& path);

}  // namespace p2b
