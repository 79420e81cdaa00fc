#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "p2b/geometry.hpp"

namespace p2b {

/// Proposal generation knobs. Defaults give 6 scales x 7 ratios = 42
/// point-centered proposals per object and 5 x 5 x 5 = 125 jittered
/// refinements per estimated box.
struct SamplerConfig {
  std::vector<double> cbp_scales{4, 8, 16, 32, 64, 128};
  std::vector<double> cbp_ratios{1.0 / 3, 0.5, 2.0 / 3, 1.0, 1.5, 2.0, 3.0};
  std::vector<double> pbr_width_factors{0.7, 0.8, 1.0, 1.2, 1.3};
  std::vector<double> pbr_height_factors{0.7, 0.8, 1.0, 1.2, 1.3};
  std::vector<std::array<double, 2>> pbr_offsets{
      {0, 0}, {1, 0}, {0, 1}, {-1, 0}, {-1, -1}};
  int neg_pool = 500;
  double neg_iou_max = 0.3;
  double neg_min_side = 4.0;

  void validate() const;
};

/// Bag of candidate boxes for one object. `pbr_iteration` 0 marks the fixed
/// point-centered stage; t >= 1 marks the t-th refinement stage.
struct ProposalBag {
  int object_id = 0;
  int pbr_iteration = 0;
  std::vector<Box> proposals;
};

/// Stage column value used in CSV output: "cbp", "pbr1", "pbr2", ...
std::string stage_label(int pbr_iteration);

struct NegativeSet {
  int image_id = 0;
  std::vector<Box> negatives;
};

/// Image-adaptive scale unit: min(W, H) / 100. Base scales multiply this.
double adaptive_scale_unit(const ImageShape& shape);

/// Fixed bag centered on the annotated point: every (scale, ratio) pair in
/// scale-major, ratio-minor order, each clipped so the box stays centered on
/// the point and inside the image. Duplicates after clipping are retained so
/// every object gets an equally sized bag. Throws SamplingError when every
/// candidate degenerates (point on the image border).
ProposalBag cbp_bag(const PointAnno& p, int object_id,
                    const ImageShape& shape, const SamplerConfig& cfg);

/// Adaptive bag jittered around an estimated box: width factor wf, height
/// factor hf, center offset (ox, oy) in units of the NEW width/height:
///   w = wf * w*, h = hf * h*, cx = cx* + w * ox, cy = cy* + h * oy.
/// Loop order is width-factor-major, then height factor, then offset.
/// Boxes crossing the image border are corner-clipped and re-centered;
/// boxes falling entirely outside are dropped.
ProposalBag pbr_bag(const Box& b_star, int object_id, int iteration,
                    const ImageShape& shape, const SamplerConfig& cfg);

/// Draws cfg.neg_pool boxes (centers uniform over the image, side lengths
/// log-uniform in [neg_min_side, min(W, H)]) and keeps those whose IoU with
/// every proposal of every bag stays below cfg.neg_iou_max. May return an
/// empty set. Deterministic given the seed.
NegativeSet sample_negatives(const std::vector<ProposalBag>& bags,
                             int image_id, const ImageShape& shape,
                             const SamplerConfig& cfg, std::uint64_t seed);

}  // namespace p2b
