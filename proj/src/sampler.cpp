#include "p2b/sampler.hpp"

#include <algorithm>

#include "p2b/error.hpp"
#include "p2b/rng.hpp"

namespace p2b {

void SamplerConfig::validate() const {
  const auto all_positive = [](const std::vector<double>& v) {
    return !v.empty() &&
           std::all_of(v.begin(), v.end(), [](double x) { return x > 0.0; });
  };
  if (!all_positive(cbp_scales) || !all_positive(cbp_ratios) ||
      !all_positive(pbr_width_factors) || !all_positive(pbr_height_factors)) {
    throw ValidationError("sampler config: scale/ratio entries must be positive");
  }
  if (pbr_offsets.empty()) {
    throw ValidationError("sampler config: offset set must be non-empty");
  }
  if (!(neg_iou_max > 0.0) || !(neg_iou_max < 1.0)) {
    throw ValidationError("sampler config: neg_iou_max must be in (0, 1)");
  }
  if (neg_pool < 0 || !(neg_min_side > 0.0)) {
    throw ValidationError("sampler config: bad negative-pool settings");
  }
}

std::string stage_label(int pbr_iteration) {
  if (pbr_iteration < 0) {
    throw ValidationError("stage label: negative iteration");
  }
  if (pbr_iteration == 0) return "cbp";
  return "pbr" + std::to_string(pbr_iteration);
}

double adaptive_scale_unit(const ImageShape& shape) {
  if (!shape.valid()) {
    throw ValidationError("adaptive_scale_unit: empty image shape");
  }
  return std::min(shape.width, shape.height) / 100.0;
}

ProposalBag cbp_bag(const PointAnno& p, int object_id,
                    const ImageShape& shape, const SamplerConfig& cfg) {
  cfg.validate();
  const double unit = adaptive_scale_unit(shape);
  ProposalBag bag;
  bag.object_id = object_id;
  bag.pbr_iteration = 0;
  bag.proposals.reserve(cfg.cbp_scales.size() * cfg.cbp_ratios.size());
  for (double scale : cfg.cbp_scales) {
    const double s = scale * unit;
    for (double v : cfg.cbp_ratios) {
      try {
        bag.proposals.push_back(clip_to_image(p, s, v, shape));
      } catch (const DegenerateBoxError&) {
        // Border point: this candidate collapses; skip it.
      }
    }
  }
  if (bag.proposals.empty()) {
    throw SamplingError(
        "point-centered bag: every candidate degenerated (border point)");
  }
  return bag;
}

ProposalBag pbr_bag(const Box& b_star, int object_id, int iteration,
                    const ImageShape& shape, const SamplerConfig& cfg) {
  cfg.validate();
  if (!b_star.valid()) {
    throw ValidationError("refinement bag: degenerate input box");
  }
  if (iteration < 1) {
    throw ValidationError("refinement bag: iteration must be >= 1");
  }
  ProposalBag bag;
  bag.object_id = object_id;
  bag.pbr_iteration = iteration;
  bag.proposals.reserve(cfg.pbr_width_factors.size() *
                        cfg.pbr_height_factors.size() *
                        cfg.pbr_offsets.size());
  for (double wf : cfg.pbr_width_factors) {
    for (double hf : cfg.pbr_height_factors) {
      const double w = wf * b_star.w;
      const double h = hf * b_star.h;
      for (const auto& off : cfg.pbr_offsets) {
        const Box jittered{b_star.cx + w * off[0], b_star.cy + h * off[1], w,
                           h};
        const Box inside = intersect_with_image(jittered, shape);
        // Boundary rejection: drop candidates whose overlap with the image
        // is empty, including slivers thinner than the local float spacing
        // (those collapse to nothing when re-clipped downstream).
        if (inside.valid() && intersect_with_image(inside, shape).valid()) {
          bag.proposals.push_back(inside);
        }
      }
    }
  }
  if (bag.proposals.empty()) {
    throw SamplingError("refinement bag: all candidates left the image");
  }
  return bag;
}

NegativeSet sample_negatives(const std::vector<ProposalBag>& bags,
                             int image_id, const ImageShape& shape,
                             const SamplerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (!shape.valid()) {
    throw ValidationError("negative sampling: empty image shape");
  }
  if (bags.empty()) {
    throw ValidationError("negative sampling: no positive bags given");
  }
  const double max_side = std::min(shape.width, shape.height);
  if (max_side < cfg.neg_min_side) {
    throw ValidationError("negative sampling: image smaller than minimum side");
  }
  Rng rng(seed);
  NegativeSet out;
  out.image_id = image_id;
  for (int draw = 0; draw < cfg.neg_pool; ++draw) {
    const Box candidate{rng.uniform(0.0, static_cast<double>(shape.width)),
                        rng.uniform(0.0, static_cast<double>(shape.height)),
                        rng.log_uniform(cfg.neg_min_side, max_side),
                        rng.log_uniform(cfg.neg_min_side, max_side)};
    bool clear = true;
    for (const auto& bag : bags) {
      for (const auto& pos : bag.proposals) {
        if (iou(candidate, pos) >= cfg.neg_iou_max) {
          clear = false;
          break;
        }
      }
      if (!clear) break;
    }
    if (clear) {
      out.negatives.push_back(candidate);
    }
  }
  return out;
}

}  // namespace p2b
