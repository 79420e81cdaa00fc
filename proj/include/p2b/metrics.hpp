#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <utility>
#include <vector>

#include "p2b/annotations.hpp"
#include "p2b/geometry.hpp"
#include "p2b/sampler.hpp"

namespace p2b {

/// Number of IoU histogram bins: edges i/50 with [i/50, (i+1)/50) semantics
/// and the last bin closed at 1.0.
inline constexpr int kIouBins = 50;

/// Histogram bin index for an IoU value in [0, 1].
int iou_bin(double v);

/// Per-object proposal quality: for each bag, the mean IoU of its proposals
/// against the object's ground-truth box.
struct ProposalQuality {
  std::vector<double> per_object;  ///< aligned with the input bag order
  double mean = 0.0;
  std::array<int, kIouBins> histogram{};
};

/// Mean IoU of predicted pseudo boxes against ground truth, averaged over
/// every object in the dataset. Throws ValidationError when an object id is
/// missing from the map.
double miou_pred(const std::map<int, Box>& pseudo, const Dataset& data);

/// Mean proposal IoU per bag plus the 50-bin distribution. Throws
/// ValidationError on an empty bag or an unknown object id.
ProposalQuality miou_prop(const std::vector<ProposalBag>& bags,
                          const Dataset& data);

/// Bag-size distribution: size -> number of bags with that size.
std::map<std::size_t, std::size_t> balance_histogram(
    const std::vector<ProposalBag>& bags);

/// Fraction of objects whose pseudo box reaches IoU >= tau, for each
/// threshold, in input order. Same coverage requirement as miou_pred.
std::vector<std::pair<double, double>> recall_at(
    const std::map<int, Box>& pseudo, const Dataset& data,
    const std::vector<double>& thresholds);

}  // namespace p2b
