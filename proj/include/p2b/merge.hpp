#pragma once

#include "p2b/matrix.hpp"
#include "p2b/model.hpp"
#include "p2b/sampler.hpp"

namespace p2b {

/// Which score matrix drives proposal selection and weighting. The product
/// score (classification * instance) is the default; the classification
/// stream alone is kept as an ablation switch.
enum class ScoreSource { product, classification };

struct MergeConfig {
  int k = 4;
  ScoreSource source = ScoreSource::product;

  void validate() const;
};

/// The score matrix the merge should read from a forward bundle.
const Matrix& merge_scores(const ScoreBundle& f, const MergeConfig& cfg);

/// Score-weighted average of the top-k proposals at the given category
/// column, in center form. Ties are broken toward the lower proposal index;
/// an all-zero top-k falls back to uniform weights. k is capped at the bag
/// size.
Box merge_topk(const ProposalBag& bag, const Matrix& scores, int category,
               const MergeConfig& cfg);

}  // namespace p2b
