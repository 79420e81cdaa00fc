#include "p2b/merge.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "p2b/error.hpp"

namespace p2b {

void MergeConfig::validate() const {
  if (k < 1) {
    throw ValidationError("merge k must be >= 1, got " + std::to_string(k));
  }
}

const Matrix& merge_scores(const ScoreBundle& f, const MergeConfig& cfg) {
  return cfg.source == ScoreSource::classification ? f.s_cls : f.s;
}

Box merge_topk(const ProposalBag& bag, const Matrix& scores, int category,
               const MergeConfig& cfg) {
  cfg.validate();
  const int u = static_cast<int>(bag.proposals.size());
  if (u == 0) {
    throw ValidationError("merge_topk: bag for object " +
                          std::to_string(bag.object_id) + " is empty");
  }
  if (scores.rows != u) {
    throw ValidationError("merge_topk: " + std::to_string(scores.rows) +
                          " score rows for " + std::to_string(u) +
                          " proposals");
  }
  if (category < 0 || category >= scores.cols) {
    throw ValidationError("merge_topk: category " + std::to_string(category) +
                          " out of range [0, " + std::to_string(scores.cols) +
                          ")");
  }
  for (int r = 0; r < u; ++r) {
    const double s = scores(r, category);
    if (!std::isfinite(s) || s < 0.0) {
      throw ValidationError("merge_topk: score for proposal " +
                            std::to_string(r) +
                            " is not a finite non-negative value");
    }
  }

  std::vector<int> order(static_cast<std::size_t>(u));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double sa = scores(a, category);
    const double sb = scores(b, category);
    if (sa != sb) return sa > sb;
    return a < b;
  });
  const int k = std::min(cfg.k, u);

  double weight_sum = 0.0;
  for (int i = 0; i < k; ++i) {
    weight_sum += scores(order[i], category);
  }

  Box out{0, 0, 0, 0};
  for (int i = 0; i < k; ++i) {
    const Box& b = bag.proposals[static_cast<std::size_t>(order[i])];
    const double w = weight_sum > 0.0
                         ? scores(order[i], category) / weight_sum
                         : 1.0 / k;
    out.cx += w * b.cx;
    out.cy += w * b.cy;
    out.w += w * b.w;
    out.h += w * b.h;
  }
  return out;
}

}  // namespace p2b
