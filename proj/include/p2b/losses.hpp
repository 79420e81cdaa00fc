#pragma once

#include <vector>

#include "p2b/matrix.hpp"

namespace p2b {

/// Scores are clamped to [kScoreClamp, 1 - kScoreClamp] before any log; the
/// matching gradients are zero outside the clamp interval and pass through
/// inside it.
inline constexpr double kScoreClamp = 1e-7;

/// Loss weights, schedule, and model shape knobs for the training loop.
struct LossConfig {
  double alpha_mil1 = 0.25;  ///< weight of the coarse-stage bag loss
  double alpha_mil2 = 0.25;  ///< weight of the refinement bag loss
  double alpha_neg = 0.75;   ///< weight of the negative-suppression loss
  double gamma = 2.0;        ///< focusing exponent
  int stages = 1;            ///< refinement iterations T (0 = coarse only)
  double lr = 0.002;
  int epochs = 12;
  int batch_images = 8;      ///< images per SGD step
  std::vector<double> decay_at{2.0 / 3.0, 11.0 / 12.0};  ///< epoch fractions
  double decay_factor = 0.1;
  int hidden_dim = 128;      ///< trunk width
  int pooled = 7;            ///< feature lattice edge P

  void validate() const;

  /// Learning rate in effect for a given 0-based epoch index.
  double lr_at(int epoch) const;
};

/// Per-epoch loss aggregate. The refinement vectors hold one entry per
/// iteration; `l_pbr[t] = alpha_mil2 * l_mil2[t] + alpha_neg * l_neg[t]` and
/// `l_p2b = l_cbp + sum(l_pbr)`, with l_cbp already alpha_mil1-weighted.
struct LossReport {
  double l_cbp = 0.0;
  std::vector<double> l_mil2;
  std::vector<double> l_neg;
  std::vector<double> l_pbr;
  double l_p2b = 0.0;
  std::vector<double> beta;  ///< mean prior true-class weight per iteration
  /// Per-object previous-stage true-class bag scores, dataset object order.
  std::vector<std::vector<double>> object_weight;

  void validate() const;
};

/// Mean binary cross-entropy between bag scores (M x K) and one-hot labels:
/// -(1/M) sum_j sum_k c log s + (1 - c) log(1 - s).
double loss_cbp(const Matrix& bag_scores, const Matrix& labels);

/// Focal loss of one score vector against a one-hot target:
/// -sum_k t (1-z)^g log z + (1-t) z^g log(1-z).
double focal(const std::vector<double>& zeta, const std::vector<double>& tau,
             double gamma);

/// Prior-weighted focal loss over objects: (1/M) sum_j <c_j, prev_j> *
/// focal(cur_j, c_j). `prev` is treated as a constant.
double loss_pbr_mil(const Matrix& cur, const Matrix& prev,
                    const Matrix& labels, double gamma);

/// Mean previous-stage true-class bag score: (1/M) sum_j <c_j, prev_j>.
double beta_weight(const Matrix& prev, const Matrix& labels);

/// Background suppression over negative classification scores (N x K):
/// -(beta/N) sum_{n,k} s^g log(1 - s). N must be positive; callers skip the
/// term when no negatives survived filtering.
double loss_neg(const Matrix& s_cls_neg, double beta, double gamma);

/// d loss_cbp / d bag_scores, written into d_bag (overwritten, M x K).
void loss_cbp_grad(const Matrix& bag_scores, const Matrix& labels,
                   Matrix& d_bag);

/// d focal / d zeta.
std::vector<double> focal_grad(const std::vector<double>& zeta,
                               const std::vector<double>& tau, double gamma);

/// d loss_pbr_mil / d cur, written into d_bag (overwritten, M x K).
void loss_pbr_mil_grad(const Matrix& cur, const Matrix& prev,
                       const Matrix& labels, double gamma, Matrix& d_bag);

/// d loss_neg / d s_cls_neg, written into d_s (overwritten, N x K).
void loss_neg_grad(const Matrix& s_cls_neg, double beta, double gamma,
                   Matrix& d_s);

}  // namespace p2b
