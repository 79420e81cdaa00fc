#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "p2b/matrix.hpp"

namespace p2b {

/// Two-stream MIL scorer parameters: a shared two-layer tanh trunk
/// (D -> Dh -> Dh) plus one (classification, instance) affine head pair per
/// stage. Heads are never shared across stages. Values and gradients live in
/// two flat vectors so optimizer steps, checkpoints, and finite-difference
/// probes all see one contiguous buffer.
class ModelParams {
 public:
  /// Zero-initialized parameters (used by checkpoint loading).
  ModelParams(int feature_dim, int hidden_dim, int categories, int heads);

  /// Fan-in-scaled uniform init for weights, zero biases, seeded.
  ModelParams(int feature_dim, int hidden_dim, int categories, int heads,
              std::uint64_t seed);

  int feature_dim() const { return d_; }
  int hidden_dim() const { return dh_; }
  int categories() const { return k_; }
  int heads() const { return heads_; }
  std::size_t size() const { return values.size(); }

  double* w1() { return values.data() + off_w1_; }        ///< D x Dh
  double* b1() { return values.data() + off_b1_; }        ///< Dh
  double* w2() { return values.data() + off_w2_; }        ///< Dh x Dh
  double* b2() { return values.data() + off_b2_; }        ///< Dh
  double* cls_w(int head) { return values.data() + head_off(head)[0]; }
  double* cls_b(int head) { return values.data() + head_off(head)[1]; }
  double* ins_w(int head) { return values.data() + head_off(head)[2]; }
  double* ins_b(int head) { return values.data() + head_off(head)[3]; }
  const double* w1() const { return values.data() + off_w1_; }
  const double* b1() const { return values.data() + off_b1_; }
  const double* w2() const { return values.data() + off_w2_; }
  const double* b2() const { return values.data() + off_b2_; }
  const double* cls_w(int head) const { return values.data() + head_off(head)[0]; }
  const double* cls_b(int head) const { return values.data() + head_off(head)[1]; }
  const double* ins_w(int head) const { return values.data() + head_off(head)[2]; }
  const double* ins_b(int head) const { return values.data() + head_off(head)[3]; }

  double* g_w1() { return grads.data() + off_w1_; }
  double* g_b1() { return grads.data() + off_b1_; }
  double* g_w2() { return grads.data() + off_w2_; }
  double* g_b2() { return grads.data() + off_b2_; }
  double* g_cls_w(int head) { return grads.data() + head_off(head)[0]; }
  double* g_cls_b(int head) { return grads.data() + head_off(head)[1]; }
  double* g_ins_w(int head) { return grads.data() + head_off(head)[2]; }
  double* g_ins_b(int head) { return grads.data() + head_off(head)[3]; }

  void zero_grads();

  std::vector<double> values;
  std::vector<double> grads;

 private:
  const std::array<std::size_t, 4>& head_off(int head) const;

  int d_ = 0, dh_ = 0, k_ = 0, heads_ = 0;
  std::size_t off_w1_ = 0, off_b1_ = 0, off_w2_ = 0, off_b2_ = 0;
  std::vector<std::array<std::size_t, 4>> head_offsets_;
};

/// Forward result for one bag, with the activations the backward pass needs.
/// s = s_cls (*) s_ins elementwise; bag_score[k] = sum_u s[u][k].
struct ScoreBundle {
  int head = 0;
  bool sigmoid_cls = false;  ///< false: row-softmax (fixed stage); true:
                             ///< per-entry sigmoid (refinement stages)
  Matrix x, a1, a2;          ///< input and trunk activations (tanh)
  Matrix o_cls, o_ins;       ///< U x K logits
  Matrix s_cls, s_ins, s;    ///< U x K scores
  std::vector<double> bag_score;       ///< K
  std::vector<double> prev_bag_score;  ///< K; empty in the fixed stage
};

/// Forward result for negative samples: classification stream only.
struct NegScores {
  int head = 0;
  Matrix x, a1, a2;
  Matrix o_cls, s_cls;  ///< |N| x K, sigmoid scores
};

/// Fixed-stage forward: row-softmax classification scores (each row sums to
/// 1), column-softmax instance scores (each column sums to 1), Hadamard
/// product, per-category bag score. Softmaxes are max-subtracted. Rejects
/// non-finite features.
ScoreBundle forward_cbp(const Matrix& features, const ModelParams& params,
                        int head);

/// Refinement-stage forward: sigmoid classification scores (multi-label, rows
/// need not sum to 1), column-softmax instance scores, Hadamard product and
/// bag score as in the fixed stage. prev_bag_score (the previous stage's bag
/// score) is carried along for the loss weighting.
ScoreBundle forward_pbr(const Matrix& features, const ModelParams& params,
                        int head, const std::vector<double>& prev_bag_score);

/// Negative samples get sigmoid classification scores only; the instance
/// stream does not apply to them.
NegScores score_negatives(const Matrix& features, const ModelParams& params,
                          int head);

/// Accumulates d(loss)/d(params) into params.grads given d(loss)/d(bag_score).
void backward_bag(const ScoreBundle& f, const std::vector<double>& d_bag,
                  ModelParams& params);

/// Accumulates gradients for the negative stream given d(loss)/d(s_cls).
void backward_negatives(const NegScores& f, const Matrix& d_s_cls,
                        ModelParams& params);

/// Versioned binary parameter dump; save -> load round-trips bit-exactly.
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace p2b
