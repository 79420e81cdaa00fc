#include "p2b/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "p2b/error.hpp"

namespace p2b {

namespace {

double clamp_score(double v) {
  return std::min(std::max(v, kScoreClamp), 1.0 - kScoreClamp);
}

bool clamp_active(double v) {
  return v < kScoreClamp || v > 1.0 - kScoreClamp;
}

void check_one_hot(const Matrix& labels) {
  for (int j = 0; j < labels.rows; ++j) {
    int ones = 0;
    for (int k = 0; k < labels.cols; ++k) {
      const double v = labels(j, k);
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        throw ValidationError("label row " + std::to_string(j) +
                              " is not one-hot: entry " + std::to_string(k) +
                              " is neither 0 nor 1");
      }
    }
    if (ones != 1) {
      throw ValidationError("label row " + std::to_string(j) + " has " +
                            std::to_string(ones) + " ones, expected 1");
    }
  }
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw ValidationError(std::string(what) + ": shape mismatch (" +
                          std::to_string(a.rows) + "x" +
                          std::to_string(a.cols) + " vs " +
                          std::to_string(b.rows) + "x" +
                          std::to_string(b.cols) + ")");
  }
}

void check_nonempty(const Matrix& m, const char* what) {
  if (m.rows < 1 || m.cols < 1) {
    throw ValidationError(std::string(what) + ": empty score matrix");
  }
}

// Focal term and its derivative for a single (score, target) entry.
double focal_term(double z, double t, double gamma) {
  return -(t * std::pow(1.0 - z, gamma) * std::log(z) +
           (1.0 - t) * std::pow(z, gamma) * std::log(1.0 - z));
}

double focal_term_grad(double z, double t, double gamma) {
  const double pos = -gamma * std::pow(1.0 - z, gamma - 1.0) * std::log(z) +
                     std::pow(1.0 - z, gamma) / z;
  const double neg = gamma * std::pow(z, gamma - 1.0) * std::log(1.0 - z) -
                     std::pow(z, gamma) / (1.0 - z);
  return -(t * pos + (1.0 - t) * neg);
}

}  // namespace

void LossConfig::validate() const {
  if (alpha_mil1 < 0 || alpha_mil2 < 0 || alpha_neg < 0) {
    throw ValidationError("loss weights must be non-negative");
  }
  if (gamma < 0) {
    throw ValidationError("gamma must be non-negative");
  }
  if (stages < 0) {
    throw ValidationError("refinement iteration count must be >= 0");
  }
  if (!(lr > 0)) {
    throw ValidationError("learning rate must be positive");
  }
  if (epochs < 1) {
    throw ValidationError("epoch count must be >= 1");
  }
  if (batch_images < 1) {
    throw ValidationError("batch size must be >= 1");
  }
  for (double f : decay_at) {
    if (!(f > 0.0) || f > 1.0) {
      throw ValidationError("decay epoch fractions must lie in (0, 1]");
    }
  }
  if (!(decay_factor > 0.0) || decay_factor > 1.0) {
    throw ValidationError("decay factor must lie in (0, 1]");
  }
  if (hidden_dim < 1) {
    throw ValidationError("hidden width must be >= 1");
  }
  if (pooled < 1) {
    throw ValidationError("pooled lattice edge must be >= 1");
  }
}

double LossConfig::lr_at(int epoch) const {
  double out = lr;
  for (double f : decay_at) {
    const int threshold = static_cast<int>(std::floor(f * epochs + 0.5));
    if (epoch >= threshold) out *= decay_factor;
  }
  return out;
}

void LossReport::validate() const {
  const std::size_t t = l_pbr.size();
  if (l_mil2.size() != t || l_neg.size() != t || beta.size() != t) {
    throw ValidationError("loss report: per-iteration vectors disagree");
  }
  double total = l_cbp;
  for (double v : l_pbr) total += v;
  if (std::fabs(total - l_p2b) > 1e-9) {
    throw ValidationError("loss report: total differs from stage sum by " +
                          std::to_string(std::fabs(total - l_p2b)));
  }
}

double loss_cbp(const Matrix& bag_scores, const Matrix& labels) {
  check_nonempty(bag_scores, "loss_cbp");
  check_same_shape(bag_scores, labels, "loss_cbp");
  check_one_hot(labels);
  double total = 0.0;
  for (int j = 0; j < bag_scores.rows; ++j) {
    for (int k = 0; k < bag_scores.cols; ++k) {
      const double z = clamp_score(bag_scores(j, k));
      const double c = labels(j, k);
      total += c * std::log(z) + (1.0 - c) * std::log(1.0 - z);
    }
  }
  return -total / bag_scores.rows;
}

void loss_cbp_grad(const Matrix& bag_scores, const Matrix& labels,
                   Matrix& d_bag) {
  check_nonempty(bag_scores, "loss_cbp");
  check_same_shape(bag_scores, labels, "loss_cbp");
  check_one_hot(labels);
  d_bag = Matrix(bag_scores.rows, bag_scores.cols);
  const double inv_m = 1.0 / bag_scores.rows;
  for (int j = 0; j < bag_scores.rows; ++j) {
    for (int k = 0; k < bag_scores.cols; ++k) {
      const double raw = bag_scores(j, k);
      if (clamp_active(raw)) continue;
      const double c = labels(j, k);
      d_bag(j, k) = -inv_m * (c / raw - (1.0 - c) / (1.0 - raw));
    }
  }
}

double focal(const std::vector<double>& zeta, const std::vector<double>& tau,
             double gamma) {
  if (zeta.size() != tau.size() || zeta.empty()) {
    throw ValidationError("focal: score and target sizes disagree");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < zeta.size(); ++k) {
    total += focal_term(clamp_score(zeta[k]), tau[k], gamma);
  }
  return total;
}

std::vector<double> focal_grad(const std::vector<double>& zeta,
                               const std::vector<double>& tau, double gamma) {
  if (zeta.size() != tau.size() || zeta.empty()) {
    throw ValidationError("focal: score and target sizes disagree");
  }
  std::vector<double> out(zeta.size(), 0.0);
  for (std::size_t k = 0; k < zeta.size(); ++k) {
    if (clamp_active(zeta[k])) continue;
    out[k] = focal_term_grad(zeta[k], tau[k], gamma);
  }
  return out;
}

double beta_weight(const Matrix& prev, const Matrix& labels) {
  check_nonempty(prev, "beta_weight");
  check_same_shape(prev, labels, "beta_weight");
  check_one_hot(labels);
  double total = 0.0;
  for (int j = 0; j < prev.rows; ++j) {
    for (int k = 0; k < prev.cols; ++k) {
      total += labels(j, k) * prev(j, k);
    }
  }
  return total / prev.rows;
}

double loss_pbr_mil(const Matrix& cur, const Matrix& prev,
                    const Matrix& labels, double gamma) {
  check_nonempty(cur, "loss_pbr_mil");
  check_same_shape(cur, prev, "loss_pbr_mil");
  check_same_shape(cur, labels, "loss_pbr_mil");
  check_one_hot(labels);
  double total = 0.0;
  for (int j = 0; j < cur.rows; ++j) {
    double weight = 0.0;
    double fl = 0.0;
    for (int k = 0; k < cur.cols; ++k) {
      weight += labels(j, k) * prev(j, k);
      fl += focal_term(clamp_score(cur(j, k)), labels(j, k), gamma);
    }
    total += weight * fl;
  }
  return total / cur.rows;
}

void loss_pbr_mil_grad(const Matrix& cur, const Matrix& prev,
                       const Matrix& labels, double gamma, Matrix& d_bag) {
  check_nonempty(cur, "loss_pbr_mil");
  check_same_shape(cur, prev, "loss_pbr_mil");
  check_same_shape(cur, labels, "loss_pbr_mil");
  check_one_hot(labels);
  d_bag = Matrix(cur.rows, cur.cols);
  const double inv_m = 1.0 / cur.rows;
  for (int j = 0; j < cur.rows; ++j) {
    double weight = 0.0;
    for (int k = 0; k < cur.cols; ++k) {
      weight += labels(j, k) * prev(j, k);
    }
    for (int k = 0; k < cur.cols; ++k) {
      if (clamp_active(cur(j, k))) continue;
      d_bag(j, k) =
          inv_m * weight * focal_term_grad(cur(j, k), labels(j, k), gamma);
    }
  }
}

double loss_neg(const Matrix& s_cls_neg, double beta, double gamma) {
  check_nonempty(s_cls_neg, "loss_neg");
  double total = 0.0;
  for (double raw : s_cls_neg.data) {
    const double s = clamp_score(raw);
    total += std::pow(s, gamma) * std::log(1.0 - s);
  }
  return -beta * total / s_cls_neg.rows;
}

void loss_neg_grad(const Matrix& s_cls_neg, double beta, double gamma,
                   Matrix& d_s) {
  check_nonempty(s_cls_neg, "loss_neg");
  d_s = Matrix(s_cls_neg.rows, s_cls_neg.cols);
  const double scale = -beta / s_cls_neg.rows;
  for (std::size_t i = 0; i < s_cls_neg.data.size(); ++i) {
    const double s = s_cls_neg.data[i];
    if (clamp_active(s)) continue;
    d_s.data[i] = scale * (gamma * std::pow(s, gamma - 1.0) *
                               std::log(1.0 - s) -
                           std::pow(s, gamma) / (1.0 - s));
  }
}

}  // namespace p2b
