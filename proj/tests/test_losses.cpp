#include <cmath>
#include <vector>

#include "doctest.h"
#include "p2b/error.hpp"
#include "p2b/losses.hpp"
#include "p2b/matrix.hpp"
#include "p2b/model.hpp"
#include "p2b/rng.hpp"

using p2b::LossConfig;
using p2b::Matrix;

namespace {

Matrix from_rows(const std::vector<std::vector<double>>& rows) {
  Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      m(static_cast<int>(r), static_cast<int>(c)) = rows[r][c];
    }
  }
  return m;
}

Matrix one_hot(const std::vector<int>& cats, int k) {
  Matrix m(static_cast<int>(cats.size()), k);
  for (std::size_t r = 0; r < cats.size(); ++r) {
    m(static_cast<int>(r), cats[r]) = 1.0;
  }
  return m;
}

Matrix interior_scores(int rows, int cols, std::uint64_t seed) {
  Matrix m(rows, cols);
  p2b::Rng rng(seed);
  for (double& v : m.data) v = rng.uniform(0.05, 0.95);
  return m;
}

}  // namespace

TEST_CASE("bag cross-entropy frozen values") {
  // Single object, single class, score one half.
  CHECK(p2b::loss_cbp(from_rows({{0.5}}), one_hot({0}, 1)) ==
        doctest::Approx(0.6931).epsilon(1e-3));

  // Perfect prediction is flattened by the clamp to nearly zero.
  const Matrix perfect = from_rows({{1.0, 0.0, 0.0}});
  CHECK(p2b::loss_cbp(perfect, one_hot({0}, 3)) <= 3 * 2e-7);

  // Permutation invariance over objects.
  const Matrix s = interior_scores(4, 3, 1);
  const Matrix c = one_hot({0, 2, 1, 0}, 3);
  Matrix s_perm(4, 3);
  const int perm[4] = {2, 0, 3, 1};
  std::vector<int> cats_perm(4);
  const int cats[4] = {0, 2, 1, 0};
  for (int r = 0; r < 4; ++r) {
    cats_perm[r] = cats[perm[r]];
    for (int k = 0; k < 3; ++k) s_perm(r, k) = s(perm[r], k);
  }
  CHECK(p2b::loss_cbp(s, c) ==
        doctest::Approx(p2b::loss_cbp(s_perm, one_hot(cats_perm, 3)))
            .epsilon(1e-12));
}

TEST_CASE("bag cross-entropy rejects labels that are not one-hot") {
  const Matrix s = from_rows({{0.5, 0.5}});
  CHECK_THROWS_AS(p2b::loss_cbp(s, from_rows({{1.0, 1.0}})),
                  p2b::ValidationError);
  CHECK_THROWS_AS(p2b::loss_cbp(s, from_rows({{0.0, 0.0}})),
                  p2b::ValidationError);
  CHECK_THROWS_AS(p2b::loss_cbp(s, from_rows({{0.5, 0.5}})),
                  p2b::ValidationError);
  CHECK_THROWS_AS(p2b::loss_cbp(s, from_rows({{1.0}})), p2b::ValidationError);
}

TEST_CASE("focal loss frozen values and gamma-zero identity") {
  // Perfect one-hot prediction.
  CHECK(p2b::focal({1.0, 0.0}, {1.0, 0.0}, 2.0) < 1e-12);

  // Single class, score one half: (0.5)^2 * log 2.
  CHECK(p2b::focal({0.5}, {1.0}, 2.0) ==
        doctest::Approx(0.1733).epsilon(1e-3));

  // gamma = 0 reduces to the plain cross-entropy kernel.
  const Matrix s = interior_scores(1, 4, 7);
  const std::vector<double> zeta(s.data);
  const std::vector<double> tau{0.0, 0.0, 1.0, 0.0};
  CHECK(p2b::focal(zeta, tau, 0.0) ==
        p2b::loss_cbp(s, from_rows({tau})));

  // The clamp zeroes the gradient at a saturated true-class score.
  const auto g = p2b::focal_grad({1.0, 0.0}, {1.0, 0.0}, 2.0);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);
}

TEST_CASE("prior-weighted focal loss frozen values") {
  const Matrix labels = one_hot({0}, 1);
  // Zero prior mass on the true class kills the object's contribution.
  CHECK(p2b::loss_pbr_mil(from_rows({{0.2}}), from_rows({{0.0}}), labels,
                          2.0) == 0.0);

  // Half prior weight times the focal value 0.1733.
  CHECK(p2b::loss_pbr_mil(from_rows({{0.5}}), from_rows({{0.5}}), labels,
                          2.0) == doctest::Approx(0.08665).epsilon(1e-3));

  // Linearity in the prior weight.
  const Matrix cur = interior_scores(3, 2, 11);
  const Matrix prev = interior_scores(3, 2, 12);
  Matrix prev_scaled = prev;
  for (double& v : prev_scaled.data) v *= 0.37;
  const Matrix c = one_hot({1, 0, 1}, 2);
  CHECK(p2b::loss_pbr_mil(cur, prev_scaled, c, 2.0) ==
        doctest::Approx(0.37 * p2b::loss_pbr_mil(cur, prev, c, 2.0))
            .epsilon(1e-12));
}

TEST_CASE("negative suppression frozen values") {
  // Confident negatives at the clamp floor cost nearly nothing.
  const Matrix floor = from_rows({{0.0, 0.0}, {0.0, 0.0}});
  CHECK(p2b::loss_neg(floor, 1.0, 2.0) < 1e-12);

  // Single score one half: -(1/4) log(1/2).
  CHECK(p2b::loss_neg(from_rows({{0.5}}), 1.0, 2.0) ==
        doctest::Approx(0.1733).epsilon(1e-3));

  // Linear in the weight.
  const Matrix s = interior_scores(5, 3, 13);
  CHECK(p2b::loss_neg(s, 0.8, 2.0) ==
        doctest::Approx(2.0 * p2b::loss_neg(s, 0.4, 2.0)).epsilon(1e-12));

  CHECK_THROWS_AS(p2b::loss_neg(Matrix(0, 3), 1.0, 2.0),
                  p2b::ValidationError);
}

TEST_CASE("beta weight is the mean prior true-class score") {
  const Matrix prev = from_rows({{0.9, 0.1}, {0.3, 0.5}});
  CHECK(p2b::beta_weight(prev, one_hot({0, 1}, 2)) ==
        doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("loss kernel gradients match finite differences") {
  p2b::Rng rng(99);
  const double eps = 1e-6;
  for (int trial = 0; trial < 30; ++trial) {
    const int m = rng.uniform_int(1, 4);
    const int k = rng.uniform_int(1, 3);
    std::vector<int> cats(static_cast<std::size_t>(m));
    for (int& c : cats) c = rng.uniform_int(0, k - 1);
    const Matrix labels = one_hot(cats, k);
    Matrix s = interior_scores(m, k, 1000 + static_cast<std::uint64_t>(trial));
    const Matrix prev =
        interior_scores(m, k, 2000 + static_cast<std::uint64_t>(trial));
    const double gamma = (trial % 3 == 0) ? 0.0 : 2.0;

    Matrix d_cbp(m, k), d_mil2(m, k), d_neg(m, k);
    p2b::loss_cbp_grad(s, labels, d_cbp);
    p2b::loss_pbr_mil_grad(s, prev, labels, gamma, d_mil2);
    p2b::loss_neg_grad(s, 0.6, gamma, d_neg);

    for (std::size_t i = 0; i < s.data.size(); ++i) {
      const double orig = s.data[i];
      const auto fd = [&](auto f) {
        s.data[i] = orig + eps;
        const double hi = f();
        s.data[i] = orig - eps;
        const double lo = f();
        s.data[i] = orig;
        return (hi - lo) / (2 * eps);
      };
      CHECK(d_cbp.data[i] ==
            doctest::Approx(fd([&] { return p2b::loss_cbp(s, labels); }))
                .epsilon(1e-5)
                .scale(1.0));
      CHECK(d_mil2.data[i] ==
            doctest::Approx(fd([&] {
              return p2b::loss_pbr_mil(s, prev, labels, gamma);
            })).epsilon(1e-5).scale(1.0));
      CHECK(d_neg.data[i] ==
            doctest::Approx(fd([&] { return p2b::loss_neg(s, 0.6, gamma); }))
                .epsilon(1e-5)
                .scale(1.0));
    }
  }
}

TEST_CASE("composed stage loss gradient matches finite differences") {
  // Full chain: trunk + heads -> bag scores -> weighted losses, with the
  // prior scores and the negative weight held constant, exactly as the
  // training step treats them.
  p2b::Rng rng(3131);
  for (int trial = 0; trial < 10; ++trial) {
    const int d = rng.uniform_int(4, 8);
    const int k = rng.uniform_int(1, 3);
    const int m = rng.uniform_int(1, 3);
    const int n_neg = rng.uniform_int(1, 6);
    const LossConfig cfg;

    std::vector<Matrix> feats, pbr_feats;
    std::vector<int> cats;
    for (int j = 0; j < m; ++j) {
      const int u = rng.uniform_int(1, 5);
      Matrix f(u, d), g(rng.uniform_int(1, 5), d);
      for (double& v : f.data) v = rng.uniform(-1, 1);
      for (double& v : g.data) v = rng.uniform(-1, 1);
      feats.push_back(std::move(f));
      pbr_feats.push_back(std::move(g));
      cats.push_back(rng.uniform_int(0, k - 1));
    }
    Matrix neg_feats(n_neg, d);
    for (double& v : neg_feats.data) v = rng.uniform(-1, 1);
    const Matrix labels = one_hot(cats, k);
    Matrix prev = interior_scores(m, k, 4000 + static_cast<std::uint64_t>(trial));
    const double beta = p2b::beta_weight(prev, labels);

    p2b::ModelParams params(d, 4, k, 2, 50 + static_cast<std::uint64_t>(trial));

    const auto total_loss = [&](const p2b::ModelParams& p) {
      Matrix s0(m, k), s1(m, k);
      for (int j = 0; j < m; ++j) {
        const auto b0 = p2b::forward_cbp(feats[j], p, 0);
        const auto b1 =
            p2b::forward_pbr(pbr_feats[j], p, 1, prev.row_vector(j));
        for (int kk = 0; kk < k; ++kk) {
          s0(j, kk) = b0.bag_score[static_cast<std::size_t>(kk)];
          s1(j, kk) = b1.bag_score[static_cast<std::size_t>(kk)];
        }
      }
      const auto ns = p2b::score_negatives(neg_feats, p, 1);
      return cfg.alpha_mil1 * p2b::loss_cbp(s0, labels) +
             cfg.alpha_mil2 * p2b::loss_pbr_mil(s1, prev, labels, cfg.gamma) +
             cfg.alpha_neg * p2b::loss_neg(ns.s_cls, beta, cfg.gamma);
    };

    // Analytic pass.
    params.zero_grads();
    Matrix s0(m, k), s1(m, k);
    std::vector<p2b::ScoreBundle> b0s, b1s;
    for (int j = 0; j < m; ++j) {
      b0s.push_back(p2b::forward_cbp(feats[j], params, 0));
      b1s.push_back(
          p2b::forward_pbr(pbr_feats[j], params, 1, prev.row_vector(j)));
      for (int kk = 0; kk < k; ++kk) {
        s0(j, kk) = b0s.back().bag_score[static_cast<std::size_t>(kk)];
        s1(j, kk) = b1s.back().bag_score[static_cast<std::size_t>(kk)];
      }
    }
    const auto ns = p2b::score_negatives(neg_feats, params, 1);
    Matrix d0(m, k), d1(m, k), dn(n_neg, k);
    p2b::loss_cbp_grad(s0, labels, d0);
    p2b::loss_pbr_mil_grad(s1, prev, labels, cfg.gamma, d1);
    p2b::loss_neg_grad(ns.s_cls, beta, cfg.gamma, dn);
    for (double& v : d0.data) v *= cfg.alpha_mil1;
    for (double& v : d1.data) v *= cfg.alpha_mil2;
    for (double& v : dn.data) v *= cfg.alpha_neg;
    for (int j = 0; j < m; ++j) {
      p2b::backward_bag(b0s[static_cast<std::size_t>(j)], d0.row_vector(j),
                        params);
      p2b::backward_bag(b1s[static_cast<std::size_t>(j)], d1.row_vector(j),
                        params);
    }
    p2b::backward_negatives(ns, dn, params);

    const double eps = 1e-5;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double orig = params.values[i];
      params.values[i] = orig + eps;
      const double hi = total_loss(params);
      params.values[i] = orig - eps;
      const double lo = total_loss(params);
      params.values[i] = orig;
      const double want = (hi - lo) / (2 * eps);
      CHECK(params.grads[i] ==
            doctest::Approx(want).epsilon(1e-5).scale(0.1));
    }
  }
}

TEST_CASE("symmetric labels on identical bags sit at a stationary point") {
  // Two objects share one feature matrix; their labels are complementary.
  // With zero parameters and a singleton bag every bag score is exactly one
  // half, so the two per-object gradients are exact negations and the
  // parameter gradient cancels bit-exactly. (A multi-proposal bag lands
  // within rounding of 0.5 instead, which breaks exact cancellation.)
  Matrix f(1, 5);
  p2b::Rng rng(17);
  for (double& v : f.data) v = rng.uniform(-1, 1);
  p2b::ModelParams params(5, 4, 2, 1);
  params.zero_grads();

  const Matrix labels = one_hot({0, 1}, 2);
  Matrix s0(2, 2);
  std::vector<p2b::ScoreBundle> bundles;
  for (int j = 0; j < 2; ++j) {
    bundles.push_back(p2b::forward_cbp(f, params, 0));
    for (int k = 0; k < 2; ++k) {
      s0(j, k) = bundles.back().bag_score[static_cast<std::size_t>(k)];
      CHECK(s0(j, k) == doctest::Approx(0.5));
    }
  }
  Matrix d0(2, 2);
  p2b::loss_cbp_grad(s0, labels, d0);
  for (int j = 0; j < 2; ++j) {
    p2b::backward_bag(bundles[static_cast<std::size_t>(j)], d0.row_vector(j),
                      params);
  }
  for (double g : params.grads) {
    CHECK(g == 0.0);
  }
}

TEST_CASE("a small gradient step decreases the bag loss") {
  p2b::Rng rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 6, k = 2, u = 4;
    Matrix f(u, d);
    for (double& v : f.data) v = rng.uniform(-1, 1);
    const Matrix labels =
        one_hot({static_cast<int>(rng.uniform_int(0, k - 1))}, k);
    p2b::ModelParams params(d, 5, k, 1, 600 + static_cast<std::uint64_t>(trial));

    const auto loss = [&](const p2b::ModelParams& p) {
      const auto b = p2b::forward_cbp(f, p, 0);
      Matrix s(1, k);
      for (int kk = 0; kk < k; ++kk) {
        s(0, kk) = b.bag_score[static_cast<std::size_t>(kk)];
      }
      return p2b::loss_cbp(s, labels);
    };

    params.zero_grads();
    const auto b = p2b::forward_cbp(f, params, 0);
    Matrix s(1, k);
    for (int kk = 0; kk < k; ++kk) {
      s(0, kk) = b.bag_score[static_cast<std::size_t>(kk)];
    }
    Matrix d0(1, k);
    p2b::loss_cbp_grad(s, labels, d0);
    p2b::backward_bag(b, d0.row_vector(0), params);

    const double before = loss(params);
    for (std::size_t i = 0; i < params.size(); ++i) {
      params.values[i] -= 1e-4 * params.grads[i];
    }
    CHECK(loss(params) < before);
  }
}

TEST_CASE("learning-rate schedule steps down at the configured fractions") {
  LossConfig cfg;
  cfg.lr = 0.002;
  cfg.epochs = 12;
  CHECK(cfg.lr_at(0) == doctest::Approx(0.002));
  CHECK(cfg.lr_at(7) == doctest::Approx(0.002));
  CHECK(cfg.lr_at(8) == doctest::Approx(0.0002));
  CHECK(cfg.lr_at(10) == doctest::Approx(0.0002));
  CHECK(cfg.lr_at(11) == doctest::Approx(0.00002));
}

TEST_CASE("loss config validation") {
  LossConfig ok;
  CHECK_NOTHROW(ok.validate());
  LossConfig bad = ok;
  bad.alpha_neg = -0.1;
  CHECK_THROWS_AS(bad.validate(), p2b::ValidationError);
  bad = ok;
  bad.stages = -1;
  CHECK_THROWS_AS(bad.validate(), p2b::ValidationError);
  bad = ok;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), p2b::ValidationError);
  bad = ok;
  bad.decay_at = {1.5};
  CHECK_THROWS_AS(bad.validate(), p2b::ValidationError);
  bad = ok;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), p2b::ValidationError);
}

TEST_CASE("loss report validation enforces stage additivity") {
  p2b::LossReport r;
  r.l_cbp = 0.4;
  r.l_mil2 = {0.2};
  r.l_neg = {0.1};
  r.l_pbr = {0.125};
  r.beta = {0.5};
  r.l_p2b = 0.525;
  CHECK_NOTHROW(r.validate());
  r.l_p2b = 0.6;
  CHECK_THROWS_AS(r.validate(), p2b::ValidationError);
  r.l_p2b = 0.525;
  r.beta = {};
  CHECK_THROWS_AS(r.validate(), p2b::ValidationError);
}
