#include "p2b/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <utility>

#include "p2b/error.hpp"
#include "p2b/metrics.hpp"
#include "p2b/rng.hpp"

namespace p2b {

namespace {

/// Loss parts and parameter gradients contributed by one image.
struct ImagePass {
  bool has_objects = false;
  double cbp = 0.0;  ///< alpha_mil1-weighted
  std::vector<double> mil2;
  std::vector<double> negl;
  std::vector<double> beta;
  std::vector<std::vector<double>> obj_w;  ///< [iteration][local object]
  double total = 0.0;
  std::vector<double> grads;
};

void check_scores_finite(const ScoreBundle& b, int object_id, int stage) {
  for (double v : b.bag_score) {
    if (!std::isfinite(v)) {
      throw DivergenceError(
          "model scores became non-finite while refreshing pseudo boxes "
          "(object id " +
          std::to_string(object_id) + ", stage " + std::to_string(stage) +
          ")");
    }
  }
}

Matrix featurize_bag(const SceneGrid& grid, const ProposalBag& bag,
                     int pooled, int dim) {
  Matrix f(static_cast<int>(bag.proposals.size()), dim);
  for (std::size_t r = 0; r < bag.proposals.size(); ++r) {
    const std::vector<double> row =
        featurize(grid, bag.proposals[r], pooled);
    std::copy(row.begin(), row.end(), f.row(static_cast<int>(r)));
  }
  return f;
}

/// Runs fn(0..n-1) on up to `threads` workers. Worker exceptions are
/// re-thrown after the join, lowest index first, so failures are
/// deterministic too.
void parallel_over(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::atomic<int> next{0};
  const auto worker = [&] {
    for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (std::thread& th : pool) th.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct Trainer {
  const Dataset& data;
  const std::vector<SceneGrid>& grids;
  const SamplerConfig& scfg;
  const LossConfig& lcfg;
  const MergeConfig& mcfg;
  std::uint64_t seed;
  int threads;
  int k_cats;
  int dim;

  std::vector<std::vector<int>> image_objects;  ///< image idx -> object idxs
  std::vector<ProposalBag> cbp_bags;            ///< per object index, fixed
  /// Refinement bags of the current epoch: [iteration-1][object index].
  std::vector<std::vector<ProposalBag>> pbr_bags;
  /// Current pseudo boxes: [stage][object index].
  std::vector<std::vector<Box>> pseudo;

  Trainer(const Dataset& d, const std::vector<SceneGrid>& g,
          const SamplerConfig& sc, const LossConfig& lc,
          const MergeConfig& mc, std::uint64_t s)
      : data(d), grids(g), scfg(sc), lcfg(lc), mcfg(mc), seed(s),
        threads(worker_threads()), k_cats(d.num_categories()),
        dim(feature_dim(lc.pooled, g.empty() ? 8 : g.front().dpix)) {
    image_objects.resize(data.images.size());
    for (std::size_t i = 0; i < data.images.size(); ++i) {
      image_objects[i] = data.object_indices_of_image(data.images[i].id);
    }
    cbp_bags.reserve(data.objects.size());
    for (std::size_t oi = 0; oi < data.objects.size(); ++oi) {
      const ObjectRecord& obj = data.objects[oi];
      cbp_bags.push_back(cbp_bag(*obj.point, obj.object_id,
                                 data.image_by_id(obj.image_id).shape,
                                 scfg));
    }
    pbr_bags.assign(static_cast<std::size_t>(lcfg.stages),
                    std::vector<ProposalBag>(data.objects.size()));
    pseudo.assign(static_cast<std::size_t>(lcfg.stages) + 1,
                  std::vector<Box>(data.objects.size()));
  }

  std::map<int, Box> pseudo_map(int stage) const {
    std::map<int, Box> out;
    for (std::size_t oi = 0; oi < data.objects.size(); ++oi) {
      out.emplace(data.objects[oi].object_id,
                  pseudo[static_cast<std::size_t>(stage)][oi]);
    }
    return out;
  }

  /// Re-merges every stage's pseudo boxes with the given parameters and
  /// rebuilds the refinement bags around the stage below. Returns the
  /// per-stage pseudo-box mIoU.
  std::vector<double> refresh(const ModelParams& params) {
    parallel_over(
        static_cast<int>(data.images.size()), threads, [&](int ii) {
          const SceneGrid& grid = grids[static_cast<std::size_t>(ii)];
          for (int oi : image_objects[static_cast<std::size_t>(ii)]) {
            const ObjectRecord& obj =
                data.objects[static_cast<std::size_t>(oi)];
            const ImageShape shape =
                data.images[static_cast<std::size_t>(ii)].shape;
            const ProposalBag& bag0 = cbp_bags[static_cast<std::size_t>(oi)];
            const Matrix f0 = featurize_bag(grid, bag0, lcfg.pooled, dim);
            ScoreBundle b = forward_cbp(f0, params, 0);
            check_scores_finite(b, obj.object_id, 0);
            pseudo[0][static_cast<std::size_t>(oi)] = merge_topk(
                bag0, merge_scores(b, mcfg), obj.category, mcfg);
            std::vector<double> prev = b.bag_score;
            for (int t = 1; t <= lcfg.stages; ++t) {
              ProposalBag bag;
              try {
                bag = pbr_bag(pseudo[static_cast<std::size_t>(t) - 1]
                                    [static_cast<std::size_t>(oi)],
                              obj.object_id, t, shape, scfg);
              } catch (const SamplingError& e) {
                throw SamplingError(
                    "refinement collapsed for object id " +
                    std::to_string(obj.object_id) + " at iteration " +
                    std::to_string(t) + ": " + e.what());
              }
              const Matrix ft = featurize_bag(grid, bag, lcfg.pooled, dim);
              const ScoreBundle bt = forward_pbr(ft, params, t, prev);
              check_scores_finite(bt, obj.object_id, t);
              pseudo[static_cast<std::size_t>(t)]
                    [static_cast<std::size_t>(oi)] = merge_topk(
                  bag, merge_scores(bt, mcfg), obj.category, mcfg);
              prev = bt.bag_score;
              pbr_bags[static_cast<std::size_t>(t) - 1]
                      [static_cast<std::size_t>(oi)] = std::move(bag);
            }
          }
        });
    std::vector<double> miou;
    for (int t = 0; t <= lcfg.stages; ++t) {
      miou.push_back(miou_pred(pseudo_map(t), data));
    }
    return miou;
  }

  ImagePass image_pass(int ii, int epoch, const ModelParams& base) const {
    ImagePass out;
    const std::size_t stages = static_cast<std::size_t>(lcfg.stages);
    out.mil2.assign(stages, 0.0);
    out.negl.assign(stages, 0.0);
    out.beta.assign(stages, 0.0);
    out.obj_w.assign(stages, {});
    const std::vector<int>& objs =
        image_objects[static_cast<std::size_t>(ii)];
    if (objs.empty()) return out;
    out.has_objects = true;

    const SceneGrid& grid = grids[static_cast<std::size_t>(ii)];
    const ImageRecord& img = data.images[static_cast<std::size_t>(ii)];
    const int m = static_cast<int>(objs.size());
    Matrix labels(m, k_cats);
    for (int j = 0; j < m; ++j) {
      labels(j, data.objects[static_cast<std::size_t>(objs[j])].category) =
          1.0;
    }

    ModelParams local = base;
    local.zero_grads();

    std::vector<ScoreBundle> bundles(static_cast<std::size_t>(m));
    Matrix scores(m, k_cats);
    for (int j = 0; j < m; ++j) {
      const ProposalBag& bag =
          cbp_bags[static_cast<std::size_t>(objs[j])];
      const Matrix f = featurize_bag(grid, bag, lcfg.pooled, dim);
      bundles[static_cast<std::size_t>(j)] = forward_cbp(f, local, 0);
      for (int k = 0; k < k_cats; ++k) {
        scores(j, k) =
            bundles[static_cast<std::size_t>(j)].bag_score
                [static_cast<std::size_t>(k)];
      }
    }
    out.cbp = lcfg.alpha_mil1 * loss_cbp(scores, labels);
    out.total = out.cbp;
    Matrix d_bag;
    loss_cbp_grad(scores, labels, d_bag);
    for (double& v : d_bag.data) v *= lcfg.alpha_mil1;
    for (int j = 0; j < m; ++j) {
      backward_bag(bundles[static_cast<std::size_t>(j)], d_bag.row_vector(j),
                   local);
    }

    // All of the image's bags, for the negative-overlap filter.
    std::vector<ProposalBag> all_bags;
    for (int j = 0; j < m; ++j) {
      all_bags.push_back(cbp_bags[static_cast<std::size_t>(objs[j])]);
    }
    for (std::size_t t = 0; t < stages; ++t) {
      for (int j = 0; j < m; ++j) {
        all_bags.push_back(pbr_bags[t][static_cast<std::size_t>(objs[j])]);
      }
    }

    Matrix prev = scores;
    for (int t = 1; t <= lcfg.stages; ++t) {
      Matrix cur(m, k_cats);
      for (int j = 0; j < m; ++j) {
        const ProposalBag& bag = pbr_bags[static_cast<std::size_t>(t) - 1]
                                         [static_cast<std::size_t>(objs[j])];
        const Matrix f = featurize_bag(grid, bag, lcfg.pooled, dim);
        bundles[static_cast<std::size_t>(j)] =
            forward_pbr(f, local, t, prev.row_vector(j));
        for (int k = 0; k < k_cats; ++k) {
          cur(j, k) = bundles[static_cast<std::size_t>(j)].bag_score
              [static_cast<std::size_t>(k)];
        }
      }
      const double l_mil2 = loss_pbr_mil(cur, prev, labels, lcfg.gamma);
      loss_pbr_mil_grad(cur, prev, labels, lcfg.gamma, d_bag);
      for (double& v : d_bag.data) v *= lcfg.alpha_mil2;
      for (int j = 0; j < m; ++j) {
        backward_bag(bundles[static_cast<std::size_t>(j)],
                     d_bag.row_vector(j), local);
      }

      const double beta = beta_weight(prev, labels);
      std::vector<double>& weights =
          out.obj_w[static_cast<std::size_t>(t) - 1];
      weights.assign(static_cast<std::size_t>(m), 0.0);
      for (int j = 0; j < m; ++j) {
        const int cat =
            data.objects[static_cast<std::size_t>(objs[j])].category;
        weights[static_cast<std::size_t>(j)] = prev(j, cat);
      }

      double l_neg = 0.0;
      const NegativeSet negs = sample_negatives(
          all_bags, img.id, img.shape, scfg,
          derive_seed(seed, 0x6E656700u + static_cast<std::uint64_t>(epoch),
                      static_cast<std::uint64_t>(ii),
                      static_cast<std::uint64_t>(t)));
      if (!negs.negatives.empty()) {
        ProposalBag neg_bag;
        neg_bag.proposals = negs.negatives;
        const Matrix fn = featurize_bag(grid, neg_bag, lcfg.pooled, dim);
        const NegScores ns = score_negatives(fn, local, t);
        l_neg = loss_neg(ns.s_cls, beta, lcfg.gamma);
        Matrix d_neg;
        loss_neg_grad(ns.s_cls, beta, lcfg.gamma, d_neg);
        for (double& v : d_neg.data) v *= lcfg.alpha_neg;
        backward_negatives(ns, d_neg, local);
      }

      out.mil2[static_cast<std::size_t>(t) - 1] = l_mil2;
      out.negl[static_cast<std::size_t>(t) - 1] = l_neg;
      out.beta[static_cast<std::size_t>(t) - 1] = beta;
      out.total += lcfg.alpha_mil2 * l_mil2 + lcfg.alpha_neg * l_neg;
      prev = cur;
    }

    if (!std::isfinite(out.total)) {
      throw DivergenceError("training diverged: non-finite loss at epoch " +
                            std::to_string(epoch) + ", image id " +
                            std::to_string(img.id));
    }
    out.grads = std::move(local.grads);
    return out;
  }
};

void validate_run_inputs(const Dataset& data,
                         const std::vector<SceneGrid>& grids,
                         const SamplerConfig& scfg, const LossConfig& lcfg,
                         const MergeConfig& mcfg) {
  scfg.validate();
  lcfg.validate();
  mcfg.validate();
  data.validate();
  if (data.objects.empty()) {
    throw ValidationError("training needs at least one annotated object");
  }
  for (const ObjectRecord& obj : data.objects) {
    if (!obj.point.has_value()) {
      throw ValidationError("object id " + std::to_string(obj.object_id) +
                            " has no point annotation");
    }
  }
  if (grids.size() != data.images.size()) {
    throw ValidationError("got " + std::to_string(grids.size()) +
                          " scene grids for " +
                          std::to_string(data.images.size()) + " images");
  }
  for (std::size_t i = 0; i < grids.size(); ++i) {
    if (grids[i].shape.width != data.images[i].shape.width ||
        grids[i].shape.height != data.images[i].shape.height) {
      throw ValidationError("scene grid " + std::to_string(i) +
                            " shape disagrees with image id " +
                            std::to_string(data.images[i].id));
    }
    if (grids[i].dpix != grids[0].dpix || grids[i].stride != grids[0].stride) {
      throw ValidationError("scene grids disagree on channel count or stride");
    }
  }
}

void check_params_shape(const ModelParams& params, int dim, int k_cats,
                        int heads) {
  if (params.feature_dim() != dim || params.categories() != k_cats ||
      params.heads() != heads) {
    throw ValidationError(
        "model parameters do not match this run: expected feature dim " +
        std::to_string(dim) + ", " + std::to_string(k_cats) +
        " categories, " + std::to_string(heads) + " heads");
  }
}

}  // namespace

int worker_threads() {
  if (const char* env = std::getenv("P2B_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<int>(std::min(v, 64L));
    return 1;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(std::min(hw, 16u));
}

TrainResult train_p2bnet(const Dataset& data,
                         const std::vector<SceneGrid>& grids,
                         const SamplerConfig& scfg, const LossConfig& lcfg,
                         const MergeConfig& mcfg, std::uint64_t seed,
                         const ModelParams* init, std::ostream* log) {
  validate_run_inputs(data, grids, scfg, lcfg, mcfg);

  Trainer tr(data, grids, scfg, lcfg, mcfg, seed);
  const int k_cats = data.num_categories();
  const int heads = lcfg.stages + 1;

  ModelParams params =
      init ? *init
           : ModelParams(tr.dim, lcfg.hidden_dim, k_cats, heads,
                         derive_seed(seed, 101));
  check_params_shape(params, tr.dim, k_cats, heads);
  params.zero_grads();

  std::vector<EpochStats> epoch_stats;
  const int num_images = static_cast<int>(data.images.size());
  const std::size_t stages = static_cast<std::size_t>(lcfg.stages);

  for (int epoch = 0; epoch < lcfg.epochs; ++epoch) {
    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lcfg.lr_at(epoch);
    stats.stage_miou = tr.refresh(params);

    double sum_cbp = 0.0;
    std::vector<double> sum_mil2(stages, 0.0), sum_negl(stages, 0.0),
        sum_beta(stages, 0.0);
    std::vector<std::vector<double>> obj_w(
        stages, std::vector<double>(data.objects.size(), 0.0));
    int contributing = 0;

    for (int start = 0; start < num_images; start += lcfg.batch_images) {
      const int batch_n =
          std::min(lcfg.batch_images, num_images - start);
      std::vector<ImagePass> passes(static_cast<std::size_t>(batch_n));
      parallel_over(batch_n, tr.threads, [&](int bi) {
        passes[static_cast<std::size_t>(bi)] =
            tr.image_pass(start + bi, epoch, params);
      });

      std::vector<double> gsum(params.size(), 0.0);
      int used = 0;
      for (int bi = 0; bi < batch_n; ++bi) {
        const ImagePass& p = passes[static_cast<std::size_t>(bi)];
        if (!p.has_objects) continue;
        ++used;
        for (std::size_t i = 0; i < gsum.size(); ++i) gsum[i] += p.grads[i];
        sum_cbp += p.cbp;
        for (std::size_t t = 0; t < stages; ++t) {
          sum_mil2[t] += p.mil2[t];
          sum_negl[t] += p.negl[t];
          sum_beta[t] += p.beta[t];
          const std::vector<int>& objs =
              tr.image_objects[static_cast<std::size_t>(start + bi)];
          for (std::size_t j = 0; j < objs.size(); ++j) {
            obj_w[t][static_cast<std::size_t>(objs[j])] = p.obj_w[t][j];
          }
        }
      }
      if (used == 0) continue;
      contributing += used;
      const double scale = stats.lr / used;
      for (std::size_t i = 0; i < params.values.size(); ++i) {
        params.values[i] -= scale * gsum[i];
      }
    }

    LossReport& rep = stats.loss;
    rep.l_cbp = sum_cbp / contributing;
    for (std::size_t t = 0; t < stages; ++t) {
      rep.l_mil2.push_back(sum_mil2[t] / contributing);
      rep.l_neg.push_back(sum_negl[t] / contributing);
      rep.beta.push_back(sum_beta[t] / contributing);
      rep.l_pbr.push_back(lcfg.alpha_mil2 * rep.l_mil2[t] +
                          lcfg.alpha_neg * rep.l_neg[t]);
    }
    rep.l_p2b = rep.l_cbp;
    for (double v : rep.l_pbr) rep.l_p2b += v;
    rep.object_weight = std::move(obj_w);
    rep.validate();

    if (log) {
      (*log) << "epoch " << epoch << " lr " << stats.lr << " l_p2b "
             << rep.l_p2b << " miou";
      for (double v : stats.stage_miou) (*log) << ' ' << v;
      (*log) << '\n';
    }
    epoch_stats.push_back(std::move(stats));
  }

  const std::vector<double> final_miou = tr.refresh(params);
  std::vector<std::map<int, Box>> stage_pseudo;
  for (int t = 0; t <= lcfg.stages; ++t) {
    stage_pseudo.push_back(tr.pseudo_map(t));
  }
  return TrainResult{std::move(params), std::move(stage_pseudo), final_miou,
                     std::move(epoch_stats)};
}

std::vector<std::map<int, Box>> predict_pseudo(
    const Dataset& data, const std::vector<SceneGrid>& grids,
    const SamplerConfig& scfg, const LossConfig& lcfg, const MergeConfig& mcfg,
    const ModelParams& params) {
  validate_run_inputs(data, grids, scfg, lcfg, mcfg);
  Trainer tr(data, grids, scfg, lcfg, mcfg, 0);
  check_params_shape(params, tr.dim, data.num_categories(), lcfg.stages + 1);
  tr.refresh(params);
  std::vector<std::map<int, Box>> out;
  for (int t = 0; t <= lcfg.stages; ++t) {
    out.push_back(tr.pseudo_map(t));
  }
  return out;
}

}  // namespace p2b
