#include "p2b/train.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "p2b/error.hpp"
#include "p2b/rng.hpp"
#include "p2b/scene.hpp"

using namespace p2b;

namespace {

struct Fixture {
  SyntheticData data;
  SamplerConfig scfg;
  LossConfig lcfg;
  MergeConfig mcfg;
};

Fixture make_fixture(int epochs = 3, int stages = 1) {
  SceneConfig sc;
  sc.num_images = 6;
  sc.width = 96;
  sc.height = 96;
  sc.num_categories = 2;
  sc.objects_min = 1;
  sc.objects_max = 2;
  sc.size_min = 24.0;
  sc.size_max = 48.0;
  sc.noise_std = 0.05;
  sc.pooled = 5;
  sc.seed = 11;

  Fixture f;
  f.data = generate_dataset(sc);
  for (ObjectRecord& obj : f.data.dataset.objects) {
    obj.point = sample_qc_point(obj, RGParams{},
                                derive_seed(77, static_cast<std::uint64_t>(
                                                    obj.object_id)));
  }
  f.scfg.neg_pool = 100;
  f.lcfg.stages = stages;
  f.lcfg.epochs = epochs;
  f.lcfg.batch_images = 4;
  f.lcfg.hidden_dim = 16;
  f.lcfg.pooled = 5;
  return f;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool same_boxes(const std::map<int, Box>& a, const std::map<int, Box>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [id, box] : a) {
    const auto it = b.find(id);
    if (it == b.end()) return false;
    if (box.cx != it->second.cx || box.cy != it->second.cy ||
        box.w != it->second.w || box.h != it->second.h) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("training is reproducible for a fixed seed") {
  const Fixture f = make_fixture(2);
  const TrainResult a = train_p2bnet(f.data.dataset, f.data.grids, f.scfg,
                                     f.lcfg, f.mcfg, 42);
  const TrainResult b = train_p2bnet(f.data.dataset, f.data.grids, f.scfg,
                                     f.lcfg, f.mcfg, 42);
  CHECK(same_bits(a.params.values, b.params.values));
  REQUIRE(a.stage_pseudo.size() == b.stage_pseudo.size());
  for (std::size_t t = 0; t < a.stage_pseudo.size(); ++t) {
    CHECK(same_boxes(a.stage_pseudo[t], b.stage_pseudo[t]));
  }
  const TrainResult c = train_p2bnet(f.data.dataset, f.data.grids, f.scfg,
                                     f.lcfg, f.mcfg, 43);
  CHECK_FALSE(same_bits(a.params.values, c.params.values));
}

TEST_CASE("results do not depend on the worker thread count") {
  const Fixture f = make_fixture(2);
  setenv("P2B_THREADS", "3", 1);
  CHECK(worker_threads() == 3);
  const TrainResult a = train_p2bnet(f.data.dataset, f.data.grids, f.scfg,
                                     f.lcfg, f.mcfg, 42);
  setenv("P2B_THREADS", "1", 1);
  CHECK(worker_threads() == 1);
  const TrainResult b = train_p2bnet(f.data.dataset, f.data.grids, f.scfg,
                                     f.lcfg, f.mcfg, 42);
  unsetenv("P2B_THREADS");
  CHECK(same_bits(a.params.values, b.params.values));
  for (std::size_t t = 0; t < a.stage_pseudo.size(); ++t) {
    CHECK(same_boxes(a.stage_pseudo[t], b.stage_pseudo[t]));
  }
}

TEST_CASE("invalid thread overrides fall back to one worker") {
  setenv("P2B_THREADS", "0", 1);
  CHECK(worker_threads() == 1);
  setenv("P2B_THREADS", "junk", 1);
  CHECK(worker_threads() == 1);
  setenv("P2B_THREADS", "7", 1);
  CHECK(worker_threads() == 7);
  unsetenv("P2B_THREADS");
  CHECK(worker_threads() >= 1);
}

TEST_CASE("epoch reports are complete and internally consistent") {
  const Fixture f = make_fixture(3);
  std::ostringstream log;
  const TrainResult r = train_p2bnet(f.data.dataset, f.data.grids, f.scfg,
                                     f.lcfg, f.mcfg, 42, nullptr, &log);
  REQUIRE(r.epochs.size() == 3);
  for (const EpochStats& e : r.epochs) {
    CHECK(e.stage_miou.size() == 2);
    CHECK(e.loss.l_pbr.size() == 1);
    CHECK(e.loss.l_mil2.size() == 1);
    CHECK(e.loss.l_neg.size() == 1);
    double total = e.loss.l_cbp;
    for (double v : e.loss.l_pbr) total += v;
    CHECK(e.loss.l_p2b == doctest::Approx(total).epsilon(1e-12));
    CHECK(e.loss.beta[0] > 0.0);
    CHECK(e.loss.beta[0] < 1.0);
    REQUIRE(e.loss.object_weight.size() == 1);
    CHECK(e.loss.object_weight[0].size() == f.data.dataset.objects.size());
    for (double w : e.loss.object_weight[0]) {
      CHECK(w > 0.0);
      CHECK(w < 1.0);
    }
  }
  CHECK(r.epochs[0].lr == doctest::Approx(f.lcfg.lr));
  CHECK(r.final_stage_miou.size() == 2);
  CHECK(r.stage_pseudo.size() == 2);
  CHECK(r.stage_pseudo[0].size() == f.data.dataset.objects.size());
  CHECK(log.str().find("epoch 0") != std::string::npos);
  CHECK(log.str().find("epoch 2") != std::string::npos);
}

TEST_CASE("the total loss goes down over a few epochs") {
  const Fixture f = make_fixture(4);
  const TrainResult r = train_p2bnet(f.data.dataset, f.data.grids, f.scfg,
                                     f.lcfg, f.mcfg, 42);
  CHECK(r.epochs.front().loss.l_p2b > r.epochs.back().loss.l_p2b);
}

TEST_CASE("zero refinement iterations trains the coarse head alone") {
  const Fixture f = make_fixture(2, 0);
  const TrainResult r = train_p2bnet(f.data.dataset, f.data.grids, f.scfg,
                                     f.lcfg, f.mcfg, 42);
  CHECK(r.params.heads() == 1);
  CHECK(r.stage_pseudo.size() == 1);
  CHECK(r.final_stage_miou.size() == 1);
  for (const EpochStats& e : r.epochs) {
    CHECK(e.loss.l_pbr.empty());
    CHECK(e.loss.l_p2b == e.loss.l_cbp);
  }
}

TEST_CASE("dropping the negative term leaves only the weighted focal part") {
  Fixture f = make_fixture(2);
  f.lcfg.alpha_neg = 0.0;
  const TrainResult r = train_p2bnet(f.data.dataset, f.data.grids, f.scfg,
                                     f.lcfg, f.mcfg, 42);
  for (const EpochStats& e : r.epochs) {
    CHECK(e.loss.l_pbr[0] ==
          doctest::Approx(f.lcfg.alpha_mil2 * e.loss.l_mil2[0])
              .epsilon(1e-12));
  }
}

TEST_CASE("an explicit initial model is honored and shape-checked") {
  const Fixture f = make_fixture(2);
  const int dim = feature_dim(f.lcfg.pooled, f.data.grids.front().dpix);
  const ModelParams zero(dim, f.lcfg.hidden_dim,
                         f.data.dataset.num_categories(), 2);
  const TrainResult a = train_p2bnet(f.data.dataset, f.data.grids, f.scfg,
                                     f.lcfg, f.mcfg, 42, &zero);
  const TrainResult b = train_p2bnet(f.data.dataset, f.data.grids, f.scfg,
                                     f.lcfg, f.mcfg, 42, &zero);
  CHECK(same_bits(a.params.values, b.params.values));

  const ModelParams wrong_heads(dim, f.lcfg.hidden_dim,
                                f.data.dataset.num_categories(), 3);
  CHECK_THROWS_AS(train_p2bnet(f.data.dataset, f.data.grids, f.scfg, f.lcfg,
                               f.mcfg, 42, &wrong_heads),
                  ValidationError);
  const ModelParams wrong_dim(dim + 1, f.lcfg.hidden_dim,
                              f.data.dataset.num_categories(), 2);
  CHECK_THROWS_AS(train_p2bnet(f.data.dataset, f.data.grids, f.scfg, f.lcfg,
                               f.mcfg, 42, &wrong_dim),
                  ValidationError);
}

TEST_CASE("a non-finite model value is reported as divergence") {
  const Fixture f = make_fixture(1);
  const int dim = feature_dim(f.lcfg.pooled, f.data.grids.front().dpix);
  ModelParams bad(dim, f.lcfg.hidden_dim, f.data.dataset.num_categories(), 2);
  bad.values[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(train_p2bnet(f.data.dataset, f.data.grids, f.scfg, f.lcfg,
                               f.mcfg, 42, &bad),
                  DivergenceError);
}

TEST_CASE("training rejects inconsistent inputs") {
  Fixture f = make_fixture(1);

  SUBCASE("object without a point annotation") {
    f.data.dataset.objects.front().point.reset();
    CHECK_THROWS_AS(train_p2bnet(f.data.dataset, f.data.grids, f.scfg,
                                 f.lcfg, f.mcfg, 42),
                    ValidationError);
  }
  SUBCASE("scene grid count disagrees with the image list") {
    f.data.grids.pop_back();
    CHECK_THROWS_AS(train_p2bnet(f.data.dataset, f.data.grids, f.scfg,
                                 f.lcfg, f.mcfg, 42),
                    ValidationError);
  }
  SUBCASE("scene grid shape disagrees with its image") {
    f.data.grids.front().shape.width += 8;
    CHECK_THROWS_AS(train_p2bnet(f.data.dataset, f.data.grids, f.scfg,
                                 f.lcfg, f.mcfg, 42),
                    ValidationError);
  }
  SUBCASE("no objects at all") {
    f.data.dataset.objects.clear();
    CHECK_THROWS_AS(train_p2bnet(f.data.dataset, f.data.grids, f.scfg,
                                 f.lcfg, f.mcfg, 42),
                    ValidationError);
  }
}
