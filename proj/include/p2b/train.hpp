#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <vector>

#include "p2b/annotations.hpp"
#include "p2b/losses.hpp"
#include "p2b/merge.hpp"
#include "p2b/model.hpp"
#include "p2b/sampler.hpp"
#include "p2b/scene.hpp"

namespace p2b {

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  LossReport loss;
  /// Pseudo-box quality per stage, measured at the refresh that opened the
  /// epoch (so epoch 0 reports the untrained model's merges).
  std::vector<double> stage_miou;
};

struct TrainResult {
  ModelParams params;
  /// Final pseudo boxes per stage (0 = coarse, t = t-th refinement), merged
  /// from the trained model: object id -> box.
  std::vector<std::map<int, Box>> stage_pseudo;
  std::vector<double> final_stage_miou;
  std::vector<EpochStats> epochs;
};

/// Worker threads honored by training: the P2B_THREADS environment variable
/// when set to a positive integer, otherwise the hardware concurrency.
/// Results are bit-identical for any thread count: per-image gradients are
/// reduced in image order.
int worker_threads();

/// Joint SGD training of the coarse head plus `cfg.stages` refinement heads.
///
/// Each epoch starts by re-merging every stage's pseudo boxes with the
/// current model and rebuilding the refinement bags around the previous
/// stage's boxes; batches of images then take one SGD step each. Refinement
/// losses weight each object by its previous-stage bag score (held constant)
/// and suppress freshly resampled negatives through the sigmoid stream.
///
/// Deterministic given the seed. `init` optionally overrides the seeded
/// parameter initialization (its dimensions must match the run). Throws
/// DivergenceError when a non-finite loss appears.
TrainResult train_p2bnet(const Dataset& data,
                         const std::vector<SceneGrid>& grids,
                         const SamplerConfig& scfg, const LossConfig& lcfg,
                         const MergeConfig& mcfg, std::uint64_t seed,
                         const ModelParams* init = nullptr,
                         std::ostream* log = nullptr);

/// Runs the merge cascade once with fixed parameters: coarse bags from the
/// point annotations, then params.heads() - 1 refinement rounds. Returns the
/// pseudo boxes per stage (object id -> box). cfg.stages must match the
/// model. No RNG is involved.
std::vector<std::map<int, Box>> predict_pseudo(
    const Dataset& data, const std::vector<SceneGrid>& grids,
    const SamplerConfig& scfg, const LossConfig& lcfg, const MergeConfig& mcfg,
    const ModelParams& params);

}  // namespace p2b
