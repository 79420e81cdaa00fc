#include <array>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "p2b/annotations.hpp"
#include "p2b/error.hpp"
#include "p2b/geometry.hpp"
#include "p2b/merge.hpp"
#include "p2b/metrics.hpp"
#include "p2b/model.hpp"
#include "p2b/rng.hpp"
#include "p2b/sampler.hpp"
#include "p2b/scene.hpp"
#include "p2b/train.hpp"

namespace {

using namespace p2b;

/// Echoes the options a finished subcommand ran with, defaults included, so
/// a run can be reproduced from its outputs alone: the sidecar loads back
/// via `--config <sidecar> <subcommand>`.
void write_config_sidecar(const CLI::App& cmd, const std::string& near_path) {
  const std::string path = near_path + ".config";
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write config sidecar: " + path);
  }
  out << '[' << cmd.get_name() << "]\n" << cmd.config_to_str(true, true);
}

std::ofstream open_out(const std::string& path, const char* what) {
  std::ofstream out(path);
  if (!out) {
    throw IoError(std::string("cannot write ") + what + ": " + path);
  }
  out << std::setprecision(17);
  return out;
}

MergeConfig make_merge(int topk, const std::string& source) {
  MergeConfig mcfg;
  mcfg.k = topk;
  mcfg.source = source == "classification" ? ScoreSource::classification
                                           : ScoreSource::product;
  return mcfg;
}

int cmd_synth(CLI::App& cmd, const SceneConfig& cfg,
              const std::string& out_ann, const std::string& out_scenes) {
  const SyntheticData data = generate_dataset(cfg);
  save_dataset(data.dataset, out_ann);
  save_scene_grids(data.grids, out_scenes);
  write_config_sidecar(cmd, out_ann);
  std::cout << "images " << data.dataset.images.size() << "\nobjects "
            << data.dataset.objects.size() << '\n';
  return 0;
}

int cmd_gen_points(CLI::App& cmd, const std::string& ann,
                   const std::string& out, const RGParams& rg,
                   std::uint64_t seed) {
  Dataset data = load_dataset(ann);
  for (ObjectRecord& obj : data.objects) {
    obj.point = sample_qc_point(
        obj, rg, derive_seed(seed, static_cast<std::uint64_t>(obj.object_id)));
  }
  save_dataset(data, out);
  write_config_sidecar(cmd, out);
  std::cout << "points " << data.objects.size() << '\n';
  return 0;
}

int cmd_stats(CLI::App& cmd, const std::string& ann, const std::string& out,
              const std::string& pseudo_path, int iteration) {
  const Dataset data = load_dataset(ann);
  const SamplerConfig scfg;

  std::map<int, Box> pseudo;
  if (!pseudo_path.empty()) {
    const Dataset pd = load_dataset(pseudo_path);
    for (const ObjectRecord& obj : pd.objects) {
      pseudo.emplace(obj.object_id, obj.gt_box);
    }
  }

  std::ofstream csv = open_out(out, "stats CSV");
  csv << "image_id,object_id,stage,proposal_index,iou\n";
  for (const ObjectRecord& obj : data.objects) {
    const ImageShape shape = data.image_by_id(obj.image_id).shape;
    if (!obj.point.has_value()) {
      throw ValidationError("object id " + std::to_string(obj.object_id) +
                            " has no point annotation");
    }
    const ProposalBag coarse =
        cbp_bag(*obj.point, obj.object_id, shape, scfg);
    for (std::size_t u = 0; u < coarse.proposals.size(); ++u) {
      csv << obj.image_id << ',' << obj.object_id << ','
          << stage_label(0) << ',' << u << ','
          << iou(coarse.proposals[u], obj.gt_box) << '\n';
    }
    if (!pseudo.empty()) {
      const auto it = pseudo.find(obj.object_id);
      if (it == pseudo.end()) {
        throw ValidationError("pseudo-box file lacks object id " +
                              std::to_string(obj.object_id));
      }
      const ProposalBag refined =
          pbr_bag(it->second, obj.object_id, iteration, shape, scfg);
      for (std::size_t u = 0; u < refined.proposals.size(); ++u) {
        csv << obj.image_id << ',' << obj.object_id << ','
            << stage_label(iteration) << ',' << u << ','
            << iou(refined.proposals[u], obj.gt_box) << '\n';
      }
    }
  }
  write_config_sidecar(cmd, out);
  return 0;
}

int cmd_train(CLI::App& cmd, const std::string& ann,
              const std::string& scenes, const LossConfig& lcfg,
              const MergeConfig& mcfg, std::uint64_t seed,
              const std::string& out_checkpoint,
              const std::string& out_pseudo, std::string out_metrics) {
  const Dataset data = load_dataset(ann);
  const std::vector<SceneGrid> grids = load_scene_grids(scenes);
  const SamplerConfig scfg;

  const TrainResult r = train_p2bnet(data, grids, scfg, lcfg, mcfg, seed,
                                     nullptr, &std::cout);

  save_checkpoint(r.params, out_checkpoint);
  save_pseudo_boxes(data, r.stage_pseudo.back(), out_pseudo);

  if (out_metrics.empty()) out_metrics = out_checkpoint + ".metrics.csv";
  std::ofstream csv = open_out(out_metrics, "metrics CSV");
  csv << "epoch,lr,l_cbp";
  for (int t = 1; t <= lcfg.stages; ++t) csv << ",l_" << stage_label(t);
  csv << ",l_p2b";
  for (int t = 0; t <= lcfg.stages; ++t) csv << ",miou_" << stage_label(t);
  csv << '\n';
  for (const EpochStats& e : r.epochs) {
    csv << e.epoch << ',' << e.lr << ',' << e.loss.l_cbp;
    for (double v : e.loss.l_pbr) csv << ',' << v;
    csv << ',' << e.loss.l_p2b;
    for (double v : e.stage_miou) csv << ',' << v;
    csv << '\n';
  }
  write_config_sidecar(cmd, out_checkpoint);

  for (int t = 0; t <= lcfg.stages; ++t) {
    std::cout << "final miou_pred " << stage_label(t) << ' '
              << r.final_stage_miou[static_cast<std::size_t>(t)] << '\n';
  }
  return 0;
}

int cmd_predict(CLI::App& cmd, const std::string& ann,
                const std::string& scenes, const std::string& checkpoint,
                const std::string& out, int topk, const std::string& source) {
  const Dataset data = load_dataset(ann);
  const std::vector<SceneGrid> grids = load_scene_grids(scenes);
  const ModelParams params = load_checkpoint(checkpoint);
  const SamplerConfig scfg;
  LossConfig lcfg;
  lcfg.stages = params.heads() - 1;

  const auto stage_pseudo = predict_pseudo(data, grids, scfg, lcfg,
                                           make_merge(topk, source), params);
  save_pseudo_boxes(data, stage_pseudo.back(), out);
  write_config_sidecar(cmd, out);
  std::cout << "stages " << stage_pseudo.size() << "\nobjects "
            << stage_pseudo.back().size() << '\n';
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path,
             const std::string& hist_path) {
  const Dataset gt = load_dataset(gt_path);
  const Dataset pred = load_dataset(pred_path);
  std::map<int, Box> boxes;
  for (const ObjectRecord& obj : pred.objects) {
    boxes.emplace(obj.object_id, obj.gt_box);
  }

  std::cout << std::setprecision(6);
  std::cout << "objects " << gt.objects.size() << '\n';
  std::cout << "miou_pred " << miou_pred(boxes, gt) << '\n';
  for (const auto& [tau, recall] :
       recall_at(boxes, gt, {0.3, 0.5, 0.7, 0.9})) {
    std::cout << "recall@" << std::setprecision(1) << std::fixed << tau
              << ' ' << std::defaultfloat << std::setprecision(6) << recall
              << '\n';
  }

  if (!hist_path.empty()) {
    std::array<int, kIouBins> bins{};
    for (const ObjectRecord& obj : gt.objects) {
      const auto it = boxes.find(obj.object_id);
      if (it == boxes.end()) {
        throw ValidationError("prediction file lacks object id " +
                              std::to_string(obj.object_id));
      }
      ++bins[static_cast<std::size_t>(iou_bin(iou(it->second, obj.gt_box)))];
    }
    std::ofstream csv = open_out(hist_path, "IoU histogram CSV");
    csv << "bin_low,bin_high,count\n" << std::setprecision(2) << std::fixed;
    for (int b = 0; b < kIouBins; ++b) {
      csv << b / static_cast<double>(kIouBins) << ','
          << (b + 1) / static_cast<double>(kIouBins) << ','
          << bins[static_cast<std::size_t>(b)] << '\n';
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Point-supervised pseudo-box pipeline on synthetic scenes: sample "
      "proposal bags around annotated points, train the two-stream scorer, "
      "and evaluate the merged boxes."};
  app.option_defaults()->always_capture_default(true);
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "Read options from a TOML/INI file before the subcommand; "
                 "keys live in a [subcommand] section");

  // synth
  auto* synth = app.add_subcommand(
      "synth", "Generate a synthetic dataset and its scene-grid sidecar");
  SceneConfig sc;
  std::string synth_ann, synth_scenes;
  synth->add_option("--out-ann", synth_ann, "Annotation output path")
      ->required();
  synth->add_option("--out-scenes", synth_scenes, "Scene-grid output path")
      ->required();
  synth->add_option("--images", sc.num_images, "Number of images");
  synth->add_option("--width", sc.width, "Image width in pixels");
  synth->add_option("--height", sc.height, "Image height in pixels");
  synth->add_option("--categories", sc.num_categories, "Category count");
  synth->add_option("--objects-min", sc.objects_min, "Min objects per image");
  synth->add_option("--objects-max", sc.objects_max, "Max objects per image");
  synth->add_option("--size-min", sc.size_min, "Min box side in pixels");
  synth->add_option("--size-max", sc.size_max, "Max box side in pixels");
  synth->add_option("--max-overlap", sc.max_overlap,
                    "Max pairwise IoU between placed boxes");
  synth->add_option("--noise-std", sc.noise_std, "Per-cell noise level");
  synth->add_option("--seed", sc.seed, "RNG seed")->required();

  // gen-points
  auto* genp = app.add_subcommand(
      "gen-points", "Draw a quasi-center point for every annotated object");
  std::string genp_ann, genp_out;
  RGParams rg;
  std::uint64_t genp_seed = 0;
  genp->add_option("--ann", genp_ann, "Annotation input path")->required();
  genp->add_option("--out", genp_out, "Annotation output path (with points)")
      ->required();
  genp->add_option("--sigma", rg.sigma, "Gaussian std as a box-size fraction");
  genp->add_option("--kappa", rg.kappa,
                   "Center-region ellipse size as a box-size fraction");
  genp->add_option("--axis-cap", rg.axis_cap,
                   "Ellipse axis cap in pixels");
  genp->add_option("--seed", genp_seed, "RNG seed")->required();

  // stats
  auto* stats = app.add_subcommand(
      "stats", "Emit per-proposal IoU rows for coarse (and refinement) bags");
  std::string stats_ann, stats_out, stats_pseudo;
  int stats_iter = 1;
  stats->add_option("--ann", stats_ann,
                    "Annotation input path (points required)")
      ->required();
  stats->add_option("--out", stats_out, "CSV output path")->required();
  stats->add_option("--pseudo", stats_pseudo,
                    "Pseudo-box file; adds refinement-bag rows around it");
  stats->add_option("--iteration", stats_iter,
                    "Refinement iteration label for --pseudo rows")
      ->check(CLI::PositiveNumber);

  // train
  auto* train = app.add_subcommand(
      "train", "Train the scorer and write checkpoint + pseudo boxes");
  std::string train_ann, train_scenes, train_ckpt, train_pseudo;
  std::string train_metrics, train_source = "product";
  LossConfig lcfg;
  int train_topk = 4;
  std::uint64_t train_seed = 0;
  train->add_option("--ann", train_ann,
                    "Annotation input path (points required)")
      ->required();
  train->add_option("--scenes", train_scenes, "Scene-grid input path")
      ->required();
  train->add_option("--stages", lcfg.stages, "Refinement iterations T")
      ->check(CLI::NonNegativeNumber);
  train->add_option("--epochs", lcfg.epochs, "Training epochs")
      ->check(CLI::PositiveNumber);
  train->add_option("--lr", lcfg.lr, "Initial learning rate");
  train->add_option("--batch-images", lcfg.batch_images,
                    "Images per SGD step")
      ->check(CLI::PositiveNumber);
  train->add_option("--hidden-dim", lcfg.hidden_dim, "Trunk width")
      ->check(CLI::PositiveNumber);
  train->add_option("--topk", train_topk, "Proposals merged per box")
      ->check(CLI::PositiveNumber);
  train->add_option("--score-source", train_source,
                    "Merge weights: product or classification stream")
      ->check(CLI::IsMember({"product", "classification"}));
  train->add_option("--seed", train_seed, "RNG seed")->required();
  train->add_option("--out-checkpoint", train_ckpt, "Checkpoint output path")
      ->required();
  train->add_option("--out-pseudo", train_pseudo,
                    "Final-stage pseudo-box output path")
      ->required();
  train->add_option("--out-metrics", train_metrics,
                    "Per-epoch metrics CSV (default: checkpoint path + "
                    ".metrics.csv)");

  // predict
  auto* predict = app.add_subcommand(
      "predict", "Merge pseudo boxes from a trained checkpoint");
  std::string pred_ann, pred_scenes, pred_ckpt, pred_out;
  std::string pred_source = "product";
  int pred_topk = 4;
  predict->add_option("--ann", pred_ann,
                      "Annotation input path (points required)")
      ->required();
  predict->add_option("--scenes", pred_scenes, "Scene-grid input path")
      ->required();
  predict->add_option("--checkpoint", pred_ckpt, "Checkpoint input path")
      ->required();
  predict->add_option("--out", pred_out, "Pseudo-box output path")
      ->required();
  predict->add_option("--topk", pred_topk, "Proposals merged per box")
      ->check(CLI::PositiveNumber);
  predict->add_option("--score-source", pred_source,
                      "Merge weights: product or classification stream")
      ->check(CLI::IsMember({"product", "classification"}));

  // eval
  auto* eval = app.add_subcommand(
      "eval", "Score predicted boxes against ground truth");
  std::string eval_pred, eval_gt, eval_hist;
  eval->add_option("--pred", eval_pred, "Predicted-box annotation path")
      ->required();
  eval->add_option("--gt", eval_gt, "Ground-truth annotation path")
      ->required();
  eval->add_option("--dump-hist", eval_hist,
                   "Write the 50-bin IoU histogram CSV here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      return cmd_synth(*synth, sc, synth_ann, synth_scenes);
    }
    if (genp->parsed()) {
      return cmd_gen_points(*genp, genp_ann, genp_out, rg, genp_seed);
    }
    if (stats->parsed()) {
      return cmd_stats(*stats, stats_ann, stats_out, stats_pseudo,
                       stats_iter);
    }
    if (train->parsed()) {
      return cmd_train(*train, train_ann, train_scenes, lcfg,
                       make_merge(train_topk, train_source), train_seed,
                       train_ckpt, train_pseudo, train_metrics);
    }
    if (predict->parsed()) {
      return cmd_predict(*predict, pred_ann, pred_scenes, pred_ckpt, pred_out,
                         pred_topk, pred_source);
    }
    if (eval->parsed()) {
      return cmd_eval(eval_pred, eval_gt, eval_hist);
    }
  } catch (const p2b::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
