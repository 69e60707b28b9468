// canopyseg: synthetic-forest tree species segmentation pipeline.
//
// Subcommands: synth | chm | prep | train | relabel | predict | eval | pipeline
// Exit codes: 0 success, 1 stage failure, 2 usage error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "canopyseg/pipeline.hpp"

namespace {

using canopyseg::Config;

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
};

Config load_config(const CommonArgs& args) {
  Config cfg = args.config_path.empty() ? Config{} : Config::load(args.config_path);
  if (args.seed) cfg.set("scene", "seed", std::to_string(*args.seed));
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key=value config file with [section] headers");
  cmd->add_option("--out-dir", args.out_dir, "artifact directory")->capture_default_str();
  cmd->add_option("--seed", args.seed, "override the scene/train seed");
  cmd->add_flag("--deterministic", args.deterministic, "single-threaded execution");
}

std::string joined(const std::string& dir, const std::string& name) {
  return dir.empty() ? name : dir + "/" + name;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lidar-style tree species segmentation on synthetic forest scenes"};
  app.require_subcommand(1);

  CommonArgs common;

  auto* synth = app.add_subcommand("synth", "generate a synthetic scene (dtm/dsm/truth/weak16/plots)");
  add_common(synth, common);

  auto* chm = app.add_subcommand("chm", "canopy height model = DSM - DTM");
  add_common(chm, common);
  std::string chm_dsm, chm_dtm, chm_out;
  chm->add_option("--dsm", chm_dsm, "surface model raster");
  chm->add_option("--dtm", chm_dtm, "terrain model raster");
  chm->add_option("--out", chm_out, "output CHM raster");

  auto* prep = app.add_subcommand("prep", "refine 16 m weak labels into 1 m training labels");
  add_common(prep, common);
  std::string prep_weak, prep_chm, prep_mask, prep_out;
  prep->add_option("--weak16", prep_weak, "16 m weak label raster");
  prep->add_option("--chm", prep_chm, "1 m CHM raster");
  prep->add_option("--mask", prep_mask, "optional 0/1 land mask raster");
  prep->add_option("--out", prep_out, "output 1 m label raster");

  auto* train = app.add_subcommand("train", "train the segmentation network");
  add_common(train, common);
  std::string train_dtm, train_chm, train_labels, train_ckpt, train_metrics;
  train->add_option("--dtm", train_dtm, "terrain raster");
  train->add_option("--chm", train_chm, "canopy height raster");
  train->add_option("--labels", train_labels, "1 m training labels");
  train->add_option("--checkpoint", train_ckpt, "output checkpoint path");
  train->add_option("--metrics", train_metrics, "output metrics CSV");

  auto* relabel = app.add_subcommand("relabel", "second-round label noise removal");
  add_common(relabel, common);
  std::string rel_labels, rel_pred, rel_out;
  relabel->add_option("--labels", rel_labels, "1 m labels from prep");
  relabel->add_option("--pred", rel_pred, "predicted species map");
  relabel->add_option("--out", rel_out, "output relabeled raster");

  auto* predict = app.add_subcommand("predict", "tiled full-map prediction");
  add_common(predict, common);
  std::string pred_dtm, pred_chm, pred_ckpt, pred_out, pred_preview;
  bool pred_logits = false;
  predict->add_option("--dtm", pred_dtm, "terrain raster");
  predict->add_option("--chm", pred_chm, "canopy height raster");
  predict->add_option("--checkpoint", pred_ckpt, "trained checkpoint");
  predict->add_option("--out", pred_out, "output species raster");
  predict->add_flag("--logits", pred_logits, "also write logits_{c}.csr");
  predict->add_option("--preview", pred_preview, "optional PPM preview path");

  auto* eval = app.add_subcommand("eval", "plot-based evaluation of a species map");
  add_common(eval, common);
  std::string eval_species, eval_plots, eval_txt, eval_csv;
  eval->add_option("--species", eval_species, "species raster");
  eval->add_option("--plots", eval_plots, "plots CSV (id,x,y,area_m2,ref_class)");
  eval->add_option("--report-txt", eval_txt, "text report path");
  eval->add_option("--report-csv", eval_csv, "CSV report path");

  auto* pipeline = app.add_subcommand("pipeline", "run every stage end to end with a manifest");
  add_common(pipeline, common);
  bool resume = false;
  int rounds = 2;
  pipeline->add_flag("--resume", resume, "skip stages whose manifest outputs are intact");
  pipeline->add_option("--rounds", rounds, "training rounds (1 or 2)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string stage_name = app.get_subcommands().front()->get_name();
  try {
    if (common.deterministic) setenv("CANOPYSEG_THREADS", "1", 1);
    const Config cfg = load_config(common);
    const std::string& dir = common.out_dir;
    if (synth->parsed()) {
      std::filesystem::create_directories(dir);
      canopyseg::stage_synth(cfg, common.seed, joined(dir, "dtm.csr"), joined(dir, "dsm.csr"),
                             joined(dir, "truth.csr"), joined(dir, "weak16.csr"), joined(dir, "plots.csv"));
    } else if (chm->parsed()) {
      canopyseg::stage_chm(chm_dsm.empty() ? joined(dir, "dsm.csr") : chm_dsm,
                           chm_dtm.empty() ? joined(dir, "dtm.csr") : chm_dtm,
                           chm_out.empty() ? joined(dir, "chm.csr") : chm_out);
    } else if (prep->parsed()) {
      canopyseg::stage_prep(cfg, prep_weak.empty() ? joined(dir, "weak16.csr") : prep_weak,
                            prep_chm.empty() ? joined(dir, "chm.csr") : prep_chm, prep_mask,
                            prep_out.empty() ? joined(dir, "labels_prep.csr") : prep_out);
    } else if (train->parsed()) {
      canopyseg::stage_train(cfg, common.seed, train_dtm.empty() ? joined(dir, "dtm.csr") : train_dtm,
                             train_chm.empty() ? joined(dir, "chm.csr") : train_chm,
                             train_labels.empty() ? joined(dir, "labels_prep.csr") : train_labels,
                             train_ckpt.empty() ? joined(dir, "checkpoint_round1.csnp") : train_ckpt,
                             train_metrics.empty() ? joined(dir, "metrics_round1.csv") : train_metrics);
    } else if (relabel->parsed()) {
      canopyseg::stage_relabel(cfg, rel_labels.empty() ? joined(dir, "labels_prep.csr") : rel_labels,
                               rel_pred.empty() ? joined(dir, "species_round1.csr") : rel_pred,
                               rel_out.empty() ? joined(dir, "labels_round2.csr") : rel_out);
    } else if (predict->parsed()) {
      canopyseg::stage_predict(cfg, pred_dtm.empty() ? joined(dir, "dtm.csr") : pred_dtm,
                               pred_chm.empty() ? joined(dir, "chm.csr") : pred_chm,
                               pred_ckpt.empty() ? joined(dir, "checkpoint_round1.csnp") : pred_ckpt,
                               pred_out.empty() ? joined(dir, "species.csr") : pred_out, pred_logits,
                               pred_preview);
    } else if (eval->parsed()) {
      canopyseg::stage_eval(eval_species.empty() ? joined(dir, "species.csr") : eval_species,
                            eval_plots.empty() ? joined(dir, "plots.csv") : eval_plots,
                            eval_txt.empty() ? joined(dir, "report.txt") : eval_txt,
                            eval_csv.empty() ? joined(dir, "report.csv") : eval_csv);
    } else if (pipeline->parsed()) {
      canopyseg::PipelineOptions opts;
      opts.out_dir = dir;
      opts.seed = common.seed;
      opts.resume = resume;
      opts.deterministic = common.deterministic;
      opts.rounds = rounds;
      canopyseg::run_pipeline(cfg, opts, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: stage " << stage_name << " failed: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
