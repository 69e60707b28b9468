#include "canopyseg/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "canopyseg/eval.hpp"
#include "canopyseg/filters.hpp"
#include "canopyseg/raster_io.hpp"

namespace canopyseg {

namespace fs = std::filesystem;
using nlohmann::json;

SceneSpec scene_spec_from(const Config& cfg) {
  SceneSpec spec;
  spec.seed = cfg.get_u64("scene", "seed", spec.seed);
  spec.extent_m = cfg.get_double("scene", "extent_m", spec.extent_m);
  spec.stand_scale_m = cfg.get_double("scene", "stand_scale_m", spec.stand_scale_m);
  spec.density_per_ha = cfg.get_double("scene", "density_per_ha", spec.density_per_ha);
  const auto mix = cfg.get_list("scene", "species_mix",
                                {spec.species_mix[0], spec.species_mix[1], spec.species_mix[2], spec.species_mix[3]});
  if (mix.size() != 4) fail(Errc::invalid_argument, "config [scene] species_mix: expected 4 values");
  for (int i = 0; i < 4; ++i) spec.species_mix[static_cast<std::size_t>(i)] = mix[static_cast<std::size_t>(i)];
  spec.clearcut_fraction = cfg.get_double("scene", "clearcut_fraction", spec.clearcut_fraction);
  const char* keys[4] = {nullptr, "height_birch", "height_pine", "height_spruce"};
  for (int s = 1; s <= 3; ++s) {
    auto& hr = spec.height_ranges[static_cast<std::size_t>(s)];
    const auto r = cfg.get_list("scene", keys[s], {hr.first, hr.second});
    if (r.size() != 2) fail(Errc::invalid_argument, std::string("config [scene] ") + keys[s] + ": expected lo,hi");
    hr = {r[0], r[1]};
  }
  return spec;
}

PrepConfig prep_config_from(const Config& cfg) {
  PrepConfig p;
  p.chm_median_window_px = static_cast<int>(cfg.get_int("prep", "chm_median_window_px", p.chm_median_window_px));
  p.chm_background_threshold_m = cfg.get_double("prep", "chm_background_threshold_m", p.chm_background_threshold_m);
  p.border_neighborhood = static_cast<int>(cfg.get_int("prep", "border_neighborhood", p.border_neighborhood));
  p.relabel_min_area_m2 = cfg.get_double("prep", "relabel_min_area_m2", p.relabel_min_area_m2);
  p.validate();
  return p;
}

NetConfig net_config_from(const Config& cfg) {
  NetConfig n;
  n.in_channels = static_cast<int>(cfg.get_int("net", "in_channels", n.in_channels));
  n.out_channels = static_cast<int>(cfg.get_int("net", "out_channels", n.out_channels));
  n.depth = static_cast<int>(cfg.get_int("net", "depth", n.depth));
  n.base_filters = static_cast<int>(cfg.get_int("net", "base_filters", n.base_filters));
  n.norm_epsilon = static_cast<float>(cfg.get_double("net", "norm_epsilon", n.norm_epsilon));
  const std::string norm = cfg.get("net", "normalization", "instance");
  if (norm == "instance") n.normalization = Normalization::instance;
  else if (norm == "none") n.normalization = Normalization::none;
  else fail(Errc::invalid_argument, "config [net] normalization: expected instance or none");
  n.validate();
  return n;
}

TrainConfig train_config_from(const Config& cfg) {
  TrainConfig t;
  t.tile_px = static_cast<int>(cfg.get_int("train", "tile_px", t.tile_px));
  t.batch = static_cast<int>(cfg.get_int("train", "batch", t.batch));
  t.epochs = static_cast<int>(cfg.get_int("train", "epochs", t.epochs));
  t.seed = cfg.get_u64("train", "seed", cfg.get_u64("scene", "seed", t.seed));
  t.lr = cfg.get_double("train", "lr", t.lr);
  t.steps_per_epoch = static_cast<int>(cfg.get_int("train", "steps_per_epoch", t.steps_per_epoch));
  t.running_stats_momentum = cfg.get_double("train", "running_stats_momentum", t.running_stats_momentum);
  t.auto_class_weights = cfg.get_bool("train", "auto_class_weights", t.auto_class_weights);
  // val_region = col0,row0,w,h (pixel coordinates); repeatable as
  // val_region, val_region2, val_region3, ...
  for (int i = 0; i < 16; ++i) {
    const std::string key = i == 0 ? "val_region" : "val_region" + std::to_string(i + 1);
    if (!cfg.has("train", key)) continue;
    const auto r = cfg.get_list("train", key, {});
    if (r.size() != 4) fail(Errc::invalid_argument, "config [train] " + key + ": expected col0,row0,w,h");
    t.val_regions.push_back(Region{static_cast<int>(r[0]), static_cast<int>(r[1]),
                                   static_cast<int>(r[2]), static_cast<int>(r[3])});
  }
  return t;
}

FocalConfig focal_config_from(const Config& cfg) {
  FocalConfig f;
  f.gamma = cfg.get_double("train", "gamma", f.gamma);
  f.cutoff_p = cfg.get_double("train", "cutoff_p", f.cutoff_p);
  const auto w = cfg.get_list("train", "class_weights", {});
  if (!w.empty()) {
    if (w.size() != 4) fail(Errc::invalid_argument, "config [train] class_weights: expected 4 values");
    for (int i = 0; i < 4; ++i) f.class_weights[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i)];
  }
  f.validate();
  return f;
}

CowMixConfig cowmix_config_from(const Config& cfg) {
  CowMixConfig c;
  c.sigma_min_px = cfg.get_double("train", "cow_sigma_min_px", c.sigma_min_px);
  c.sigma_max_px = cfg.get_double("train", "cow_sigma_max_px", c.sigma_max_px);
  c.keep_fraction_min = cfg.get_double("train", "cow_keep_fraction_min", c.keep_fraction_min);
  c.keep_fraction_max = cfg.get_double("train", "cow_keep_fraction_max", c.keep_fraction_max);
  c.apply_probability = cfg.get_double("train", "cow_apply_probability", c.apply_probability);
  c.validate();
  return c;
}

InferConfig infer_config_from(const Config& cfg) {
  InferConfig i;
  i.tile_px = static_cast<int>(cfg.get_int("infer", "tile_px", i.tile_px));
  i.crop_px = static_cast<int>(cfg.get_int("infer", "crop_px", i.crop_px));
  i.blur_sigma_px = cfg.get_double("infer", "blur_sigma_px", i.blur_sigma_px);
  const std::string mode = cfg.get("infer", "stats_mode", "per_sample");
  if (mode == "per_sample") i.stats_mode = StatsMode::per_sample;
  else if (mode == "running") i.stats_mode = StatsMode::running;
  else fail(Errc::invalid_argument, "config [infer] stats_mode: expected per_sample or running");
  i.validate();
  return i;
}

// ---------------------------------------------------------------------------
// Stages

void stage_synth(const Config& cfg, std::optional<std::uint64_t> seed_override, const std::string& dtm_path,
                 const std::string& dsm_path, const std::string& truth_path, const std::string& weak_path,
                 const std::string& plots_path) {
  SceneSpec spec = scene_spec_from(cfg);
  if (seed_override) spec.seed = *seed_override;
  SynthScene scene = gen_scene(spec);
  const int n_plots = static_cast<int>(cfg.get_int("scene", "n_plots", 200));
  const double plot_area = cfg.get_double("scene", "plot_area_m2", 250.0);
  scene.plots = sample_plots(scene, n_plots, plot_area);
  save_raster(scene.dtm, dtm_path);
  save_raster(scene.dsm, dsm_path);
  save_raster(scene.truth, truth_path);
  save_raster(scene.weak16, weak_path);
  save_plots_csv(scene.plots, plots_path);
}

void stage_chm(const std::string& dsm_path, const std::string& dtm_path, const std::string& out_path) {
  const FloatGrid dsm = load_float_raster(dsm_path);
  const FloatGrid dtm = load_float_raster(dtm_path);
  save_raster(compute_chm(dsm, dtm), out_path);
}

void stage_prep(const Config& cfg, const std::string& weak_path, const std::string& chm_path,
                const std::string& mask_path, const std::string& out_path) {
  const LabelGrid weak16 = load_label_raster(weak_path);
  const FloatGrid chm = load_float_raster(chm_path);
  LabelGrid prepped = prep_labels(weak16, chm, prep_config_from(cfg));
  if (!mask_path.empty()) prepped = apply_land_mask(prepped, load_label_raster(mask_path));
  save_raster(prepped, out_path);
}

void stage_train(const Config& cfg, std::optional<std::uint64_t> seed_override, const std::string& dtm_path,
                 const std::string& chm_path, const std::string& labels_path, const std::string& ckpt_path,
                 const std::string& metrics_path) {
  const FloatGrid dtm = load_float_raster(dtm_path);
  const FloatGrid chm = load_float_raster(chm_path);
  const LabelGrid labels = load_label_raster(labels_path);
  TrainConfig tcfg = train_config_from(cfg);
  if (seed_override) tcfg.seed = *seed_override;
  const TrainData data{&dtm, &chm, &labels};
  const TrainResult result =
      train_epochs(data, tcfg, net_config_from(cfg), focal_config_from(cfg), cowmix_config_from(cfg));
  save_checkpoint(result.params, result.feat, ckpt_path);
  save_metrics_csv(result.metrics, metrics_path);
}

void stage_relabel(const Config& cfg, const std::string& labels_path, const std::string& pred_path,
                   const std::string& out_path) {
  const LabelGrid labels = load_label_raster(labels_path);
  const LabelGrid pred = load_label_raster(pred_path);
  save_raster(relabel_round2(labels, pred, prep_config_from(cfg)), out_path);
}

void stage_predict(const Config& cfg, const std::string& dtm_path, const std::string& chm_path,
                   const std::string& ckpt_path, const std::string& species_path,
                   bool write_logits, const std::string& preview_path) {
  const FloatGrid dtm = load_float_raster(dtm_path);
  const FloatGrid chm = load_float_raster(chm_path);
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const PredictResult res = predict_map(dtm, chm, ck.params, ck.cfg, infer_config_from(cfg), ck.feat);
  save_raster(res.species, species_path);
  if (write_logits) {
    const fs::path base(species_path);
    for (std::size_t c = 0; c < res.logits.size(); ++c) {
      fs::path p = base.parent_path() / ("logits_" + std::to_string(c) + ".csr");
      save_raster(res.logits[c], p.string());
    }
  }
  if (!preview_path.empty()) save_species_ppm(res.species, preview_path);
}

void stage_eval(const std::string& species_path, const std::string& plots_path,
                const std::string& report_txt, const std::string& report_csv) {
  const LabelGrid species = load_label_raster(species_path);
  const auto plots = load_plots_csv(plots_path);
  const ConfusionMatrix cm = evaluate_plots(species, plots);
  emit_report(cm, report_txt, report_csv);
}

// ---------------------------------------------------------------------------
// Pipeline with manifest

namespace {

std::string hash_hex(std::uint64_t h) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

struct StageRunner {
  fs::path out_dir;
  json manifest;
  json previous;
  bool resume = false;
  std::ostream* log = nullptr;

  std::string rel(const std::string& name) const { return (out_dir / name).string(); }

  // Runs `fn` unless a previous manifest lists this stage with all outputs
  // intact. An output that exists with the wrong hash is a hard error.
  void stage(const std::string& name, const std::vector<std::string>& outputs, const std::function<void()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    bool skipped = false;
    if (resume && previous.contains("stages")) {
      for (const auto& st : previous["stages"]) {
        if (st["name"] != name) continue;
        bool all_ok = !outputs.empty();
        for (const auto& rec : st["outputs"]) {
          const std::string path = rec["path"].get<std::string>();
          if (!file_exists(rel(path))) { all_ok = false; continue; }
          if (hash_hex(hash_file(rel(path))) != rec["hash"].get<std::string>())
            fail(Errc::manifest_mismatch,
                 "resume: " + path + " exists but does not match the manifest hash");
        }
        if (all_ok && st["outputs"].size() == outputs.size()) skipped = true;
      }
    }
    if (!skipped) fn();
    json st;
    st["name"] = name;
    st["outputs"] = json::array();
    for (const auto& o : outputs) {
      if (!file_exists(rel(o))) fail(Errc::io_failure, "stage " + name + " did not produce " + o);
      st["outputs"].push_back({{"path", o}, {"hash", hash_hex(hash_file(rel(o)))}});
    }
    manifest["stages"].push_back(st);
    const auto dt = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - t0);
    if (log)
      (*log) << "[" << name << "] " << (skipped ? "skipped (up to date)" : "done") << " in "
             << dt.count() << " ms\n";
  }
};

}  // namespace

void run_pipeline(const Config& cfg_in, const PipelineOptions& opts, std::ostream& log) {
  if (opts.rounds != 1 && opts.rounds != 2)
    fail(Errc::invalid_argument, "pipeline: rounds must be 1 or 2");
  Config cfg = cfg_in;
  if (opts.seed) cfg.set("scene", "seed", std::to_string(*opts.seed));
  if (opts.deterministic) {
    setenv("CANOPYSEG_THREADS", "1", 1);
  }

  fs::create_directories(opts.out_dir);
  StageRunner runner;
  runner.out_dir = opts.out_dir;
  runner.resume = opts.resume;
  runner.log = &log;
  runner.manifest["version"] = 1;
  runner.manifest["seed"] = cfg.get_u64("scene", "seed", 1);
  runner.manifest["deterministic"] = opts.deterministic;
  runner.manifest["rounds"] = opts.rounds;
  runner.manifest["config"] = json::object();
  for (const auto& [sec, kv] : cfg.sections()) {
    json s = json::object();
    for (const auto& [k, v] : kv) s[k] = v;
    runner.manifest["config"][sec.empty() ? "(global)" : sec] = s;
  }
  runner.manifest["stages"] = json::array();

  const std::string manifest_path = (fs::path(opts.out_dir) / "manifest.json").string();
  if (opts.resume && file_exists(manifest_path)) {
    std::ifstream in(manifest_path);
    in >> runner.previous;
  }

  runner.stage("synth", {"dtm.csr", "dsm.csr", "truth.csr", "weak16.csr", "plots.csv"}, [&] {
    stage_synth(cfg, std::nullopt, runner.rel("dtm.csr"), runner.rel("dsm.csr"), runner.rel("truth.csr"),
                runner.rel("weak16.csr"), runner.rel("plots.csv"));
  });
  runner.stage("chm", {"chm.csr"}, [&] {
    stage_chm(runner.rel("dsm.csr"), runner.rel("dtm.csr"), runner.rel("chm.csr"));
  });
  runner.stage("prep", {"labels_prep.csr"}, [&] {
    stage_prep(cfg, runner.rel("weak16.csr"), runner.rel("chm.csr"), "", runner.rel("labels_prep.csr"));
  });
  runner.stage("train_round1", {"checkpoint_round1.csnp", "metrics_round1.csv"}, [&] {
    stage_train(cfg, std::nullopt, runner.rel("dtm.csr"), runner.rel("chm.csr"), runner.rel("labels_prep.csr"),
                runner.rel("checkpoint_round1.csnp"), runner.rel("metrics_round1.csv"));
  });

  const bool two_rounds = opts.rounds == 2;
  const std::string final_ckpt = two_rounds ? "checkpoint_round2.csnp" : "checkpoint_round1.csnp";
  if (two_rounds) {
    runner.stage("predict_round1", {"species_round1.csr"}, [&] {
      stage_predict(cfg, runner.rel("dtm.csr"), runner.rel("chm.csr"), runner.rel("checkpoint_round1.csnp"),
                    runner.rel("species_round1.csr"), false, "");
    });
    runner.stage("eval_round1", {"report_round1.txt", "report_round1.csv"}, [&] {
      stage_eval(runner.rel("species_round1.csr"), runner.rel("plots.csv"), runner.rel("report_round1.txt"),
                 runner.rel("report_round1.csv"));
    });
    runner.stage("relabel", {"labels_round2.csr"}, [&] {
      stage_relabel(cfg, runner.rel("labels_prep.csr"), runner.rel("species_round1.csr"),
                    runner.rel("labels_round2.csr"));
    });
    runner.stage("train_round2", {"checkpoint_round2.csnp", "metrics_round2.csv"}, [&] {
      stage_train(cfg, std::nullopt, runner.rel("dtm.csr"), runner.rel("chm.csr"), runner.rel("labels_round2.csr"),
                  runner.rel("checkpoint_round2.csnp"), runner.rel("metrics_round2.csv"));
    });
  }
  runner.stage("predict", {"species.csr"}, [&] {
    stage_predict(cfg, runner.rel("dtm.csr"), runner.rel("chm.csr"), runner.rel(final_ckpt),
                  runner.rel("species.csr"), false, "");
  });
  runner.stage("eval", {"report.txt", "report.csv"}, [&] {
    stage_eval(runner.rel("species.csr"), runner.rel("plots.csv"), runner.rel("report.txt"),
               runner.rel("report.csv"));
  });

  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) fail(Errc::io_failure, "cannot write " + manifest_path);
  out << runner.manifest.dump(2) << '\n';
}

}  // namespace canopyseg
