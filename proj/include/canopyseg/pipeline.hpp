#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "canopyseg/config.hpp"
#include "canopyseg/infer.hpp"
#include "canopyseg/labels.hpp"
#include "canopyseg/loss.hpp"
#include "canopyseg/synth.hpp"
#include "canopyseg/train.hpp"

namespace canopyseg {

// Typed views into the shared configuration file. Section names mirror the
// stages: [scene] [prep] [net] [train] [infer] [eval].
SceneSpec scene_spec_from(const Config& cfg);
PrepConfig prep_config_from(const Config& cfg);
NetConfig net_config_from(const Config& cfg);
TrainConfig train_config_from(const Config& cfg);
FocalConfig focal_config_from(const Config& cfg);
CowMixConfig cowmix_config_from(const Config& cfg);
InferConfig infer_config_from(const Config& cfg);

struct PipelineOptions {
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;  // overrides [scene] seed
  bool resume = false;
  bool deterministic = false;
  int rounds = 2;  // 1 = skip the relabel/retrain round
};

// Runs synth -> chm -> prep -> train -> predict -> eval, with the second
// labeling round in between when rounds = 2. Writes out_dir/manifest.json;
// with `resume`, stages whose recorded outputs are intact are skipped and a
// modified artifact is an error.
void run_pipeline(const Config& cfg, const PipelineOptions& opts, std::ostream& log);

// Individual stages (the CLI subcommands are thin wrappers over these).
void stage_synth(const Config& cfg, std::optional<std::uint64_t> seed_override, const std::string& dtm_path,
                 const std::string& dsm_path, const std::string& truth_path, const std::string& weak_path,
                 const std::string& plots_path);
void stage_chm(const std::string& dsm_path, const std::string& dtm_path, const std::string& out_path);
void stage_prep(const Config& cfg, const std::string& weak_path, const std::string& chm_path,
                const std::string& mask_path, const std::string& out_path);
void stage_train(const Config& cfg, std::optional<std::uint64_t> seed_override, const std::string& dtm_path,
                 const std::string& chm_path, const std::string& labels_path, const std::string& ckpt_path,
                 const std::string& metrics_path);
void stage_relabel(const Config& cfg, const std::string& labels_path, const std::string& pred_path,
                   const std::string& out_path);
void stage_predict(const Config& cfg, const std::string& dtm_path, const std::string& chm_path,
                   const std::string& ckpt_path, const std::string& species_path,
                   bool write_logits, const std::string& preview_path);
void stage_eval(const std::string& species_path, const std::string& plots_path,
                const std::string& report_txt, const std::string& report_csv);

}  // namespace canopyseg
