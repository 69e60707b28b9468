#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "canopyseg/eval_types.hpp"
#include "canopyseg/grid.hpp"

namespace canopyseg {

// Procedural forest scene parameters. The scene is a stand-in for the
// DTM/DSM/forest-map/inventory data stack: everything is derived
// deterministically from `seed`.
struct SceneSpec {
  std::uint64_t seed = 1;
  double extent_m = 512.0;        // side length, multiple of 16
  double stand_scale_m = 120.0;   // typical stand diameter
  double density_per_ha = 550.0;  // trees per hectare inside forest stands
  // Probability that a stand is open ground / birch / pine / spruce.
  std::array<double, 4> species_mix{0.25, 0.25, 0.25, 0.25};
  double clearcut_fraction = 0.0;  // fraction of forest area turned into label-mismatch patches
  // Per-species tree height interval (m), indexed by class code 1..3.
  std::array<std::pair<double, double>, 4> height_ranges{
      std::pair<double, double>{0, 0}, {6.0, 16.0}, {8.0, 21.0}, {10.0, 26.0}};

  void validate() const;
};

struct SynthScene {
  std::uint64_t seed = 0;
  FloatGrid dtm;    // 1 m
  FloatGrid dsm;    // 1 m
  LabelGrid truth;  // 1 m, no 255 codes
  LabelGrid weak16; // 16 m weak labels (may hold 255 outside forest)
  std::vector<PlotRecord> plots;
};

// Per-stand tallies, filled on request so tests can check achieved densities.
struct StandStats {
  std::uint8_t type = 0;  // 0 open, 1..3 dominant species
  std::int64_t area_px = 0;
  std::int64_t trees = 0;
};

// Deterministic scene synthesis: value-noise terrain, nearest-center stands,
// per-stand tree placement, species-shaped crowns rendered into the DSM
// (per-pixel max). Fills dtm/dsm/truth and runs degrade_labels for weak16.
SynthScene gen_scene(const SceneSpec& spec, std::vector<StandStats>* stand_stats = nullptr);

// 16 m weak labels from the 1 m truth: per-cell majority class (ties -> lowest
// code), 255 where a cell holds no forest pixel. Then clearcut injection over
// random forest patches totaling clearcut_fraction of the forest area:
//   mode (a) "stale label": DSM flattened to DTM (truth goes background), the
//            16 m cell keeps its species;
//   mode (b) "missing forest": the 16 m cells go background, crowns stay.
// Mode (a) mutates scene.dsm and scene.truth, which is the point: reality
// changed after the map was made.
LabelGrid degrade_labels(SynthScene& scene, const SceneSpec& spec);

// n non-overlapping circular plots of the given area, centers at least
// radius away from the scene border. Reference class: dominant truth class
// among pixels whose centers fall strictly inside the circle; any species
// presence beats background.
std::vector<PlotRecord> sample_plots(const SynthScene& scene, int n, double area_m2);

// Lattice value noise in [0,1], smoothstep-interpolated; used for the terrain
// and exposed for tests.
double value_noise(std::uint64_t seed, double x, double y, double wavelength);

void save_plots_csv(const std::vector<PlotRecord>& plots, const std::string& path);
std::vector<PlotRecord> load_plots_csv(const std::string& path);

}  // namespace canopyseg
