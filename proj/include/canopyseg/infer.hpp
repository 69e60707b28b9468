#pragma once

#include <vector>

#include "canopyseg/checkpoint.hpp"
#include "canopyseg/grid.hpp"
#include "canopyseg/net.hpp"

namespace canopyseg {

struct InferConfig {
  int tile_px = 2048;  // desk configs use 128
  int crop_px = 64;    // desk configs use 32
  double blur_sigma_px = 1.0;
  StatsMode stats_mode = StatsMode::per_sample;

  void validate() const {
    if (tile_px < 1 || crop_px < 0) fail(Errc::invalid_argument, "InferConfig: bad tile/crop");
    if (tile_px - 2 * crop_px <= 0)
      fail(Errc::invalid_argument, "InferConfig: tile_px - 2*crop_px must be positive");
    if (blur_sigma_px < 0.0) fail(Errc::invalid_argument, "InferConfig: blur sigma must be >= 0");
  }
};

struct TileWindow {
  int read_col = 0, read_row = 0, read_w = 0, read_h = 0;
  int write_col = 0, write_row = 0, write_w = 0, write_h = 0;
};

// Read windows of tile_px at stride tile_px - 2*crop_px; write windows are the
// reads shrunk by crop_px per side, except at map boundaries where the outer
// edge is kept. The write windows partition the extent exactly.
std::vector<TileWindow> tile_plan(int extent_w, int extent_h, const InferConfig& cfg);

struct PredictResult {
  LabelGrid species;
  std::vector<FloatGrid> logits;  // one grid per class
};

// Full-map prediction: per tile forward pass, Gaussian blur of each logit
// channel, edge crop, mosaic, then per-pixel argmax (ties to the lowest class
// code). Tiles are independent and run in parallel.
PredictResult predict_map(const FloatGrid& dtm, const FloatGrid& chm, const NetParams<float>& params,
                          const NetConfig& ncfg, const InferConfig& icfg, const FeatureNorm& feat);

// Colormapped preview (P6 PPM): background white, birch green, pine orange,
// spruce dark green, unlabeled black.
void save_species_ppm(const LabelGrid& species, const std::string& path);

}  // namespace canopyseg
