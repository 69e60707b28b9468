#pragma once

#include <vector>

#include "canopyseg/augment.hpp"
#include "canopyseg/checkpoint.hpp"
#include "canopyseg/grid.hpp"
#include "canopyseg/loss.hpp"
#include "canopyseg/net.hpp"

namespace canopyseg {

struct Region {
  int col0 = 0, row0 = 0, w = 0, h = 0;

  bool contains_tile(int c0, int r0, int tile) const {
    return c0 >= col0 && r0 >= row0 && c0 + tile <= col0 + w && r0 + tile <= row0 + h;
  }
  bool intersects_tile(int c0, int r0, int tile) const {
    return c0 < col0 + w && c0 + tile > col0 && r0 < row0 + h && r0 + tile > row0;
  }
};

struct TrainConfig {
  int tile_px = 128;
  int batch = 4;
  int epochs = 10;
  std::uint64_t seed = 1;
  double lr = 1e-3;
  int steps_per_epoch = 0;  // 0 = cover the train area once per epoch
  std::vector<Region> val_regions;
  double running_stats_momentum = 0.1;
  bool auto_class_weights = true;
};

struct TrainData {
  const FloatGrid* dtm = nullptr;
  const FloatGrid* chm = nullptr;
  const LabelGrid* labels = nullptr;  // 1 m prepared labels, may hold 255
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  NetParams<float> params;
  FeatureNorm feat;
  std::vector<EpochMetrics> metrics;
  std::array<double, 4> class_weights_used{1, 1, 1, 1};
};

// Normalized 2-channel feature tile (DTM standardized with the map statistics
// in `feat`, CHM divided by feat.chm_scale), gathered from the given window.
template <class T>
Tensor4<T> feature_tile(const FloatGrid& dtm, const FloatGrid& chm, const FeatureNorm& feat, int col0,
                        int row0, int w, int h);

// Map-wide DTM statistics for FeatureNorm.
FeatureNorm compute_feature_norm(const FloatGrid& dtm, float chm_scale = 30.0f);

// Single-sequence training loop: per epoch, sample tiles from the train area
// (everything outside the validation regions), apply dihedral augmentation
// always and CowBatchMix with its configured probability, then
// forward / focal loss / backward / Adam. Deterministic under a fixed seed.
TrainResult train_epochs(const TrainData& data, const TrainConfig& tcfg, const NetConfig& ncfg,
                         FocalConfig fcfg, const CowMixConfig& ccfg);

void save_metrics_csv(const std::vector<EpochMetrics>& metrics, const std::string& path);

}  // namespace canopyseg
