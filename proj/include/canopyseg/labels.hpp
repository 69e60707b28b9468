#pragma once

#include "canopyseg/grid.hpp"

namespace canopyseg {

struct PrepConfig {
  int chm_median_window_px = 11;
  double chm_background_threshold_m = 0.3;
  int border_neighborhood = 8;  // 4 or 8
  double relabel_min_area_m2 = 25600.0;

  void validate() const {
    if (chm_median_window_px < 1 || chm_median_window_px % 2 == 0)
      fail(Errc::invalid_argument, "PrepConfig: median window must be odd and >= 1");
    if (chm_background_threshold_m <= 0.0)
      fail(Errc::invalid_argument, "PrepConfig: background threshold must be > 0");
    if (border_neighborhood != 4 && border_neighborhood != 8)
      fail(Errc::invalid_argument, "PrepConfig: border neighborhood must be 4 or 8");
    if (relabel_min_area_m2 <= 0.0)
      fail(Errc::invalid_argument, "PrepConfig: relabel min area must be > 0");
  }
};

// Weak-label pre-processing, applied in this exact order:
//   1. unlabeled 16 m pixels -> background;
//   2. 16 m pixels on a forest/background border (both sides) -> unlabeled;
//   3. nearest-neighbor upsample to 1 m (16x16 blocks);
//   4. background wherever the median-filtered CHM is below the threshold,
//      overriding every code including unlabeled.
LabelGrid prep_labels(const LabelGrid& weak16, const FloatGrid& chm, const PrepConfig& cfg);

// Pixels with mask 0 become unlabeled (excluded from loss and evaluation).
LabelGrid apply_land_mask(const LabelGrid& labels, const LabelGrid& mask);

// Second-round label-noise removal: 8-connected components of the
// background-vs-forest conflict map with area >= relabel_min_area_m2 are
// unlabeled. Species-vs-species disagreements never qualify.
LabelGrid relabel_round2(const LabelGrid& labels, const LabelGrid& predictions, const PrepConfig& cfg);

}  // namespace canopyseg
