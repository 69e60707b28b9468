#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "canopyseg/loss.hpp"
#include "canopyseg/tensor.hpp"

namespace canopyseg {

struct CowMixConfig {
  double sigma_min_px = 8.0;
  double sigma_max_px = 32.0;
  double keep_fraction_min = 0.3;
  double keep_fraction_max = 0.7;
  double apply_probability = 0.5;

  void validate() const {
    if (sigma_min_px <= 0.0 || sigma_max_px < sigma_min_px)
      fail(Errc::invalid_argument, "CowMixConfig: bad sigma range");
    if (keep_fraction_min <= 0.0 || keep_fraction_max >= 1.0 || keep_fraction_max < keep_fraction_min)
      fail(Errc::invalid_argument, "CowMixConfig: keep fraction range must lie in (0, 1)");
    if (apply_probability < 0.0 || apply_probability > 1.0)
      fail(Errc::invalid_argument, "CowMixConfig: apply_probability must lie in [0, 1]");
  }
};

// One augmentable training sample: feature tensor (1, C, H, W) plus labels.
template <class T>
struct Sample {
  Tensor4<T> features;
  LabelBatch labels;  // (1, 1, H, W)
};

// The 8 dihedral transforms of a square tile, applied identically to features
// and labels as a pure index permutation. k in 0..7 encodes (k % 4) quarter
// turns followed by a horizontal flip when k >= 4.
template <class T>
Sample<T> dihedral_augment(const Sample<T>& s, int k);

// Inverse element of the dihedral encoding above.
int dihedral_inverse(int k);

// Irregular binary mask: white noise smoothed with a Gaussian (sigma drawn
// from the configured range) and thresholded at the empirical f-quantile so
// the ones-fraction lands within 2% of the drawn keep fraction.
std::vector<std::uint8_t> cow_mask(int h, int w, const CowMixConfig& cfg, std::uint64_t seed);

// Pixelwise selection: a where mask = 1, b elsewhere; labels follow the same
// selection (hard labels, 255 included).
template <class T>
Sample<T> cow_batch_mix(const Sample<T>& a, const Sample<T>& b, const std::vector<std::uint8_t>& mask);

extern template Sample<float> dihedral_augment<float>(const Sample<float>&, int);
extern template Sample<double> dihedral_augment<double>(const Sample<double>&, int);
extern template Sample<float> cow_batch_mix<float>(const Sample<float>&, const Sample<float>&,
                                                   const std::vector<std::uint8_t>&);
extern template Sample<double> cow_batch_mix<double>(const Sample<double>&, const Sample<double>&,
                                                     const std::vector<std::uint8_t>&);

}  // namespace canopyseg
