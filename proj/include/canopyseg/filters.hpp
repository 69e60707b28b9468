#pragma once

#include <vector>

#include "canopyseg/grid.hpp"

namespace canopyseg {

// CHM = DSM - DTM, negatives clamped to 0. nodata in either input propagates.
// Both grids must share an identical GeoRef.
FloatGrid compute_chm(const FloatGrid& dsm, const FloatGrid& dtm);

// Separable Gaussian, kernel radius ceil(3*sigma), weights normalized to sum 1,
// reflection border handling (edge not repeated).
FloatGrid gaussian_blur(const FloatGrid& g, double sigma);

// Normalized 1-D kernel used by gaussian_blur; exposed for the augmentation
// mask generator and for tests.
std::vector<float> gaussian_kernel(double sigma);

// Exact order statistic: element floor(n/2) of the sorted window x window
// neighborhood, reflection border handling. window must be odd and >= 1.
FloatGrid median_filter(const FloatGrid& g, int window);

// Reflection index (edge not repeated); folds any i onto [0, n).
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

}  // namespace canopyseg
