#pragma once

#include <array>

#include "canopyseg/grid.hpp"
#include "canopyseg/tensor.hpp"

namespace canopyseg {

struct FocalConfig {
  double gamma = 3.0;
  double cutoff_p = 0.1;
  std::array<double, 4> class_weights{1.0, 1.0, 1.0, 1.0};

  void validate() const {
    if (gamma < 0.0) fail(Errc::invalid_argument, "FocalConfig: gamma must be >= 0");
    if (cutoff_p < 0.0 || cutoff_p >= 1.0) fail(Errc::invalid_argument, "FocalConfig: cutoff_p must lie in [0, 1)");
    bool any = false;
    for (double w : class_weights) {
      if (w < 0.0) fail(Errc::invalid_argument, "FocalConfig: class weights must be >= 0");
      if (w > 0.0) any = true;
    }
    if (!any) fail(Errc::invalid_argument, "FocalConfig: at least one class weight must be positive");
  }
};

// Inverse-frequency class weights over the labeled (non-255) pixels:
// w_c = N_labeled / (4 * N_c). Errors if a class has no pixels.
std::array<double, 4> class_weights(const LabelGrid& labels);

// Batched label tiles; c is always 1.
using LabelBatch = Tensor4<std::uint8_t>;

template <class T>
struct FocalResult {
  double loss = 0.0;
  Tensor4<T> dlogits;
  std::int64_t labeled_pixels = 0;
};

// Focal loss over softmaxed logits with a hard probability cutoff: a labeled
// pixel with true class t contributes w_t * (1 - p_t)^gamma * (-log p_t) when
// p_t > cutoff_p and nothing otherwise; the sum is divided by the labeled
// pixel count (cut-off pixels stay in the denominator). dlogits is the exact
// gradient of that scalar, zero at unlabeled and cut-off pixels.
template <class T>
FocalResult<T> focal_loss(const Tensor4<T>& logits, const LabelBatch& labels, const FocalConfig& cfg);

extern template FocalResult<float> focal_loss<float>(const Tensor4<float>&, const LabelBatch&, const FocalConfig&);
extern template FocalResult<double> focal_loss<double>(const Tensor4<double>&, const LabelBatch&, const FocalConfig&);

}  // namespace canopyseg
