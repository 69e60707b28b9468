#include "canopyseg/loss.hpp"

#include <cmath>

namespace canopyseg {

std::array<double, 4> class_weights(const LabelGrid& labels) {
  std::array<std::int64_t, 4> count{0, 0, 0, 0};
  std::int64_t labeled = 0;
  for (std::int64_t i = 0; i < labels.size(); ++i) {
    const std::uint8_t c = labels.data.data()[i];
    if (c == kUnlabeled) continue;
    ++count[c];
    ++labeled;
  }
  std::array<double, 4> w{};
  for (int c = 0; c < 4; ++c) {
    if (count[static_cast<std::size_t>(c)] == 0)
      fail(Errc::missing_class,
           "class_weights: class " + std::to_string(c) + " has no labeled pixels");
    w[static_cast<std::size_t>(c)] =
        static_cast<double>(labeled) / (4.0 * static_cast<double>(count[static_cast<std::size_t>(c)]));
  }
  return w;
}

template <class T>
FocalResult<T> focal_loss(const Tensor4<T>& logits, const LabelBatch& labels, const FocalConfig& cfg) {
  cfg.validate();
  if (logits.c != kNumClasses) fail(Errc::dimension_mismatch, "focal_loss: expected 4 logit channels");
  if (labels.n != logits.n || labels.c != 1 || labels.h != logits.h || labels.w != logits.w)
    fail(Errc::dimension_mismatch, "focal_loss: label batch dims do not match logits");

  FocalResult<T> res;
  res.dlogits = Tensor4<T>(logits.n, logits.c, logits.h, logits.w);

  // Pass 1: count labeled pixels (the denominator is fixed before gradients).
  for (std::size_t i = 0; i < labels.v.size(); ++i)
    if (labels.v[i] != kUnlabeled) ++res.labeled_pixels;
  if (res.labeled_pixels == 0) return res;
  const double inv_n = 1.0 / static_cast<double>(res.labeled_pixels);

  const std::int64_t hw = logits.plane_size();
  double total = 0.0;
  for (int b = 0; b < logits.n; ++b) {
    const std::uint8_t* lab = labels.plane(b, 0);
    const T* ch[kNumClasses];
    T* dch[kNumClasses];
    for (int c = 0; c < kNumClasses; ++c) {
      ch[c] = logits.plane(b, c);
      dch[c] = res.dlogits.plane(b, c);
    }
    for (std::int64_t i = 0; i < hw; ++i) {
      const std::uint8_t t = lab[i];
      if (t == kUnlabeled) continue;
      // Stable softmax at this pixel.
      double z[kNumClasses], p[kNumClasses];
      double zmax = -1e300;
      for (int c = 0; c < kNumClasses; ++c) {
        z[c] = static_cast<double>(ch[c][i]);
        zmax = std::max(zmax, z[c]);
      }
      double zsum = 0.0;
      for (int c = 0; c < kNumClasses; ++c) {
        p[c] = std::exp(z[c] - zmax);
        zsum += p[c];
      }
      for (int c = 0; c < kNumClasses; ++c) p[c] /= zsum;

      const double pt = p[t];
      if (pt <= cfg.cutoff_p) continue;  // hard gate: no loss, no gradient
      const double w = cfg.class_weights[t];
      if (w == 0.0) continue;
      const double one_m = 1.0 - pt;
      const double focal = std::pow(one_m, cfg.gamma);
      const double logp = std::log(pt);
      total += w * focal * (-logp);
      // d/dp [ (1-p)^g * (-log p) ] = g (1-p)^(g-1) log p - (1-p)^g / p
      const double dfdp =
          (cfg.gamma > 0.0 ? cfg.gamma * std::pow(one_m, cfg.gamma - 1.0) * logp : 0.0) - focal / pt;
      for (int c = 0; c < kNumClasses; ++c) {
        const double dp = pt * ((c == t ? 1.0 : 0.0) - p[c]);  // dp_t / dz_c
        dch[c][i] = static_cast<T>(w * dfdp * dp * inv_n);
      }
    }
  }
  res.loss = total * inv_n;
  return res;
}

template FocalResult<float> focal_loss<float>(const Tensor4<float>&, const LabelBatch&, const FocalConfig&);
template FocalResult<double> focal_loss<double>(const Tensor4<double>&, const LabelBatch&, const FocalConfig&);

}  // namespace canopyseg
