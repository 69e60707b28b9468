#include "canopyseg/augment.hpp"

#include <algorithm>
#include <cmath>

#include "canopyseg/filters.hpp"
#include "canopyseg/rng.hpp"

namespace canopyseg {

namespace {

// One quarter turn: out(r, c) = in(n-1-c, r), so pixel (0,0) lands at
// (0, n-1).
template <class Scalar>
void rotate90(const Scalar* in, Scalar* out, int n) {
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) out[static_cast<std::int64_t>(r) * n + c] = in[static_cast<std::int64_t>(n - 1 - c) * n + r];
}

template <class Scalar>
void flip_h(const Scalar* in, Scalar* out, int n) {
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) out[static_cast<std::int64_t>(r) * n + c] = in[static_cast<std::int64_t>(r) * n + (n - 1 - c)];
}

template <class Scalar>
void apply_plane(const Scalar* in, Scalar* out, int n, int k) {
  std::vector<Scalar> a(in, in + static_cast<std::size_t>(n) * n), b(a.size());
  for (int i = 0; i < k % 4; ++i) {
    rotate90(a.data(), b.data(), n);
    std::swap(a, b);
  }
  if (k >= 4) {
    flip_h(a.data(), b.data(), n);
    std::swap(a, b);
  }
  std::copy(a.begin(), a.end(), out);
}

}  // namespace

template <class T>
Sample<T> dihedral_augment(const Sample<T>& s, int k) {
  if (k < 0 || k > 7) fail(Errc::invalid_argument, "dihedral_augment: k must lie in 0..7");
  if (s.features.h != s.features.w) fail(Errc::dimension_mismatch, "dihedral_augment: tile must be square");
  if (s.labels.h != s.features.h || s.labels.w != s.features.w || s.labels.n != s.features.n)
    fail(Errc::dimension_mismatch, "dihedral_augment: feature/label dims differ");
  const int n = s.features.h;
  Sample<T> out;
  out.features = Tensor4<T>(s.features.n, s.features.c, n, n);
  out.labels = LabelBatch(s.labels.n, 1, n, n);
  for (int b = 0; b < s.features.n; ++b) {
    for (int c = 0; c < s.features.c; ++c)
      apply_plane(s.features.plane(b, c), out.features.plane(b, c), n, k);
    apply_plane(s.labels.plane(b, 0), out.labels.plane(b, 0), n, k);
  }
  return out;
}

int dihedral_inverse(int k) {
  if (k < 0 || k > 7) fail(Errc::invalid_argument, "dihedral_inverse: k must lie in 0..7");
  return k < 4 ? (4 - k) % 4 : k;  // reflections are involutions
}

std::vector<std::uint8_t> cow_mask(int h, int w, const CowMixConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (h < 8 || w < 8) fail(Errc::invalid_argument, "cow_mask: grid must be at least 8x8");
  Rng rng(mix_seed(seed, 0xC0117A5CULL));
  const double sigma = rng.uniform(cfg.sigma_min_px, cfg.sigma_max_px);
  const double f = rng.uniform(cfg.keep_fraction_min, cfg.keep_fraction_max);

  FloatGrid noise(GeoRef{0, static_cast<double>(h), 1.0, w, h});
  for (std::int64_t i = 0; i < noise.size(); ++i)
    noise.data.data()[i] = static_cast<float>(rng.uniform());
  FloatGrid smooth = gaussian_blur(noise, sigma);

  // Threshold at the empirical f-quantile of the smoothed field.
  const std::int64_t n = smooth.size();
  std::vector<float> sorted(smooth.data.data(), smooth.data.data() + n);
  const auto k = static_cast<std::int64_t>(n - std::llround(f * static_cast<double>(n)));
  const auto kk = std::clamp<std::int64_t>(k, 0, n - 1);
  std::nth_element(sorted.begin(), sorted.begin() + kk, sorted.end());
  const float thr = sorted[static_cast<std::size_t>(kk)];

  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) mask[static_cast<std::size_t>(i)] = smooth.data.data()[i] >= thr;
  return mask;
}

template <class T>
Sample<T> cow_batch_mix(const Sample<T>& a, const Sample<T>& b, const std::vector<std::uint8_t>& mask) {
  if (!a.features.same_shape(b.features) || a.labels.h != b.labels.h || a.labels.w != b.labels.w)
    fail(Errc::dimension_mismatch, "cow_batch_mix: sample dims differ");
  if (mask.size() != static_cast<std::size_t>(a.features.plane_size()))
    fail(Errc::dimension_mismatch, "cow_batch_mix: mask size does not match tile");
  Sample<T> out = a;
  const std::int64_t hw = a.features.plane_size();
  for (int bb = 0; bb < a.features.n; ++bb) {
    for (int c = 0; c < a.features.c; ++c) {
      T* dst = out.features.plane(bb, c);
      const T* src = b.features.plane(bb, c);
      for (std::int64_t i = 0; i < hw; ++i)
        if (!mask[static_cast<std::size_t>(i)]) dst[i] = src[i];
    }
    std::uint8_t* dl = out.labels.plane(bb, 0);
    const std::uint8_t* sl = b.labels.plane(bb, 0);
    for (std::int64_t i = 0; i < hw; ++i)
      if (!mask[static_cast<std::size_t>(i)]) dl[i] = sl[i];
  }
  return out;
}

template Sample<float> dihedral_augment<float>(const Sample<float>&, int);
template Sample<double> dihedral_augment<double>(const Sample<double>&, int);
template Sample<float> cow_batch_mix<float>(const Sample<float>&, const Sample<float>&,
                                            const std::vector<std::uint8_t>&);
template Sample<double> cow_batch_mix<double>(const Sample<double>&, const Sample<double>&,
                                              const std::vector<std::uint8_t>&);

}  // namespace canopyseg
