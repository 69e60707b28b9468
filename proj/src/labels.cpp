#include "canopyseg/labels.hpp"

#include <cmath>
#include <vector>

#include "canopyseg/filters.hpp"
#include "canopyseg/parallel.hpp"

namespace canopyseg {

LabelGrid prep_labels(const LabelGrid& weak16, const FloatGrid& chm, const PrepConfig& cfg) {
  cfg.validate();
  if (!weak16.same_extent(chm.georef))
    fail(Errc::georef_mismatch, "prep_labels: CHM and weak label extents differ");
  const double ratio = weak16.georef.pixel_size / chm.georef.pixel_size;
  if (std::abs(ratio - 16.0) > 1e-9)
    fail(Errc::georef_mismatch, "prep_labels: expected a 16:1 resolution ratio");

  const int w16 = weak16.width(), h16 = weak16.height();

  // Step 1: unlabeled -> background.
  LabelGrid step1 = weak16;
  for (std::int64_t i = 0; i < step1.size(); ++i)
    if (step1.data.data()[i] == kUnlabeled) step1.data.data()[i] = kBackground;

  // Step 2: forest/background border pixels (both sides) -> unlabeled.
  LabelGrid step2 = step1;
  const bool diag = cfg.border_neighborhood == 8;
  for (int r = 0; r < h16; ++r) {
    for (int c = 0; c < w16; ++c) {
      const bool f = is_forest(step1.at(c, r));
      bool border = false;
      for (int dr = -1; dr <= 1 && !border; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          if (!diag && dr != 0 && dc != 0) continue;
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= h16 || cc >= w16) continue;
          if (is_forest(step1.at(cc, rr)) != f) { border = true; break; }
        }
      }
      if (border) step2.at(c, r) = kUnlabeled;
    }
  }

  // Step 3: nearest-neighbor upsample to 1 m.
  LabelGrid out(chm.georef);
  const int w = chm.width(), h = chm.height();
  parallel_for(h, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r)
      for (int c = 0; c < w; ++c)
        out.at(c, static_cast<int>(r)) = step2.at(c / 16, static_cast<int>(r) / 16);
  });

  // Step 4: low-canopy override. Median CHM below the threshold forces
  // background, whatever the current code.
  const FloatGrid med = median_filter(chm, cfg.chm_median_window_px);
  const auto thr = static_cast<float>(cfg.chm_background_threshold_m);
  parallel_for(h, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r)
      for (int c = 0; c < w; ++c)
        if (med.at(c, static_cast<int>(r)) < thr) out.at(c, static_cast<int>(r)) = kBackground;
  });
  return out;
}

LabelGrid apply_land_mask(const LabelGrid& labels, const LabelGrid& mask) {
  if (!(labels.georef == mask.georef))
    fail(Errc::georef_mismatch, "apply_land_mask: mask extent differs from labels");
  LabelGrid out = labels;
  for (std::int64_t i = 0; i < out.size(); ++i) {
    const std::uint8_t m = mask.data.data()[i];
    if (m > 1) fail(Errc::illegal_label, "apply_land_mask: mask values must be 0 or 1");
    if (m == 0) out.data.data()[i] = kUnlabeled;
  }
  return out;
}

LabelGrid relabel_round2(const LabelGrid& labels, const LabelGrid& predictions, const PrepConfig& cfg) {
  cfg.validate();
  if (!(labels.georef == predictions.georef))
    fail(Errc::georef_mismatch, "relabel_round2: prediction extent differs from labels");
  const int w = labels.width(), h = labels.height();
  for (std::int64_t i = 0; i < predictions.size(); ++i)
    if (predictions.data.data()[i] == kUnlabeled)
      fail(Errc::illegal_label, "relabel_round2: predictions must not contain unlabeled pixels");

  std::vector<std::uint8_t> conflict(static_cast<std::size_t>(w) * h, 0);
  for (std::int64_t i = 0; i < labels.size(); ++i) {
    const std::uint8_t lab = labels.data.data()[i];
    const std::uint8_t pred = predictions.data.data()[i];
    conflict[static_cast<std::size_t>(i)] =
        (lab == kBackground && is_forest(pred)) || (is_forest(lab) && pred == kBackground);
  }

  const double px_area = labels.georef.pixel_size * labels.georef.pixel_size;
  const auto min_px = static_cast<std::int64_t>(std::ceil(cfg.relabel_min_area_m2 / px_area));

  // 8-connected components of the conflict map via iterative flood fill.
  LabelGrid out = labels;
  std::vector<std::uint8_t> seen(conflict.size(), 0);
  std::vector<std::int32_t> stack, component;
  for (std::int64_t start = 0; start < static_cast<std::int64_t>(conflict.size()); ++start) {
    if (!conflict[static_cast<std::size_t>(start)] || seen[static_cast<std::size_t>(start)]) continue;
    stack.clear();
    component.clear();
    stack.push_back(static_cast<std::int32_t>(start));
    seen[static_cast<std::size_t>(start)] = 1;
    while (!stack.empty()) {
      const std::int32_t i = stack.back();
      stack.pop_back();
      component.push_back(i);
      const int r = i / w, c = i % w;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
          const std::int32_t j = rr * w + cc;
          if (conflict[static_cast<std::size_t>(j)] && !seen[static_cast<std::size_t>(j)]) {
            seen[static_cast<std::size_t>(j)] = 1;
            stack.push_back(j);
          }
        }
      }
    }
    if (static_cast<std::int64_t>(component.size()) >= min_px)
      for (std::int32_t i : component) out.data.data()[i] = kUnlabeled;
  }
  return out;
}

}  // namespace canopyseg
