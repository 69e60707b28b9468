#include "canopyseg/infer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "canopyseg/filters.hpp"
#include "canopyseg/parallel.hpp"
#include "canopyseg/train.hpp"

namespace canopyseg {

namespace {

// 1-D window positions and matching write intervals along one axis.
struct AxisPlan {
  std::vector<int> read0, write0, write1;
  int tile;
};

AxisPlan plan_axis(int extent, const InferConfig& cfg) {
  AxisPlan plan;
  if (extent <= cfg.tile_px) {
    plan.tile = extent;
    plan.read0 = {0};
    plan.write0 = {0};
    plan.write1 = {extent};
    return plan;
  }
  plan.tile = cfg.tile_px;
  const int stride = cfg.tile_px - 2 * cfg.crop_px;
  int pos = 0;
  while (true) {
    plan.read0.push_back(pos);
    if (pos + cfg.tile_px >= extent) break;
    pos = std::min(pos + stride, extent - cfg.tile_px);
  }
  const int n = static_cast<int>(plan.read0.size());
  plan.write0.resize(static_cast<std::size_t>(n));
  plan.write1.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    plan.write0[static_cast<std::size_t>(i)] =
        i == 0 ? 0 : plan.write1[static_cast<std::size_t>(i - 1)];
    plan.write1[static_cast<std::size_t>(i)] =
        i == n - 1 ? extent : plan.read0[static_cast<std::size_t>(i)] + cfg.tile_px - cfg.crop_px;
  }
  return plan;
}

}  // namespace

std::vector<TileWindow> tile_plan(int extent_w, int extent_h, const InferConfig& cfg) {
  cfg.validate();
  if (extent_w < 1 || extent_h < 1) fail(Errc::invalid_argument, "tile_plan: empty extent");
  const AxisPlan px = plan_axis(extent_w, cfg);
  const AxisPlan py = plan_axis(extent_h, cfg);
  std::vector<TileWindow> tiles;
  tiles.reserve(px.read0.size() * py.read0.size());
  for (std::size_t iy = 0; iy < py.read0.size(); ++iy) {
    for (std::size_t ix = 0; ix < px.read0.size(); ++ix) {
      TileWindow t;
      t.read_col = px.read0[ix];
      t.read_row = py.read0[iy];
      t.read_w = px.tile;
      t.read_h = py.tile;
      t.write_col = px.write0[ix];
      t.write_row = py.write0[iy];
      t.write_w = px.write1[ix] - px.write0[ix];
      t.write_h = py.write1[iy] - py.write0[iy];
      tiles.push_back(t);
    }
  }
  return tiles;
}

PredictResult predict_map(const FloatGrid& dtm, const FloatGrid& chm, const NetParams<float>& params,
                          const NetConfig& ncfg, const InferConfig& icfg, const FeatureNorm& feat) {
  icfg.validate();
  ncfg.validate();
  if (!(dtm.georef == chm.georef)) fail(Errc::georef_mismatch, "predict_map: DTM and CHM georefs differ");
  const int W = dtm.width(), H = dtm.height();
  const int factor = ncfg.pool_factor();
  if (icfg.tile_px % factor != 0)
    fail(Errc::dimension_mismatch, "predict_map: tile_px must be divisible by 2^(depth-1)");

  PredictResult res;
  res.species = LabelGrid(dtm.georef, kBackground);
  res.logits.assign(static_cast<std::size_t>(ncfg.out_channels), FloatGrid(dtm.georef));

  const auto tiles = tile_plan(W, H, icfg);
  parallel_for(static_cast<std::int64_t>(tiles.size()), [&](std::int64_t t0, std::int64_t t1) {
    for (std::int64_t ti = t0; ti < t1; ++ti) {
      const TileWindow& tw = tiles[static_cast<std::size_t>(ti)];
      // Pad the read window up to the pooling granularity (relevant only for
      // maps smaller than one tile); features reflect at the window edge.
      const int ph = (tw.read_h + factor - 1) / factor * factor;
      const int pw = (tw.read_w + factor - 1) / factor * factor;
      Tensor4<float> x(1, 2, ph, pw);
      const float inv_std = 1.0f / (feat.dtm_std > 0 ? feat.dtm_std : 1.0f);
      const float inv_scale = 1.0f / feat.chm_scale;
      for (int r = 0; r < ph; ++r) {
        const int gr = tw.read_row + reflect_index(r, tw.read_h);
        for (int c = 0; c < pw; ++c) {
          const int gc = tw.read_col + reflect_index(c, tw.read_w);
          x.at(0, 0, r, c) = (dtm.at(gc, gr) - feat.dtm_mean) * inv_std;
          x.at(0, 1, r, c) = chm.at(gc, gr) * inv_scale;
        }
      }
      Tensor4<float> logits = forward(params, ncfg, x, icfg.stats_mode, nullptr);

      // Blur each logit channel over the read window, then place the write
      // sub-rectangle into the mosaic. Blur precedes the crop.
      GeoRef tile_ref{0.0, static_cast<double>(tw.read_h), 1.0, tw.read_w, tw.read_h};
      for (int ch = 0; ch < ncfg.out_channels; ++ch) {
        FloatGrid plane(tile_ref);
        for (int r = 0; r < tw.read_h; ++r)
          for (int c = 0; c < tw.read_w; ++c) plane.at(c, r) = logits.at(0, ch, r, c);
        if (icfg.blur_sigma_px > 0.0) plane = gaussian_blur(plane, icfg.blur_sigma_px);
        FloatGrid& mosaic = res.logits[static_cast<std::size_t>(ch)];
        for (int r = 0; r < tw.write_h; ++r) {
          const int src_r = tw.write_row - tw.read_row + r;
          for (int c = 0; c < tw.write_w; ++c)
            mosaic.at(tw.write_col + c, tw.write_row + r) = plane.at(tw.write_col - tw.read_col + c, src_r);
        }
      }
    }
  });

  // Species: argmax over the mosaicked logits, ties to the lowest code.
  parallel_for(H, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r) {
      for (int c = 0; c < W; ++c) {
        int best = 0;
        float bv = res.logits[0].at(c, static_cast<int>(r));
        for (int ch = 1; ch < ncfg.out_channels; ++ch) {
          const float v = res.logits[static_cast<std::size_t>(ch)].at(c, static_cast<int>(r));
          if (v > bv) { bv = v; best = ch; }
        }
        res.species.at(c, static_cast<int>(r)) = static_cast<std::uint8_t>(best);
      }
    }
  });
  return res;
}

void save_species_ppm(const LabelGrid& species, const std::string& path) {
  static constexpr unsigned char palette[4][3] = {
      {255, 255, 255},  // background: white
      {140, 205, 80},   // birch: light green
      {235, 155, 40},   // scots pine: orange
      {25, 90, 50},     // norway spruce: dark green
  };
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io_failure, "cannot open " + path + " for writing");
  out << "P6\n" << species.width() << ' ' << species.height() << "\n255\n";
  for (int r = 0; r < species.height(); ++r) {
    for (int c = 0; c < species.width(); ++c) {
      const std::uint8_t code = species.at(c, r);
      const unsigned char black[3] = {0, 0, 0};
      const unsigned char* rgb = code <= 3 ? palette[code] : black;
      out.write(reinterpret_cast<const char*>(rgb), 3);
    }
  }
  if (!out) fail(Errc::io_failure, "short write to " + path);
}

}  // namespace canopyseg
