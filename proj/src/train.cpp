#include "canopyseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "canopyseg/parallel.hpp"

namespace canopyseg {

template <class T>
Tensor4<T> feature_tile(const FloatGrid& dtm, const FloatGrid& chm, const FeatureNorm& feat, int col0,
                        int row0, int w, int h) {
  if (col0 < 0 || row0 < 0 || col0 + w > dtm.width() || row0 + h > dtm.height())
    fail(Errc::out_of_bounds, "feature_tile: window outside grid");
  Tensor4<T> x(1, 2, h, w);
  const T inv_std = static_cast<T>(1.0 / (feat.dtm_std > 0 ? feat.dtm_std : 1.0f));
  const T mean = static_cast<T>(feat.dtm_mean);
  const T inv_scale = static_cast<T>(1.0 / feat.chm_scale);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      x.at(0, 0, r, c) = (static_cast<T>(dtm.at(col0 + c, row0 + r)) - mean) * inv_std;
      x.at(0, 1, r, c) = static_cast<T>(chm.at(col0 + c, row0 + r)) * inv_scale;
    }
  }
  return x;
}

template Tensor4<float> feature_tile<float>(const FloatGrid&, const FloatGrid&, const FeatureNorm&, int,
                                            int, int, int);
template Tensor4<double> feature_tile<double>(const FloatGrid&, const FloatGrid&, const FeatureNorm&, int,
                                              int, int, int);

FeatureNorm compute_feature_norm(const FloatGrid& dtm, float chm_scale) {
  double sum = 0.0;
  for (std::int64_t i = 0; i < dtm.size(); ++i) sum += static_cast<double>(dtm.data.data()[i]);
  const double mean = sum / static_cast<double>(dtm.size());
  double ss = 0.0;
  for (std::int64_t i = 0; i < dtm.size(); ++i) {
    const double d = static_cast<double>(dtm.data.data()[i]) - mean;
    ss += d * d;
  }
  FeatureNorm f;
  f.dtm_mean = static_cast<float>(mean);
  f.dtm_std = static_cast<float>(std::max(std::sqrt(ss / static_cast<double>(dtm.size())), 1e-6));
  f.chm_scale = chm_scale;
  return f;
}

namespace {

LabelBatch label_tile(const LabelGrid& labels, int col0, int row0, int tile) {
  LabelBatch t(1, 1, tile, tile);
  for (int r = 0; r < tile; ++r)
    for (int c = 0; c < tile; ++c) t.at(0, 0, r, c) = labels.at(col0 + c, row0 + r);
  return t;
}

bool in_any_region(const std::vector<Region>& regions, int c0, int r0, int tile) {
  for (const auto& reg : regions)
    if (reg.intersects_tile(c0, r0, tile)) return true;
  return false;
}

}  // namespace

TrainResult train_epochs(const TrainData& data, const TrainConfig& tcfg, const NetConfig& ncfg,
                         FocalConfig fcfg, const CowMixConfig& ccfg) {
  ncfg.validate();
  ccfg.validate();
  if (!data.dtm || !data.chm || !data.labels) fail(Errc::invalid_argument, "train: missing input grids");
  const FloatGrid& dtm = *data.dtm;
  const FloatGrid& chm = *data.chm;
  const LabelGrid& labels = *data.labels;
  if (!(dtm.georef == chm.georef) || !(dtm.georef == labels.georef))
    fail(Errc::georef_mismatch, "train: DTM/CHM/label grids must share one georef");

  const int tile = tcfg.tile_px;
  const int W = dtm.width(), H = dtm.height();
  if (tile % ncfg.pool_factor() != 0)
    fail(Errc::invalid_argument, "train: tile_px must be divisible by 2^(depth-1)");
  if (tile > W || tile > H) fail(Errc::invalid_argument, "train: tile larger than the scene");
  if (tcfg.batch < 1 || tcfg.epochs < 0 || tcfg.lr < 0)
    fail(Errc::invalid_argument, "train: bad batch/epochs/lr");
  for (const auto& reg : tcfg.val_regions)
    if (reg.col0 < 0 || reg.row0 < 0 || reg.w < 1 || reg.h < 1 || reg.col0 + reg.w > W ||
        reg.row0 + reg.h > H)
      fail(Errc::out_of_bounds, "train: validation region outside scene");

  // Inverse-frequency class weights over the labeled train-area pixels.
  std::array<std::int64_t, 4> count{0, 0, 0, 0};
  std::int64_t labeled = 0, train_px = 0;
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      if (in_any_region(tcfg.val_regions, c, r, 1)) continue;
      ++train_px;
      const std::uint8_t code = labels.at(c, r);
      if (code == kUnlabeled) continue;
      ++count[code];
      ++labeled;
    }
  }
  if (labeled == 0) fail(Errc::missing_class, "train: no labeled pixels in the train regions");
  if (tcfg.auto_class_weights) {
    for (int c = 0; c < 4; ++c) {
      if (count[static_cast<std::size_t>(c)] == 0)
        fail(Errc::missing_class, "train: class " + std::to_string(c) + " missing from train area");
      fcfg.class_weights[static_cast<std::size_t>(c)] =
          static_cast<double>(labeled) / (4.0 * static_cast<double>(count[static_cast<std::size_t>(c)]));
    }
  }
  fcfg.validate();

  TrainResult res;
  res.feat = compute_feature_norm(dtm);
  res.class_weights_used = fcfg.class_weights;
  res.params = init_model<float>(ncfg, tcfg.seed);

  // Fixed validation tiles: a stride-tile_px cover of each validation region.
  std::vector<std::pair<int, int>> val_tiles;
  for (const auto& reg : tcfg.val_regions) {
    if (reg.w < tile || reg.h < tile) continue;
    for (int r = reg.row0; r + tile <= reg.row0 + reg.h; r += tile)
      for (int c = reg.col0; c + tile <= reg.col0 + reg.w; c += tile) val_tiles.emplace_back(c, r);
  }

  const int steps =
      tcfg.steps_per_epoch > 0
          ? tcfg.steps_per_epoch
          : std::max(1, static_cast<int>(train_px / (static_cast<std::int64_t>(tile) * tile * tcfg.batch)));

  Rng rng(mix_seed(tcfg.seed, 0x7EA1A11ULL));
  AdamState<float> adam;
  const AdamConfig adam_cfg;

  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    int loss_steps = 0;
    for (int step = 0; step < steps; ++step) {
      // Sample batch tile origins from the train area.
      std::vector<Sample<float>> samples(static_cast<std::size_t>(tcfg.batch));
      for (int b = 0; b < tcfg.batch; ++b) {
        int c0 = 0, r0 = 0;
        int attempts = 0;
        for (;; ++attempts) {
          if (attempts > 10000) fail(Errc::placement_failure, "train: cannot sample a tile outside validation regions");
          c0 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(W - tile + 1)));
          r0 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(H - tile + 1)));
          if (!in_any_region(tcfg.val_regions, c0, r0, tile)) break;
        }
        Sample<float> s;
        s.features = feature_tile<float>(dtm, chm, res.feat, c0, r0, tile, tile);
        s.labels = label_tile(labels, c0, r0, tile);
        const int k = static_cast<int>(rng.uniform_index(8));
        samples[static_cast<std::size_t>(b)] = dihedral_augment(s, k);
      }
      // CowBatchMix over snapshots of the (already rotated) batch. All draws
      // happen unconditionally so the stream shape stays fixed.
      const std::vector<Sample<float>> originals = samples;
      for (int b = 0; b < tcfg.batch; ++b) {
        const double u = rng.uniform();
        const auto partner_off = rng.uniform_index(static_cast<std::uint64_t>(std::max(1, tcfg.batch - 1)));
        const std::uint64_t mseed = rng.next_u64();
        if (tcfg.batch < 2 || u >= ccfg.apply_probability) continue;
        const int j = static_cast<int>((b + 1 + partner_off) % static_cast<std::uint64_t>(tcfg.batch));
        const auto mask = cow_mask(tile, tile, ccfg, mseed);
        samples[static_cast<std::size_t>(b)] =
            cow_batch_mix(originals[static_cast<std::size_t>(b)], originals[static_cast<std::size_t>(j)], mask);
      }
      // Per-sample forward/backward in parallel: the network factorizes over
      // the batch (instance statistics are per sample), so slicing and a
      // fixed-order gradient reduction reproduce the batched result exactly.
      const int B = tcfg.batch;
      std::vector<Tape<float>> tapes(static_cast<std::size_t>(B));
      std::vector<Tensor4<float>> sample_logits(static_cast<std::size_t>(B));
      parallel_for(B, [&](std::int64_t b0, std::int64_t b1) {
        for (std::int64_t b = b0; b < b1; ++b)
          sample_logits[static_cast<std::size_t>(b)] =
              forward(res.params, ncfg, samples[static_cast<std::size_t>(b)].features,
                      StatsMode::per_sample, &tapes[static_cast<std::size_t>(b)]);
      });
      Tensor4<float> logits(B, ncfg.out_channels, tile, tile);
      LabelBatch y(B, 1, tile, tile);
      for (int b = 0; b < B; ++b) {
        for (int c = 0; c < ncfg.out_channels; ++c)
          std::copy_n(sample_logits[static_cast<std::size_t>(b)].plane(0, c), logits.plane_size(),
                      logits.plane(b, c));
        std::copy_n(samples[static_cast<std::size_t>(b)].labels.plane(0, 0), y.plane_size(), y.plane(b, 0));
      }
      FocalResult<float> fr = focal_loss(logits, y, fcfg);
      if (fr.labeled_pixels == 0) continue;  // nothing to learn from this batch

      std::vector<NetParams<float>> sample_grads(static_cast<std::size_t>(B));
      parallel_for(B, [&](std::int64_t b0, std::int64_t b1) {
        for (std::int64_t b = b0; b < b1; ++b) {
          Tensor4<float> dl(1, ncfg.out_channels, tile, tile);
          for (int c = 0; c < ncfg.out_channels; ++c)
            std::copy_n(fr.dlogits.plane(static_cast<int>(b), c), dl.plane_size(), dl.plane(0, c));
          sample_grads[static_cast<std::size_t>(b)] =
              backward(res.params, ncfg, tapes[static_cast<std::size_t>(b)], dl);
        }
      });
      NetParams<float>& grads = sample_grads[0];
      for (int b = 1; b < B; ++b)
        for (std::size_t t = 0; t < grads.tensors.size(); ++t)
          for (std::size_t i = 0; i < grads.tensors[t].v.size(); ++i)
            grads.tensors[t].v[i] += sample_grads[static_cast<std::size_t>(b)].tensors[t].v[i];

      opt_step(res.params, grads, adam, tcfg.lr, adam_cfg);
      for (int b = 0; b < B; ++b)
        update_running_stats(res.params, tapes[static_cast<std::size_t>(b)],
                             tcfg.running_stats_momentum / B);
      loss_sum += fr.loss;
      ++loss_steps;
    }

    double val_sum = 0.0;
    int val_count = 0;
    for (const auto& [c0, r0] : val_tiles) {
      Tensor4<float> x = feature_tile<float>(dtm, chm, res.feat, c0, r0, tile, tile);
      LabelBatch y = label_tile(labels, c0, r0, tile);
      Tensor4<float> logits = forward(res.params, ncfg, x, StatsMode::per_sample, nullptr);
      FocalResult<float> fr = focal_loss(logits, y, fcfg);
      if (fr.labeled_pixels == 0) continue;
      val_sum += fr.loss;
      ++val_count;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_steps > 0 ? loss_sum / loss_steps : 0.0;
    em.val_loss = val_count > 0 ? val_sum / val_count : 0.0;
    res.metrics.push_back(em);
  }
  return res;
}

void save_metrics_csv(const std::vector<EpochMetrics>& metrics, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(Errc::io_failure, "cannot open " + path + " for writing");
  out << "epoch,train_loss,val_loss\n";
  out.precision(10);
  for (const auto& m : metrics) out << m.epoch << ',' << m.train_loss << ',' << m.val_loss << '\n';
}

}  // namespace canopyseg
