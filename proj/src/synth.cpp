#include "canopyseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "canopyseg/parallel.hpp"
#include "canopyseg/rng.hpp"

namespace canopyseg {

namespace {

// Stream ids for deriving independent RNG seeds from the scene seed.
enum : std::uint64_t {
  kStreamTerrain = 101,
  kStreamStands = 202,
  kStreamTrees = 303,
  kStreamClearcut = 404,
  kStreamPlots = 505,
};

double hash01(std::uint64_t seed, std::int64_t xi, std::int64_t yi) {
  std::uint64_t h = mix_seed(seed ^ mix_seed(static_cast<std::uint64_t>(xi) * 0x8DA6B343ULL ^
                                             static_cast<std::uint64_t>(yi) * 0xD8163841ULL));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Crown surface height above ground at distance d from the stem, for a tree of
// total height h. The three profiles are the species signal: a narrow serrated
// cone (spruce), a wide flat-topped cap over a bare trunk (pine), and a
// rounded dome (birch).
struct Crown {
  double radius;
  std::uint8_t species;
  double height;

  double surface(double d) const {
    const double r = d / radius;
    if (r >= 1.0) return 0.0;
    switch (species) {
      case kNorwaySpruce:
        return height * std::pow(1.0 - r, 1.5);  // narrow pointed cone
      case kScotsPine:
        return height * (1.0 - 0.45 * r * r);  // wide flat cap, cliff at the edge
      default:  // birch
        return (height - radius) + std::sqrt(std::max(0.0, radius * radius * (1.0 - r * r)));
    }
  }
};

double crown_radius(std::uint8_t species, double height) {
  switch (species) {
    case kNorwaySpruce: return std::max(1.0, 0.15 * height);
    case kScotsPine: return std::max(1.5, 0.33 * height);
    default: return std::max(1.2, 0.27 * height);
  }
}

struct StandInfo {
  double cx = 0, cy = 0;   // center, map meters
  std::uint8_t type = 0;   // 0 open, 1..3 dominant species
  std::int64_t area_px = 0;
  int min_c = 1 << 30, min_r = 1 << 30, max_c = -1, max_r = -1;
};

}  // namespace

void SceneSpec::validate() const {
  if (extent_m < 16.0 || std::fmod(extent_m, 16.0) != 0.0)
    fail(Errc::invalid_argument, "SceneSpec: extent_m must be a positive multiple of 16");
  if (stand_scale_m <= 1.0) fail(Errc::invalid_argument, "SceneSpec: stand_scale_m too small");
  if (density_per_ha < 0.0) fail(Errc::invalid_argument, "SceneSpec: density_per_ha must be >= 0");
  double sum = 0.0;
  for (double p : species_mix) {
    if (p < 0.0) fail(Errc::invalid_argument, "SceneSpec: species_mix entries must be >= 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) fail(Errc::invalid_argument, "SceneSpec: species_mix must sum to 1");
  if (clearcut_fraction < 0.0 || clearcut_fraction >= 0.5)
    fail(Errc::invalid_argument, "SceneSpec: clearcut_fraction must lie in [0, 0.5)");
  for (int s = kBirch; s <= kNorwaySpruce; ++s) {
    auto [lo, hi] = height_ranges[static_cast<std::size_t>(s)];
    if (lo <= 0.0 || hi < lo) fail(Errc::invalid_argument, "SceneSpec: bad height range");
  }
}

double value_noise(std::uint64_t seed, double x, double y, double wavelength) {
  const double fx = x / wavelength, fy = y / wavelength;
  const auto x0 = static_cast<std::int64_t>(std::floor(fx));
  const auto y0 = static_cast<std::int64_t>(std::floor(fy));
  const double tx = smoothstep(fx - static_cast<double>(x0));
  const double ty = smoothstep(fy - static_cast<double>(y0));
  const double v00 = hash01(seed, x0, y0), v10 = hash01(seed, x0 + 1, y0);
  const double v01 = hash01(seed, x0, y0 + 1), v11 = hash01(seed, x0 + 1, y0 + 1);
  const double a = v00 + (v10 - v00) * tx;
  const double b = v01 + (v11 - v01) * tx;
  return a + (b - a) * ty;
}

SynthScene gen_scene(const SceneSpec& spec, std::vector<StandStats>* stand_stats) {
  spec.validate();
  const int n = static_cast<int>(spec.extent_m);  // 1 m pixels
  GeoRef ref{0.0, spec.extent_m, 1.0, n, n};

  SynthScene scene;
  scene.seed = spec.seed;
  scene.dtm = FloatGrid(ref);
  scene.dsm = FloatGrid(ref);
  scene.truth = LabelGrid(ref, kBackground);

  // Terrain: four octaves of value noise, total amplitude bounded by 37.5 m.
  const std::uint64_t tseed = mix_seed(spec.seed, kStreamTerrain);
  parallel_for(n, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r) {
      for (int c = 0; c < n; ++c) {
        const double x = c + 0.5, y = r + 0.5;
        double z = 100.0;
        double amp = 20.0, wl = spec.extent_m / 2.0;
        for (int o = 0; o < 4; ++o) {
          z += amp * (2.0 * value_noise(tseed + static_cast<std::uint64_t>(o), x, y, wl) - 1.0);
          amp *= 0.5;
          wl *= 0.5;
        }
        scene.dtm.at(c, static_cast<int>(r)) = static_cast<float>(z);
      }
    }
  });

  // Stands: one jittered center per stand_scale cell, type drawn from
  // species_mix; each pixel belongs to the nearest center.
  const std::uint64_t sseed = mix_seed(spec.seed, kStreamStands);
  const double cell = spec.stand_scale_m;
  const int ncx = static_cast<int>(std::ceil(spec.extent_m / cell));
  const int ncy = ncx;
  std::vector<StandInfo> stands(static_cast<std::size_t>(ncx) * ncy);
  for (int cy = 0; cy < ncy; ++cy) {
    for (int cx = 0; cx < ncx; ++cx) {
      auto& st = stands[static_cast<std::size_t>(cy) * ncx + cx];
      const double jx = 0.15 + 0.7 * hash01(sseed, cx, cy);
      const double jy = 0.15 + 0.7 * hash01(sseed ^ 0x5bd1e995ULL, cx, cy);
      st.cx = (cx + jx) * cell;
      st.cy = (cy + jy) * cell;
      double u = hash01(sseed ^ 0x27d4eb2fULL, cx, cy);
      std::uint8_t type = 3;
      double acc = 0.0;
      for (std::uint8_t k = 0; k < 4; ++k) {
        acc += spec.species_mix[k];
        if (u < acc) { type = k; break; }
      }
      st.type = type;
    }
  }

  std::vector<std::int32_t> stand_id(static_cast<std::size_t>(n) * n);
  parallel_for(n, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r) {
      for (int c = 0; c < n; ++c) {
        const double x = c + 0.5, y = r + 0.5;
        const int cx0 = static_cast<int>(x / cell), cy0 = static_cast<int>(y / cell);
        double best = 1e30;
        std::int32_t bid = 0;
        for (int dy = -2; dy <= 2; ++dy) {
          for (int dx = -2; dx <= 2; ++dx) {
            const int cx = cx0 + dx, cy = cy0 + dy;
            if (cx < 0 || cy < 0 || cx >= ncx || cy >= ncy) continue;
            const auto& st = stands[static_cast<std::size_t>(cy) * ncx + cx];
            const double d = (st.cx - x) * (st.cx - x) + (st.cy - y) * (st.cy - y);
            if (d < best) { best = d; bid = cy * ncx + cx; }
          }
        }
        stand_id[static_cast<std::size_t>(r) * n + c] = bid;
      }
    }
  });
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      auto& st = stands[static_cast<std::size_t>(stand_id[static_cast<std::size_t>(r) * n + c])];
      ++st.area_px;
      st.min_c = std::min(st.min_c, c);
      st.max_c = std::max(st.max_c, c);
      st.min_r = std::min(st.min_r, r);
      st.max_r = std::max(st.max_r, r);
    }
  }

  // Trees: per forest stand, count to match the target density, positions
  // rejection-sampled inside the stand, species mostly the stand's dominant.
  struct Tree {
    double x, y;
    Crown crown;
  };
  std::vector<Tree> trees;
  if (stand_stats) stand_stats->clear();
  Rng trng(mix_seed(spec.seed, kStreamTrees));
  for (std::size_t sid = 0; sid < stands.size(); ++sid) {
    const auto& st = stands[sid];
    std::int64_t placed = 0;
    if (st.type != kBackground && st.area_px > 0 && spec.density_per_ha > 0.0) {
      const auto want = static_cast<std::int64_t>(
          std::llround(spec.density_per_ha * static_cast<double>(st.area_px) / 10000.0));
      std::int64_t attempts = 0;
      const std::int64_t max_attempts = 50 * (want + 1);
      while (placed < want && attempts < max_attempts) {
        ++attempts;
        const double x = st.min_c + trng.uniform() * (st.max_c - st.min_c + 1);
        const double y = st.min_r + trng.uniform() * (st.max_r - st.min_r + 1);
        const int pc = std::clamp(static_cast<int>(x), 0, n - 1);
        const int pr = std::clamp(static_cast<int>(y), 0, n - 1);
        const double spin = trng.uniform();
        const double shgt = trng.uniform();
        if (stand_id[static_cast<std::size_t>(pr) * n + pc] != static_cast<std::int32_t>(sid)) continue;
        std::uint8_t sp = st.type;
        if (spin >= 0.9) sp = static_cast<std::uint8_t>(1 + (spin < 0.95 ? (st.type % 3) : ((st.type + 1) % 3)));
        const auto [hlo, hhi] = spec.height_ranges[sp];
        const double h = hlo + shgt * (hhi - hlo);
        trees.push_back({x, y, Crown{crown_radius(sp, h), sp, h}});
        ++placed;
      }
    }
    if (stand_stats) stand_stats->push_back({st.type, st.area_px, placed});
  }

  // Render crowns: per-pixel max over overlapping crowns, serial scan order so
  // equal-height ties resolve deterministically (first tree wins).
  FloatGrid crown_height(ref);
  for (const auto& t : trees) {
    const int c0 = std::max(0, static_cast<int>(std::floor(t.x - t.crown.radius - 0.5)));
    const int c1 = std::min(n - 1, static_cast<int>(std::ceil(t.x + t.crown.radius)));
    const int r0 = std::max(0, static_cast<int>(std::floor(t.y - t.crown.radius - 0.5)));
    const int r1 = std::min(n - 1, static_cast<int>(std::ceil(t.y + t.crown.radius)));
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const double dx = (c + 0.5) - t.x, dy = (r + 0.5) - t.y;
        const double d = std::sqrt(dx * dx + dy * dy);
        if (d >= t.crown.radius) continue;
        const double z = t.crown.surface(d);
        if (z > crown_height.at(c, r)) {
          crown_height.at(c, r) = static_cast<float>(z);
          scene.truth.at(c, r) = t.crown.species;
        }
      }
    }
  }
  scene.dsm.data = scene.dtm.data + crown_height.data;

  scene.weak16 = degrade_labels(scene, spec);
  return scene;
}

LabelGrid degrade_labels(SynthScene& scene, const SceneSpec& spec) {
  const int n = scene.truth.width();
  if (n % 16 != 0 || scene.truth.height() != n)
    fail(Errc::dimension_mismatch, "degrade_labels: truth grid must be square with side multiple of 16");
  const int n16 = n / 16;
  GeoRef ref16{scene.truth.georef.origin_x, scene.truth.georef.origin_y,
               scene.truth.georef.pixel_size * 16.0, n16, n16};
  LabelGrid weak(ref16, kUnlabeled);

  // Majority class per cell; ties resolve to the lowest code; cells without a
  // single forest pixel carry no label, like a forest-only source map.
  parallel_for(n16, [&](std::int64_t cr0, std::int64_t cr1) {
    for (std::int64_t cr = cr0; cr < cr1; ++cr) {
      for (int cc = 0; cc < n16; ++cc) {
        std::array<std::int32_t, 4> count{0, 0, 0, 0};
        for (int r = static_cast<int>(cr) * 16; r < (static_cast<int>(cr) + 1) * 16; ++r)
          for (int c = cc * 16; c < (cc + 1) * 16; ++c) ++count[scene.truth.at(c, r)];
        const std::int32_t forest = count[1] + count[2] + count[3];
        if (forest == 0) {
          weak.at(cc, static_cast<int>(cr)) = kUnlabeled;
          continue;
        }
        std::uint8_t best = 0;
        for (std::uint8_t k = 1; k < 4; ++k)
          if (count[k] > count[best]) best = k;
        weak.at(cc, static_cast<int>(cr)) = best;
      }
    }
  });

  if (spec.clearcut_fraction <= 0.0) return weak;

  // Clearcut injection: disjoint 16 m-aligned square patches inside forest,
  // totaling clearcut_fraction of the forest pixel area.
  std::int64_t forest_px = 0;
  for (std::int64_t i = 0; i < scene.truth.size(); ++i)
    if (is_forest(scene.truth.data.data()[i])) ++forest_px;
  const auto target = static_cast<std::int64_t>(spec.clearcut_fraction * static_cast<double>(forest_px));

  Rng rng(mix_seed(spec.seed, kStreamClearcut));
  std::vector<std::uint8_t> occupied(static_cast<std::size_t>(n16) * n16, 0);
  std::int64_t placed = 0;
  int attempts = 0;
  while (placed < target && attempts < 20000) {
    ++attempts;
    const int side_cells = rng.uniform_int(11, 14);  // 176..224 m
    if (side_cells > n16) break;
    const int cx = rng.uniform_int(0, n16 - side_cells);
    const int cy = rng.uniform_int(0, n16 - side_cells);
    const bool stale = rng.uniform() < 0.5;

    int species_cells = 0;
    bool overlap = false;
    for (int r = cy; r < cy + side_cells && !overlap; ++r)
      for (int c = cx; c < cx + side_cells; ++c) {
        if (occupied[static_cast<std::size_t>(r) * n16 + c]) { overlap = true; break; }
        if (is_forest(weak.at(c, r))) ++species_cells;
      }
    if (overlap || species_cells * 10 < side_cells * side_cells * 6) continue;

    for (int r = cy; r < cy + side_cells; ++r) {
      for (int c = cx; c < cx + side_cells; ++c) {
        occupied[static_cast<std::size_t>(r) * n16 + c] = 1;
        if (!stale && is_forest(weak.at(c, r))) weak.at(c, r) = kBackground;
      }
    }
    if (stale) {
      // Reality changed after the map: flatten the canopy, keep the label.
      for (int r = cy * 16; r < (cy + side_cells) * 16; ++r) {
        for (int c = cx * 16; c < (cx + side_cells) * 16; ++c) {
          scene.dsm.at(c, r) = scene.dtm.at(c, r);
          scene.truth.at(c, r) = kBackground;
        }
      }
    }
    placed += static_cast<std::int64_t>(side_cells) * side_cells * 256;
  }
  return weak;
}

std::vector<PlotRecord> sample_plots(const SynthScene& scene, int n, double area_m2) {
  if (n < 1) fail(Errc::invalid_argument, "sample_plots: n must be >= 1");
  if (area_m2 <= 0.0) fail(Errc::invalid_argument, "sample_plots: area must be > 0");
  const double radius = std::sqrt(area_m2 / 3.14159265358979323846);
  const auto& ref = scene.truth.georef;
  const double extent_x = ref.width * ref.pixel_size;
  const double extent_y = ref.height * ref.pixel_size;
  if (extent_x < 2 * radius || extent_y < 2 * radius)
    fail(Errc::placement_failure, "sample_plots: scene smaller than one plot");

  Rng rng(mix_seed(scene.seed, kStreamPlots));
  std::vector<PlotRecord> plots;
  plots.reserve(static_cast<std::size_t>(n));
  std::int64_t attempts = 0;
  const std::int64_t max_attempts = 4000LL * n;
  while (static_cast<int>(plots.size()) < n) {
    if (++attempts > max_attempts)
      fail(Errc::placement_failure, "sample_plots: cannot place that many disjoint plots");
    const double mx = ref.origin_x + radius + rng.uniform() * (extent_x - 2 * radius);
    const double my = ref.origin_y - radius - rng.uniform() * (extent_y - 2 * radius);
    bool clash = false;
    for (const auto& p : plots) {
      const double dx = p.center_x - mx, dy = p.center_y - my;
      if (dx * dx + dy * dy < 4 * radius * radius) { clash = true; break; }
    }
    if (clash) continue;

    // Dominant truth class among pixel centers strictly inside the circle.
    std::array<std::int64_t, 4> count{0, 0, 0, 0};
    const int c0 = std::max(0, static_cast<int>((mx - ref.origin_x - radius) / ref.pixel_size) - 1);
    const int c1 = std::min(ref.width - 1, static_cast<int>((mx - ref.origin_x + radius) / ref.pixel_size) + 1);
    const int r0 = std::max(0, static_cast<int>((ref.origin_y - my - radius) / ref.pixel_size) - 1);
    const int r1 = std::min(ref.height - 1, static_cast<int>((ref.origin_y - my + radius) / ref.pixel_size) + 1);
    std::int64_t total = 0;
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const auto [px, py] = ref.pixel_center(c, r);
        const double dx = px - mx, dy = py - my;
        if (dx * dx + dy * dy >= radius * radius) continue;
        ++count[scene.truth.at(c, r)];
        ++total;
      }
    }
    if (total == 0) continue;
    std::uint8_t best = 0;
    if (count[1] + count[2] + count[3] > 0) {
      best = 1;
      for (std::uint8_t k = 2; k < 4; ++k)
        if (count[k] > count[best]) best = k;
    }
    PlotRecord rec;
    rec.id = static_cast<int>(plots.size());
    rec.center_x = mx;
    rec.center_y = my;
    rec.area_m2 = area_m2;
    rec.reference_class = best;
    plots.push_back(rec);
  }
  return plots;
}

void save_plots_csv(const std::vector<PlotRecord>& plots, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(Errc::io_failure, "cannot open " + path + " for writing");
  out << "id,x,y,area_m2,ref_class\n";
  out.precision(10);
  for (const auto& p : plots)
    out << p.id << ',' << p.center_x << ',' << p.center_y << ',' << p.area_m2 << ','
        << static_cast<int>(p.reference_class) << '\n';
  if (!out) fail(Errc::io_failure, "short write to " + path);
}

std::vector<PlotRecord> load_plots_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io_failure, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("id,", 0) != 0)
    fail(Errc::bad_magic, path + ": missing plots CSV header");
  std::vector<PlotRecord> plots;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    PlotRecord p;
    char comma;
    int ref_class;
    if (!(ss >> p.id >> comma >> p.center_x >> comma >> p.center_y >> comma >> p.area_m2 >> comma >> ref_class))
      fail(Errc::truncated_payload, path + ": malformed plots CSV row");
    if (ref_class < 0 || ref_class > 3) fail(Errc::illegal_label, path + ": plot reference class out of range");
    p.reference_class = static_cast<std::uint8_t>(ref_class);
    plots.push_back(p);
  }
  return plots;
}

}  // namespace canopyseg
