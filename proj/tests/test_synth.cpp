#include <doctest.h>

#include <array>
#include <cmath>
#include <numbers>
#include <filesystem>

#include "canopyseg/filters.hpp"
#include "canopyseg/synth.hpp"

using namespace canopyseg;

namespace {

SceneSpec small_spec(std::uint64_t seed = 1) {
  SceneSpec spec;
  spec.seed = seed;
  spec.extent_m = 256.0;
  spec.stand_scale_m = 60.0;
  spec.density_per_ha = 600.0;
  spec.species_mix = {0.25, 0.25, 0.25, 0.25};
  return spec;
}

}  // namespace

TEST_SUITE_BEGIN("synth");

TEST_CASE("spec validation") {
  SceneSpec spec = small_spec();
  SUBCASE("extent must be a multiple of 16") {
    spec.extent_m = 250.0;
    CHECK_THROWS_AS(spec.validate(), Error);
  }
  SUBCASE("mix must sum to one") {
    spec.species_mix = {0.5, 0.5, 0.5, 0.5};
    CHECK_THROWS_AS(spec.validate(), Error);
  }
  SUBCASE("clearcut fraction below one half") {
    spec.clearcut_fraction = 0.6;
    CHECK_THROWS_AS(spec.validate(), Error);
  }
}

TEST_CASE("same spec twice gives identical scenes") {
  const SynthScene a = gen_scene(small_spec(7));
  const SynthScene b = gen_scene(small_spec(7));
  CHECK((a.dtm.data == b.dtm.data).all());
  CHECK((a.dsm.data == b.dsm.data).all());
  CHECK((a.truth.data == b.truth.data).all());
  CHECK((a.weak16.data == b.weak16.data).all());
}

TEST_CASE("zero density leaves the surface bare") {
  SceneSpec spec = small_spec();
  spec.density_per_ha = 0.0;
  const SynthScene s = gen_scene(spec);
  CHECK((s.dsm.data == s.dtm.data).all());
  CHECK((s.truth.data == 0).all());
}

TEST_CASE("scene invariants hold across seeds") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    const SynthScene s = gen_scene(small_spec(seed));
    CHECK((s.dsm.data >= s.dtm.data).all());
    // truth holds only valid non-255 codes
    bool codes_ok = true;
    for (std::int64_t i = 0; i < s.truth.size(); ++i)
      codes_ok = codes_ok && s.truth.data.data()[i] <= kNorwaySpruce;
    CHECK(codes_ok);
    // canopy height bounded by the tallest possible tree
    const FloatGrid chm = compute_chm(s.dsm, s.dtm);
    double hmax = 0.0;
    for (int sp = 1; sp <= 3; ++sp) hmax = std::max(hmax, small_spec(seed).height_ranges[static_cast<std::size_t>(sp)].second);
    CHECK(chm.data.maxCoeff() <= static_cast<float>(hmax) + 1e-4f);
  }
}

TEST_CASE("terrain amplitude stays within the documented bound") {
  const SynthScene s = gen_scene(small_spec(21));
  CHECK(s.dtm.data.maxCoeff() <= 140.0f);
  CHECK(s.dtm.data.minCoeff() >= 60.0f);
}

TEST_CASE("achieved stand density within ten percent for large stands") {
  // Statistical check across seeds: stands of at least 1 ha.
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SceneSpec spec = small_spec(700 + seed);
    spec.extent_m = 320.0;
    spec.stand_scale_m = 110.0;
    std::vector<StandStats> stats;
    gen_scene(spec, &stats);
    for (const auto& st : stats) {
      if (st.type == kBackground || st.area_px < 10000) continue;
      const double achieved = static_cast<double>(st.trees) * 10000.0 / static_cast<double>(st.area_px);
      CHECK(achieved == doctest::Approx(spec.density_per_ha).epsilon(0.10));
      ++checked;
    }
  }
  CHECK(checked >= 20);
}

TEST_CASE("weak labels: majority per cell, 255 where no forest") {
  SceneSpec spec = small_spec(5);
  SynthScene s = gen_scene(spec);
  // Brute-force majority oracle over every 16 m cell.
  const int n16 = s.weak16.width();
  for (int cr = 0; cr < n16; ++cr) {
    for (int cc = 0; cc < n16; ++cc) {
      std::array<int, 4> count{0, 0, 0, 0};
      for (int r = cr * 16; r < (cr + 1) * 16; ++r)
        for (int c = cc * 16; c < (cc + 1) * 16; ++c) ++count[s.truth.at(c, r)];
      std::uint8_t expect;
      if (count[1] + count[2] + count[3] == 0) {
        expect = kUnlabeled;
      } else {
        expect = 0;
        for (std::uint8_t k = 1; k < 4; ++k)
          if (count[k] > count[expect]) expect = k;
      }
      CHECK(s.weak16.at(cc, cr) == expect);
    }
  }
}

TEST_CASE("clearcut injection produces both corruption modes") {
  SceneSpec spec = small_spec(11);
  spec.extent_m = 1024.0;
  spec.stand_scale_m = 200.0;
  spec.clearcut_fraction = 0.15;
  spec.species_mix = {0.1, 0.3, 0.3, 0.3};
  SynthScene s = gen_scene(spec);
  const FloatGrid chm = compute_chm(s.dsm, s.dtm);

  // stale cells: weak16 says species, canopy is flat
  // missing cells: weak16 says background, canopy is tall
  int stale = 0, missing = 0;
  const int n16 = s.weak16.width();
  for (int cr = 0; cr < n16; ++cr) {
    for (int cc = 0; cc < n16; ++cc) {
      double chm_sum = 0.0;
      for (int r = cr * 16; r < (cr + 1) * 16; ++r)
        for (int c = cc * 16; c < (cc + 1) * 16; ++c) chm_sum += chm.at(c, r);
      const double chm_mean = chm_sum / 256.0;
      const std::uint8_t lab = s.weak16.at(cc, cr);
      if (is_forest(lab) && chm_mean < 0.05) ++stale;
      if (lab == kBackground && chm_mean > 3.0) ++missing;
    }
  }
  CHECK(stale > 50);
  CHECK(missing > 50);
}

TEST_CASE("plot sampling") {
  SceneSpec spec = small_spec(13);
  SynthScene s = gen_scene(spec);

  SUBCASE("radius for 250 m2") {
    const auto plots = sample_plots(s, 5, 250.0);
    REQUIRE(plots.size() == 5);
    CHECK(std::sqrt(250.0 / std::numbers::pi) == doctest::Approx(8.9206).epsilon(1e-3));
  }
  SUBCASE("plots are disjoint and inside the extent with margin") {
    const auto plots = sample_plots(s, 40, 250.0);
    const double radius = std::sqrt(250.0 / std::numbers::pi);
    for (std::size_t i = 0; i < plots.size(); ++i) {
      CHECK(plots[i].center_x >= radius);
      CHECK(plots[i].center_x <= spec.extent_m - radius);
      CHECK(plots[i].center_y >= radius);
      CHECK(plots[i].center_y <= spec.extent_m - radius);
      for (std::size_t j = i + 1; j < plots.size(); ++j) {
        const double dx = plots[i].center_x - plots[j].center_x;
        const double dy = plots[i].center_y - plots[j].center_y;
        CHECK(std::sqrt(dx * dx + dy * dy) >= 2 * radius);
      }
    }
  }
  SUBCASE("pixel count inside a 250 m2 circle is 249 +- 4") {
    const auto plots = sample_plots(s, 10, 250.0);
    const double radius = std::sqrt(250.0 / std::numbers::pi);
    for (const auto& p : plots) {
      // brute-force center-in-circle count
      int count = 0;
      for (int r = 0; r < s.truth.height(); ++r)
        for (int c = 0; c < s.truth.width(); ++c) {
          const auto [px, py] = s.truth.georef.pixel_center(c, r);
          const double dx = px - p.center_x, dy = py - p.center_y;
          if (dx * dx + dy * dy < radius * radius) ++count;
        }
      CHECK(count >= 245);
      CHECK(count <= 253);
    }
  }
  SUBCASE("reference is the dominant truth class") {
    const auto plots = sample_plots(s, 30, 250.0);
    const double radius = std::sqrt(250.0 / std::numbers::pi);
    for (const auto& p : plots) {
      std::array<int, 4> count{0, 0, 0, 0};
      for (int r = 0; r < s.truth.height(); ++r)
        for (int c = 0; c < s.truth.width(); ++c) {
          const auto [px, py] = s.truth.georef.pixel_center(c, r);
          const double dx = px - p.center_x, dy = py - p.center_y;
          if (dx * dx + dy * dy < radius * radius) ++count[s.truth.at(c, r)];
        }
      std::uint8_t expect = 0;
      if (count[1] + count[2] + count[3] > 0) {
        expect = 1;
        for (std::uint8_t k = 2; k < 4; ++k)
          if (count[k] > count[expect]) expect = k;
      }
      CHECK(p.reference_class == expect);
    }
  }
  SUBCASE("impossible placement errors out") {
    SceneSpec tiny = small_spec(1);
    tiny.extent_m = 32.0;
    const SynthScene ts = gen_scene(tiny);
    CHECK_THROWS_AS(sample_plots(ts, 100, 250.0), Error);
  }
}

TEST_CASE("plots csv round trip") {
  SceneSpec spec = small_spec(17);
  SynthScene s = gen_scene(spec);
  const auto plots = sample_plots(s, 12, 250.0);
  const std::string path = (std::filesystem::temp_directory_path() / "plots.csv").string();
  save_plots_csv(plots, path);
  const auto back = load_plots_csv(path);
  REQUIRE(back.size() == plots.size());
  for (std::size_t i = 0; i < plots.size(); ++i) {
    CHECK(back[i].id == plots[i].id);
    CHECK(back[i].center_x == doctest::Approx(plots[i].center_x).epsilon(1e-9));
    CHECK(back[i].center_y == doctest::Approx(plots[i].center_y).epsilon(1e-9));
    CHECK(back[i].reference_class == plots[i].reference_class);
  }
}

TEST_SUITE_END();
