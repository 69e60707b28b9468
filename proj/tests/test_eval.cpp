#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "canopyseg/eval.hpp"
#include "canopyseg/rng.hpp"

using namespace canopyseg;

namespace {

// Published reference counts (rows = predictions, columns = reference).
ConfusionMatrix reference_matrix() {
  return ConfusionMatrix::from_counts({{{352, 14, 23, 23}, {9, 64, 15, 36}, {6, 17, 153, 43}, {4, 26, 34, 187}}});
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

// Exact-rational oracle for the derived metrics: integer numerators and
// denominators, evaluated in long double only at the final division.
struct RationalMetricOracle {
  const ConfusionMatrix& m;
  double precision(int c) const {
    const std::int64_t num = m.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    const std::int64_t den = m.row_sum(c);
    return den == 0 ? 0.0 : static_cast<double>(static_cast<long double>(num) / den);
  }
  double recall(int c) const {
    const std::int64_t num = m.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    const std::int64_t den = m.col_sum(c);
    return den == 0 ? 0.0 : static_cast<double>(static_cast<long double>(num) / den);
  }
  double f1(int c) const {
    // 2 d / (r + s) with d = diag, r = row sum, s = col sum (exact integers)
    const std::int64_t d = m.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    const std::int64_t rs = m.row_sum(c) + m.col_sum(c);
    return rs == 0 ? 0.0 : static_cast<double>(2.0L * d / rs);
  }
};

}  // namespace

TEST_SUITE_BEGIN("eval");

TEST_CASE("published confusion matrix reproduces the reported metrics at 2 decimals") {
  const ConfusionMatrix cm = reference_matrix();
  CHECK(cm.row_sum(0) == 412);
  CHECK(cm.row_sum(1) == 124);
  CHECK(cm.row_sum(2) == 219);
  CHECK(cm.row_sum(3) == 251);
  CHECK(cm.total() == 1006);

  const double precision[4] = {0.85, 0.52, 0.70, 0.75};
  const double recall[4] = {0.95, 0.53, 0.68, 0.65};
  const double f1[4] = {0.90, 0.52, 0.69, 0.69};
  for (int c = 0; c < 4; ++c) {
    CHECK(round2(cm.precision(c)) == doctest::Approx(precision[c]));
    CHECK(round2(cm.recall(c)) == doctest::Approx(recall[c]));
    CHECK(round2(cm.f1(c)) == doctest::Approx(f1[c]));
  }
  CHECK(round2(cm.overall_accuracy()) == doctest::Approx(0.75));
  CHECK(round2(cm.macro_f1()) == doctest::Approx(0.70));
}

TEST_CASE("metric formulas match the exact-rational oracle on random matrices") {
  Rng rng(123);
  for (int trial = 0; trial < 100; ++trial) {
    ConfusionMatrix cm;
    for (auto& row : cm.counts)
      for (auto& v : row) v = static_cast<std::int64_t>(rng.uniform_index(500));
    const RationalMetricOracle oracle{cm};
    double macro = 0.0;
    for (int c = 0; c < 4; ++c) {
      CHECK(std::abs(cm.precision(c) - oracle.precision(c)) <= 1e-9);
      CHECK(std::abs(cm.recall(c) - oracle.recall(c)) <= 1e-9);
      CHECK(std::abs(cm.f1(c) - oracle.f1(c)) <= 1e-9);
      macro += oracle.f1(c);
    }
    CHECK(std::abs(cm.macro_f1() - macro / 4.0) <= 1e-9);
  }
}

TEST_CASE("perfect prediction gives a diagonal matrix with unit scores") {
  LabelGrid map(GeoRef{0.0, 100.0, 1.0, 100, 100});
  for (int r = 0; r < 100; ++r)
    for (int c = 0; c < 100; ++c) map.at(c, r) = static_cast<std::uint8_t>((c / 25) % 4);
  std::vector<PlotRecord> plots;
  for (int i = 0; i < 4; ++i) {
    PlotRecord p;
    p.id = i;
    p.center_x = 12.5 + 25.0 * i;
    p.center_y = 50.0;
    p.area_m2 = 250.0;
    p.reference_class = static_cast<std::uint8_t>(i);
    plots.push_back(p);
  }
  const ConfusionMatrix cm = evaluate_plots(map, plots);
  CHECK(cm.total() == 4);
  CHECK(cm.overall_accuracy() == doctest::Approx(1.0));
  CHECK(cm.macro_f1() == doctest::Approx(1.0));
}

TEST_CASE("plot dominance rules") {
  LabelGrid map(GeoRef{0.0, 60.0, 1.0, 60, 60}, kBackground);
  PlotRecord plot;
  plot.center_x = 30.0;
  plot.center_y = 30.0;
  plot.area_m2 = 250.0;

  SUBCASE("uniform spruce plot") {
    for (int r = 0; r < 60; ++r)
      for (int c = 0; c < 60; ++c) map.at(c, r) = kNorwaySpruce;
    CHECK(plot_dominant_class(map, plot) == kNorwaySpruce);
  }
  SUBCASE("majority species wins and flipping proportions flips the result") {
    // left half pine, right half spruce; shift the split to bias proportions
    for (int r = 0; r < 60; ++r)
      for (int c = 0; c < 60; ++c) map.at(c, r) = c < 31 ? kScotsPine : kNorwaySpruce;
    CHECK(plot_dominant_class(map, plot) == kScotsPine);
    for (int r = 0; r < 60; ++r)
      for (int c = 0; c < 60; ++c) map.at(c, r) = c < 29 ? kScotsPine : kNorwaySpruce;
    CHECK(plot_dominant_class(map, plot) == kNorwaySpruce);
  }
  SUBCASE("species presence beats background") {
    // a 49-pixel birch pocket in an otherwise background plot
    for (int r = 26; r < 33; ++r)
      for (int c = 26; c < 33; ++c) map.at(c, r) = kBirch;
    CHECK(plot_dominant_class(map, plot) == kBirch);
  }
  SUBCASE("255 pixels are excluded from the counts") {
    for (int r = 0; r < 60; ++r)
      for (int c = 0; c < 60; ++c) map.at(c, r) = kUnlabeled;
    map.at(30, 30) = kScotsPine;
    CHECK(plot_dominant_class(map, plot) == kScotsPine);
  }
  SUBCASE("all-255 plot is an error") {
    for (int r = 0; r < 60; ++r)
      for (int c = 0; c < 60; ++c) map.at(c, r) = kUnlabeled;
    try {
      plot_dominant_class(map, plot);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::empty_evaluation);
    }
  }
  SUBCASE("plot outside the extent is an error") {
    plot.center_x = 2.0;
    try {
      plot_dominant_class(map, plot);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::out_of_bounds);
    }
  }
}

TEST_CASE("plot dominance agrees with a brute-force oracle on random maps") {
  Rng rng(321);
  for (int trial = 0; trial < 40; ++trial) {
    LabelGrid map(GeoRef{0.0, 64.0, 1.0, 64, 64});
    for (std::int64_t i = 0; i < map.size(); ++i) {
      const auto r = rng.uniform_index(5);
      map.data.data()[i] = r == 4 ? kUnlabeled : static_cast<std::uint8_t>(r);
    }
    PlotRecord plot;
    plot.area_m2 = 50.0 + rng.uniform() * 400.0;
    const double radius = std::sqrt(plot.area_m2 / 3.14159265358979323846);
    plot.center_x = radius + rng.uniform() * (64.0 - 2 * radius);
    plot.center_y = radius + rng.uniform() * (64.0 - 2 * radius);

    std::array<std::int64_t, 4> count{0, 0, 0, 0};
    std::int64_t countable = 0;
    for (int r = 0; r < 64; ++r)
      for (int c = 0; c < 64; ++c) {
        const auto [px, py] = map.georef.pixel_center(c, r);
        const double dx = px - plot.center_x, dy = py - plot.center_y;
        if (dx * dx + dy * dy >= radius * radius) continue;
        if (map.at(c, r) == kUnlabeled) continue;
        ++count[map.at(c, r)];
        ++countable;
      }
    if (countable == 0) continue;
    std::uint8_t expect = 0;
    if (count[1] + count[2] + count[3] > 0) {
      expect = 1;
      for (std::uint8_t k = 2; k < 4; ++k)
        if (count[k] > count[expect]) expect = k;
    }
    CHECK(plot_dominant_class(map, plot) == expect);
  }
}

TEST_CASE("evaluate_plots total equals the evaluated plot count and errors carry indices") {
  LabelGrid map(GeoRef{0.0, 64.0, 1.0, 64, 64}, kBirch);
  std::vector<PlotRecord> plots;
  for (int i = 0; i < 7; ++i) {
    PlotRecord p;
    p.id = i;
    p.center_x = 16.0 + 4.0 * i;
    p.center_y = 32.0;
    p.area_m2 = 100.0;
    p.reference_class = kBirch;
    plots.push_back(p);
  }
  CHECK(evaluate_plots(map, plots).total() == 7);

  plots[3].center_x = -5.0;
  try {
    evaluate_plots(map, plots);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("plot 3") != std::string::npos);
  }
}

TEST_CASE("report emission") {
  namespace fsys = std::filesystem;
  const std::string txt = (fsys::temp_directory_path() / "report.txt").string();
  const std::string csv = (fsys::temp_directory_path() / "report.csv").string();

  SUBCASE("zero matrix is an error") {
    ConfusionMatrix zero;
    try {
      emit_report(zero, txt, csv);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::empty_evaluation);
    }
  }
  SUBCASE("text table carries the rounded reference metrics") {
    emit_report(reference_matrix(), txt, csv);
    std::ifstream in(txt);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(all.find("352") != std::string::npos);
    CHECK(all.find("OA: 0.75") != std::string::npos);
    CHECK(all.find("Macro F1: 0.70") != std::string::npos);
    CHECK(all.find("0.95") != std::string::npos);
  }
  SUBCASE("csv reloads to identical counts") {
    const ConfusionMatrix cm = reference_matrix();
    emit_report(cm, txt, csv);
    const ConfusionMatrix back = load_report_csv(csv);
    CHECK(back.counts == cm.counts);
  }
}

TEST_SUITE_END();
