#pragma once

#include <array>
#include <string>
#include <vector>

#include "canopyseg/eval_types.hpp"
#include "canopyseg/grid.hpp"

namespace canopyseg {

// 4x4 counts, rows = predictions, columns = reference, plus every derived
// metric in the reporting table.
struct ConfusionMatrix {
  std::array<std::array<std::int64_t, 4>, 4> counts{};

  static ConfusionMatrix from_counts(const std::array<std::array<std::int64_t, 4>, 4>& c) {
    ConfusionMatrix m;
    m.counts = c;
    return m;
  }

  std::int64_t total() const {
    std::int64_t s = 0;
    for (const auto& row : counts)
      for (std::int64_t v : row) s += v;
    return s;
  }
  std::int64_t row_sum(int r) const {
    std::int64_t s = 0;
    for (std::int64_t v : counts[static_cast<std::size_t>(r)]) s += v;
    return s;
  }
  std::int64_t col_sum(int c) const {
    std::int64_t s = 0;
    for (const auto& row : counts) s += row[static_cast<std::size_t>(c)];
    return s;
  }
  double precision(int c) const {
    const std::int64_t rs = row_sum(c);
    return rs == 0 ? 0.0 : static_cast<double>(counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)]) / static_cast<double>(rs);
  }
  double recall(int c) const {
    const std::int64_t cs = col_sum(c);
    return cs == 0 ? 0.0 : static_cast<double>(counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)]) / static_cast<double>(cs);
  }
  double f1(int c) const {
    const double p = precision(c), r = recall(c);
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
  double overall_accuracy() const {
    const std::int64_t t = total();
    if (t == 0) return 0.0;
    std::int64_t diag = 0;
    for (int i = 0; i < 4; ++i) diag += counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
    return static_cast<double>(diag) / static_cast<double>(t);
  }
  double macro_f1() const { return (f1(0) + f1(1) + f1(2) + f1(3)) / 4.0; }
};

// Dominant class inside a circular plot: pixel centers strictly inside the
// radius count; any species presence beats background; ties go to the lowest
// code; 255 pixels are excluded.
std::uint8_t plot_dominant_class(const LabelGrid& species_map, const PlotRecord& plot);

ConfusionMatrix evaluate_plots(const LabelGrid& species_map, const std::vector<PlotRecord>& plots);

// Writes the aligned text table and a machine-readable CSV (full precision).
void emit_report(const ConfusionMatrix& cm, const std::string& txt_path, const std::string& csv_path);

// Reloads counts and metrics from the CSV written by emit_report.
ConfusionMatrix load_report_csv(const std::string& path);

extern const char* const kClassNames[4];

}  // namespace canopyseg
