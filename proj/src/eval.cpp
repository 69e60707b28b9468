#include "canopyseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace canopyseg {

const char* const kClassNames[4] = {"Background", "Birch", "Scots pine", "Norway spruce"};

std::uint8_t plot_dominant_class(const LabelGrid& species_map, const PlotRecord& plot) {
  if (plot.area_m2 <= 0.0) fail(Errc::invalid_argument, "plot_dominant_class: plot area must be > 0");
  const double radius = std::sqrt(plot.area_m2 / 3.14159265358979323846);
  const auto& ref = species_map.georef;
  const double x0 = ref.origin_x, y0 = ref.origin_y;
  const double x1 = x0 + ref.width * ref.pixel_size, y1 = y0 - ref.height * ref.pixel_size;
  if (plot.center_x - radius < x0 || plot.center_x + radius > x1 || plot.center_y + radius > y0 ||
      plot.center_y - radius < y1)
    fail(Errc::out_of_bounds, "plot_dominant_class: plot circle outside map extent");

  const int c0 = std::max(0, static_cast<int>((plot.center_x - x0 - radius) / ref.pixel_size) - 1);
  const int c1 = std::min(ref.width - 1, static_cast<int>((plot.center_x - x0 + radius) / ref.pixel_size) + 1);
  const int r0 = std::max(0, static_cast<int>((y0 - plot.center_y - radius) / ref.pixel_size) - 1);
  const int r1 = std::min(ref.height - 1, static_cast<int>((y0 - plot.center_y + radius) / ref.pixel_size) + 1);

  std::array<std::int64_t, 4> count{0, 0, 0, 0};
  std::int64_t total = 0;
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const auto [px, py] = ref.pixel_center(c, r);
      const double dx = px - plot.center_x, dy = py - plot.center_y;
      if (dx * dx + dy * dy >= radius * radius) continue;
      const std::uint8_t code = species_map.at(c, r);
      if (code == kUnlabeled) continue;
      ++count[code];
      ++total;
    }
  }
  if (total == 0) fail(Errc::empty_evaluation, "plot_dominant_class: no countable pixels in the plot");
  if (count[1] + count[2] + count[3] == 0) return kBackground;
  std::uint8_t best = 1;
  for (std::uint8_t k = 2; k < 4; ++k)
    if (count[k] > count[best]) best = k;
  return best;
}

ConfusionMatrix evaluate_plots(const LabelGrid& species_map, const std::vector<PlotRecord>& plots) {
  if (plots.empty()) fail(Errc::invalid_argument, "evaluate_plots: need at least one plot");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < plots.size(); ++i) {
    const auto& plot = plots[i];
    if (plot.reference_class > 3)
      fail(Errc::illegal_label, "evaluate_plots: plot " + std::to_string(i) + " has an invalid reference class");
    try {
      const std::uint8_t pred = plot_dominant_class(species_map, plot);
      ++cm.counts[pred][plot.reference_class];
    } catch (const Error& e) {
      fail(e.code(), "evaluate_plots: plot " + std::to_string(i) + ": " + e.what());
    }
  }
  return cm;
}

void emit_report(const ConfusionMatrix& cm, const std::string& txt_path, const std::string& csv_path) {
  if (cm.total() == 0) fail(Errc::empty_evaluation, "emit_report: empty evaluation");

  {
    std::ostringstream ss;
    ss << std::left << std::setw(16) << "Prediction";
    for (const auto* name : kClassNames) ss << std::right << std::setw(15) << name;
    ss << std::right << std::setw(8) << "Sum" << std::setw(11) << "Precision" << std::setw(7) << "F1" << '\n';
    for (int r = 0; r < 4; ++r) {
      ss << std::left << std::setw(16) << kClassNames[r];
      for (int c = 0; c < 4; ++c) ss << std::right << std::setw(15) << cm.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      ss << std::right << std::setw(8) << cm.row_sum(r) << std::setw(11) << std::fixed
         << std::setprecision(2) << cm.precision(r) << std::setw(7) << cm.f1(r) << '\n';
      ss.unsetf(std::ios::fixed);
      ss << std::setprecision(6);
    }
    ss << std::left << std::setw(16) << "Sum";
    for (int c = 0; c < 4; ++c) ss << std::right << std::setw(15) << cm.col_sum(c);
    ss << std::right << std::setw(8) << cm.total();
    ss << "   OA: " << std::fixed << std::setprecision(2) << cm.overall_accuracy();
    ss << "   Macro F1: " << cm.macro_f1() << '\n';
    ss.unsetf(std::ios::fixed);
    ss << std::setprecision(6);
    ss << std::left << std::setw(16) << "Recall";
    for (int c = 0; c < 4; ++c)
      ss << std::right << std::setw(15) << std::fixed << std::setprecision(2) << cm.recall(c);
    ss << '\n';
    std::ofstream out(txt_path, std::ios::trunc);
    if (!out) fail(Errc::io_failure, "cannot open " + txt_path + " for writing");
    out << ss.str();
    if (!out) fail(Errc::io_failure, "short write to " + txt_path);
  }

  {
    std::ostringstream ss;
    ss << std::setprecision(17);
    for (int r = 0; r < 4; ++r) {
      ss << "counts";
      for (int c = 0; c < 4; ++c) ss << ',' << cm.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      ss << '\n';
    }
    auto metric_row = [&](const char* name, auto fn) {
      ss << name;
      for (int c = 0; c < 4; ++c) ss << ',' << fn(c);
      ss << '\n';
    };
    metric_row("precision", [&](int c) { return cm.precision(c); });
    metric_row("recall", [&](int c) { return cm.recall(c); });
    metric_row("f1", [&](int c) { return cm.f1(c); });
    ss << "oa," << cm.overall_accuracy() << '\n';
    ss << "macro_f1," << cm.macro_f1() << '\n';
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) fail(Errc::io_failure, "cannot open " + csv_path + " for writing");
    out << ss.str();
    if (!out) fail(Errc::io_failure, "short write to " + csv_path);
  }
}

ConfusionMatrix load_report_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io_failure, "cannot open " + path);
  ConfusionMatrix cm;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    if (line.rfind("counts,", 0) != 0) continue;
    if (row >= 4) fail(Errc::dimension_mismatch, path + ": too many counts rows");
    std::istringstream ss(line.substr(7));
    char comma;
    for (int c = 0; c < 4; ++c) {
      if (c > 0 && !(ss >> comma)) fail(Errc::truncated_payload, path + ": malformed counts row");
      if (!(ss >> cm.counts[static_cast<std::size_t>(row)][static_cast<std::size_t>(c)]))
        fail(Errc::truncated_payload, path + ": malformed counts row");
    }
    ++row;
  }
  if (row != 4) fail(Errc::truncated_payload, path + ": expected 4 counts rows");
  return cm;
}

}  // namespace canopyseg
