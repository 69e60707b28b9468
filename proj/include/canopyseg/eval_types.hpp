#pragma once

#include <array>
#include <cstdint>

namespace canopyseg {

// Circular ground-truth plot.
struct PlotRecord {
  int id = 0;
  double center_x = 0.0;  // map meters
  double center_y = 0.0;
  double area_m2 = 250.0;
  std::uint8_t reference_class = 0;  // 0..3
};

}  // namespace canopyseg
