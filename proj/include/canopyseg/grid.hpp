#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "canopyseg/error.hpp"

namespace canopyseg {

// Class codes, fixed in reporting row order.
enum : std::uint8_t {
  kBackground = 0,
  kBirch = 1,
  kScotsPine = 2,
  kNorwaySpruce = 3,
  kUnlabeled = 255,
};
constexpr int kNumClasses = 4;

inline bool valid_label(std::uint8_t c) { return c <= kNorwaySpruce || c == kUnlabeled; }
inline bool is_forest(std::uint8_t c) { return c >= kBirch && c <= kNorwaySpruce; }

// Square-pixel georeferencing; (origin_x, origin_y) is the map position of the
// top-left corner, rows grow southwards.
struct GeoRef {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double pixel_size = 1.0;
  int width = 0;
  int height = 0;

  bool operator==(const GeoRef&) const = default;

  // Map coordinates of the center of pixel (col, row).
  std::pair<double, double> pixel_center(int col, int row) const {
    return {origin_x + (col + 0.5) * pixel_size, origin_y - (row + 0.5) * pixel_size};
  }

  void validate() const {
    if (pixel_size <= 0.0) fail(Errc::invalid_argument, "GeoRef: pixel_size must be > 0");
    if (width < 1 || height < 1) fail(Errc::invalid_argument, "GeoRef: width/height must be >= 1");
  }
};

// Dense row-major raster templated on the sample scalar. The payload is an
// Eigen array so kernels and tests can use expression syntax directly.
template <class T>
struct Grid {
  using Array = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  GeoRef georef;
  Array data;
  std::optional<T> nodata;

  Grid() = default;
  Grid(GeoRef g, T fill_value = T{}) : georef(g) {
    georef.validate();
    data = Array::Constant(g.height, g.width, fill_value);
  }

  int width() const { return georef.width; }
  int height() const { return georef.height; }
  std::int64_t size() const { return std::int64_t{georef.width} * georef.height; }

  T& at(int col, int row) { return data(row, col); }
  const T& at(int col, int row) const { return data(row, col); }

  bool same_extent(const GeoRef& other) const {
    return georef.origin_x == other.origin_x && georef.origin_y == other.origin_y &&
           georef.pixel_size * georef.width == other.pixel_size * other.width &&
           georef.pixel_size * georef.height == other.pixel_size * other.height;
  }
};

using FloatGrid = Grid<float>;
using LabelGrid = Grid<std::uint8_t>;

// Sub-grid copy; origin shifts by (col0, row0) * pixel_size.
template <class T>
Grid<T> crop(const Grid<T>& g, int col0, int row0, int w, int h) {
  if (col0 < 0 || row0 < 0 || w < 1 || h < 1 || col0 + w > g.width() || row0 + h > g.height())
    fail(Errc::out_of_bounds, "crop: rectangle outside grid bounds");
  GeoRef ref = g.georef;
  ref.origin_x += col0 * ref.pixel_size;
  ref.origin_y -= row0 * ref.pixel_size;
  ref.width = w;
  ref.height = h;
  Grid<T> out(ref);
  out.nodata = g.nodata;
  out.data = g.data.block(row0, col0, h, w);
  return out;
}

}  // namespace canopyseg
