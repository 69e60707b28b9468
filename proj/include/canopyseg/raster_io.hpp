#pragma once

#include <string>
#include <variant>

#include "canopyseg/grid.hpp"

namespace canopyseg {

// Binary raster container ".csr" (little-endian):
//   magic "CSR1" | kind u8 (0 = float, 1 = label) | width u32 | height u32 |
//   origin_x f64 | origin_y f64 | pixel_size f64 | nodata f32 (float kind only,
//   NaN = unset) | row-major payload (f32 or u8).
void save_raster(const FloatGrid& g, const std::string& path);
void save_raster(const LabelGrid& g, const std::string& path);

using AnyGrid = std::variant<FloatGrid, LabelGrid>;
AnyGrid load_raster(const std::string& path);
FloatGrid load_float_raster(const std::string& path);
LabelGrid load_label_raster(const std::string& path);

// Plain-text ESRI-style ASCII grid for interoperability. Header keys:
// ncols nrows xllcorner yllcorner cellsize NODATA_value, then row-major values
// starting with the northernmost row.
void save_ascii_grid(const FloatGrid& g, const std::string& path);
FloatGrid load_ascii_grid(const std::string& path);

// Content hash used by the pipeline manifest (FNV-1a 64 over the file bytes).
std::uint64_t hash_file(const std::string& path);
bool file_exists(const std::string& path);

}  // namespace canopyseg
