#include "canopyseg/raster_io.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

namespace canopyseg {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'R', '1'};

template <class T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

template <class T>
T take(const std::string& buf, std::size_t& off, const std::string& path) {
  if (off + sizeof(T) > buf.size())
    fail(Errc::truncated_payload, path + ": truncated header/payload");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_failure, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_all(const std::string& path, const std::string& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io_failure, "cannot open " + path + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(Errc::io_failure, "short write to " + path);
}

void put_header(std::string& buf, const GeoRef& ref, std::uint8_t kind) {
  buf.append(kMagic, 4);
  put<std::uint8_t>(buf, kind);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ref.width));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ref.height));
  put<double>(buf, ref.origin_x);
  put<double>(buf, ref.origin_y);
  put<double>(buf, ref.pixel_size);
}

}  // namespace

void save_raster(const FloatGrid& g, const std::string& path) {
  std::string buf;
  buf.reserve(41 + static_cast<std::size_t>(g.size()) * 4);
  put_header(buf, g.georef, 0);
  put<float>(buf, g.nodata ? *g.nodata : std::numeric_limits<float>::quiet_NaN());
  buf.append(reinterpret_cast<const char*>(g.data.data()),
             static_cast<std::size_t>(g.size()) * sizeof(float));
  write_all(path, buf);
}

void save_raster(const LabelGrid& g, const std::string& path) {
  for (std::int64_t i = 0; i < g.size(); ++i)
    if (!valid_label(g.data.data()[i]))
      fail(Errc::illegal_label, path + ": label grid holds an illegal code");
  std::string buf;
  buf.reserve(37 + static_cast<std::size_t>(g.size()));
  put_header(buf, g.georef, 1);
  buf.append(reinterpret_cast<const char*>(g.data.data()), static_cast<std::size_t>(g.size()));
  write_all(path, buf);
}

AnyGrid load_raster(const std::string& path) {
  const std::string buf = read_all(path);
  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0)
    fail(Errc::bad_magic, path + ": not a CSR1 raster");
  std::size_t off = 4;
  const auto kind = take<std::uint8_t>(buf, off, path);
  if (kind > 1) fail(Errc::bad_magic, path + ": unknown raster kind byte");
  GeoRef ref;
  ref.width = static_cast<int>(take<std::uint32_t>(buf, off, path));
  ref.height = static_cast<int>(take<std::uint32_t>(buf, off, path));
  ref.origin_x = take<double>(buf, off, path);
  ref.origin_y = take<double>(buf, off, path);
  ref.pixel_size = take<double>(buf, off, path);
  if (ref.width < 1 || ref.height < 1 || ref.pixel_size <= 0.0)
    fail(Errc::dimension_mismatch, path + ": illegal raster dimensions");
  const std::size_t n = static_cast<std::size_t>(ref.width) * static_cast<std::size_t>(ref.height);

  if (kind == 0) {
    const float nodata = take<float>(buf, off, path);
    if (buf.size() - off < n * 4) fail(Errc::truncated_payload, path + ": payload shorter than header promises");
    if (buf.size() - off > n * 4) fail(Errc::dimension_mismatch, path + ": payload longer than header promises");
    FloatGrid g(ref);
    if (!std::isnan(nodata)) g.nodata = nodata;
    std::memcpy(g.data.data(), buf.data() + off, n * 4);
    return g;
  }

  if (buf.size() - off < n) fail(Errc::truncated_payload, path + ": payload shorter than header promises");
  if (buf.size() - off > n) fail(Errc::dimension_mismatch, path + ": payload longer than header promises");
  LabelGrid g(ref);
  std::memcpy(g.data.data(), buf.data() + off, n);
  for (std::size_t i = 0; i < n; ++i)
    if (!valid_label(g.data.data()[i])) fail(Errc::illegal_label, path + ": illegal label code in payload");
  return g;
}

FloatGrid load_float_raster(const std::string& path) {
  AnyGrid g = load_raster(path);
  if (auto* f = std::get_if<FloatGrid>(&g)) return std::move(*f);
  fail(Errc::dimension_mismatch, path + ": expected a float raster, found labels");
}

LabelGrid load_label_raster(const std::string& path) {
  AnyGrid g = load_raster(path);
  if (auto* l = std::get_if<LabelGrid>(&g)) return std::move(*l);
  fail(Errc::dimension_mismatch, path + ": expected a label raster, found floats");
}

void save_ascii_grid(const FloatGrid& g, const std::string& path) {
  std::ostringstream ss;
  ss.precision(9);
  const double yll = g.georef.origin_y - g.georef.pixel_size * g.height();
  ss << "ncols " << g.width() << "\n"
     << "nrows " << g.height() << "\n"
     << "xllcorner " << g.georef.origin_x << "\n"
     << "yllcorner " << yll << "\n"
     << "cellsize " << g.georef.pixel_size << "\n"
     << "NODATA_value " << (g.nodata ? *g.nodata : -9999.0f) << "\n";
  for (int r = 0; r < g.height(); ++r) {
    for (int c = 0; c < g.width(); ++c) {
      if (c) ss << ' ';
      ss << g.at(c, r);
    }
    ss << '\n';
  }
  write_all(path, ss.str());
}

FloatGrid load_ascii_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io_failure, "cannot open " + path);
  GeoRef ref;
  double yll = 0.0, nodata = -9999.0;
  bool saw_nodata = false;
  // Header: key value lines until the first purely numeric token.
  for (int i = 0; i < 6; ++i) {
    std::string key;
    if (!(in >> key)) fail(Errc::truncated_payload, path + ": ASCII header ends early");
    double v;
    if (!(in >> v)) fail(Errc::truncated_payload, path + ": ASCII header value missing");
    if (key == "ncols") ref.width = static_cast<int>(v);
    else if (key == "nrows") ref.height = static_cast<int>(v);
    else if (key == "xllcorner") ref.origin_x = v;
    else if (key == "yllcorner") yll = v;
    else if (key == "cellsize") ref.pixel_size = v;
    else if (key == "NODATA_value") { nodata = v; saw_nodata = true; }
    else fail(Errc::bad_magic, path + ": unexpected ASCII header key '" + key + "'");
  }
  if (ref.width < 1 || ref.height < 1 || ref.pixel_size <= 0)
    fail(Errc::dimension_mismatch, path + ": illegal ASCII grid dimensions");
  ref.origin_y = yll + ref.pixel_size * ref.height;
  FloatGrid g(ref);
  if (saw_nodata) g.nodata = static_cast<float>(nodata);
  for (std::int64_t i = 0; i < g.size(); ++i) {
    float v;
    if (!(in >> v)) fail(Errc::truncated_payload, path + ": ASCII payload shorter than ncols*nrows");
    g.data.data()[i] = v;
  }
  float extra;
  if (in >> extra) fail(Errc::dimension_mismatch, path + ": ASCII payload longer than ncols*nrows");
  return g;
}

std::uint64_t hash_file(const std::string& path) {
  const std::string buf = read_all(path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : buf) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool file_exists(const std::string& path) {
  std::error_code ec;
  return std::filesystem::exists(path, ec);
}

}  // namespace canopyseg
