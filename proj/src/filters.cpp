#include "canopyseg/filters.hpp"

#include <algorithm>
#include <cmath>

#include "canopyseg/parallel.hpp"

namespace canopyseg {

FloatGrid compute_chm(const FloatGrid& dsm, const FloatGrid& dtm) {
  if (!(dsm.georef == dtm.georef)) fail(Errc::georef_mismatch, "compute_chm: DSM and DTM georefs differ");
  FloatGrid chm(dsm.georef);
  if (dsm.nodata || dtm.nodata) chm.nodata = dsm.nodata ? *dsm.nodata : *dtm.nodata;
  const int w = dsm.width(), h = dsm.height();
  parallel_for(h, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r) {
      for (int c = 0; c < w; ++c) {
        const float s = dsm.at(c, static_cast<int>(r));
        const float t = dtm.at(c, static_cast<int>(r));
        if ((dsm.nodata && s == *dsm.nodata) || (dtm.nodata && t == *dtm.nodata)) {
          chm.at(c, static_cast<int>(r)) = *chm.nodata;
        } else {
          chm.at(c, static_cast<int>(r)) = std::max(s - t, 0.0f);
        }
      }
    }
  });
  return chm;
}

std::vector<float> gaussian_kernel(double sigma) {
  if (sigma <= 0.0) fail(Errc::invalid_argument, "gaussian kernel: sigma must be > 0");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<float> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * (static_cast<double>(i) * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = static_cast<float>(w);
    sum += w;
  }
  for (auto& v : k) v = static_cast<float>(v / sum);
  return k;
}

namespace {

// One separable pass along rows of `src` into `dst` (both row-major h x w).
void blur_rows(const float* src, float* dst, int w, int h, const std::vector<float>& k) {
  const int radius = static_cast<int>(k.size() / 2);
  parallel_for(h, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r) {
      const float* row = src + r * w;
      float* out = dst + r * w;
      for (int c = 0; c < w; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += static_cast<double>(k[static_cast<std::size_t>(i + radius)]) * row[reflect_index(c + i, w)];
        out[c] = static_cast<float>(acc);
      }
    }
  });
}

void blur_cols(const float* src, float* dst, int w, int h, const std::vector<float>& k) {
  const int radius = static_cast<int>(k.size() / 2);
  parallel_for(h, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r) {
      float* out = dst + r * w;
      for (int c = 0; c < w; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += static_cast<double>(k[static_cast<std::size_t>(i + radius)]) *
                 src[static_cast<std::int64_t>(reflect_index(static_cast<int>(r) + i, h)) * w + c];
        out[c] = static_cast<float>(acc);
      }
    }
  });
}

}  // namespace

FloatGrid gaussian_blur(const FloatGrid& g, double sigma) {
  const auto k = gaussian_kernel(sigma);
  FloatGrid tmp(g.georef), out(g.georef);
  out.nodata = g.nodata;
  blur_rows(g.data.data(), tmp.data.data(), g.width(), g.height(), k);
  blur_cols(tmp.data.data(), out.data.data(), g.width(), g.height(), k);
  return out;
}

FloatGrid median_filter(const FloatGrid& g, int window) {
  if (window < 1 || window % 2 == 0) fail(Errc::invalid_argument, "median_filter: window must be odd and >= 1");
  if (window == 1) return g;
  const int radius = window / 2;
  const int w = g.width(), h = g.height();
  FloatGrid out(g.georef);
  out.nodata = g.nodata;
  const std::size_t n = static_cast<std::size_t>(window) * static_cast<std::size_t>(window);
  parallel_for(h, [&](std::int64_t r0, std::int64_t r1) {
    std::vector<float> buf(n);
    for (std::int64_t r = r0; r < r1; ++r) {
      for (int c = 0; c < w; ++c) {
        std::size_t i = 0;
        for (int dy = -radius; dy <= radius; ++dy) {
          const float* row = g.data.data() + std::int64_t{reflect_index(static_cast<int>(r) + dy, h)} * w;
          for (int dx = -radius; dx <= radius; ++dx) buf[i++] = row[reflect_index(c + dx, w)];
        }
        auto mid = buf.begin() + static_cast<std::ptrdiff_t>(n / 2);
        std::nth_element(buf.begin(), mid, buf.end());
        out.at(c, static_cast<int>(r)) = *mid;
      }
    }
  });
  return out;
}

}  // namespace canopyseg
