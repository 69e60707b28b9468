#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "canopyseg/error.hpp"

namespace canopyseg {

// Dense (batch, channel, height, width) tensor, row-major within each plane.
// Templated on the scalar: float for training, double for the
// finite-difference gradient checks.
template <class T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<std::size_t>(n_) * c_ * h_ * w_, T{}) {
    if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
      fail(Errc::invalid_argument, "Tensor4: negative dimension");
  }

  std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
  std::int64_t plane_size() const { return std::int64_t{h} * w; }

  T* plane(int b, int ch) { return v.data() + (std::int64_t{b} * c + ch) * plane_size(); }
  const T* plane(int b, int ch) const { return v.data() + (std::int64_t{b} * c + ch) * plane_size(); }

  T& at(int b, int ch, int y, int x) { return plane(b, ch)[std::int64_t{y} * w + x]; }
  const T& at(int b, int ch, int y, int x) const { return plane(b, ch)[std::int64_t{y} * w + x]; }

  bool same_shape(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

  void fill(T value) { std::fill(v.begin(), v.end(), value); }

  template <class U>
  Tensor4<U> cast() const {
    Tensor4<U> out(n, c, h, w);
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

template <class T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace canopyseg
