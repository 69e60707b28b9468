#pragma once

// Implementation of the templated network layers; included by net.hpp.

#include <algorithm>

namespace canopyseg {

inline int reflect3(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

// ---------------------------------------------------------------------------
// Convolution (im2col + GEMM)

namespace detail {

// Patch row for pixel (y, x): values x[cin, y+ky-off, x+kx-off] in (cin, ky,
// kx) order, reflected at borders.
template <class T>
void im2col(const Tensor4<T>& x, int b, int k, std::vector<T>& p) {
  const int hh = x.h, ww = x.w, cin = x.c;
  const int off = k / 2;
  const std::int64_t cols = static_cast<std::int64_t>(cin) * k * k;
  p.resize(static_cast<std::size_t>(x.plane_size() * cols));
  if (k == 1) {
    // columns are just the channel values
    for (int ci = 0; ci < cin; ++ci) {
      const T* src = x.plane(b, ci);
      T* dst = p.data();
      for (std::int64_t i = 0; i < x.plane_size(); ++i) dst[i * cols + ci] = src[i];
    }
    return;
  }
  for (int y = 0; y < hh; ++y) {
    for (int xx = 0; xx < ww; ++xx) {
      T* row = p.data() + (static_cast<std::int64_t>(y) * ww + xx) * cols;
      std::int64_t j = 0;
      for (int ci = 0; ci < cin; ++ci) {
        const T* src = x.plane(b, ci);
        for (int ky = 0; ky < k; ++ky) {
          const int sy = reflect3(y + ky - off, hh);
          const T* srow = src + static_cast<std::int64_t>(sy) * ww;
          for (int kx = 0; kx < k; ++kx) row[j++] = srow[reflect3(xx + kx - off, ww)];
        }
      }
    }
  }
}

}  // namespace detail

template <class T>
Tensor4<T> conv_forward(const Tensor4<T>& x, const NamedTensor<T>& w, const NamedTensor<T>& b, int k) {
  const int cout = w.dims[0], cin = w.dims[1];
  if (cin != x.c) fail(Errc::dimension_mismatch, "conv: input channels do not match " + w.name);
  Tensor4<T> y(x.n, cout, x.h, x.w);
  const std::int64_t hw = x.plane_size();
  const std::int64_t cols = static_cast<std::int64_t>(cin) * k * k;
  std::vector<T> pbuf;
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> ymat(hw, cout);
  for (int bb = 0; bb < x.n; ++bb) {
    detail::im2col(x, bb, k, pbuf);
    ConstMatMap<T> P(pbuf.data(), hw, cols);
    ConstMatMap<T> W(w.v.data(), cout, cols);
    ymat.noalias() = P * W.transpose();
    for (int co = 0; co < cout; ++co) {
      T* dst = y.plane(bb, co);
      const T bias = b.v[static_cast<std::size_t>(co)];
      for (std::int64_t i = 0; i < hw; ++i) dst[i] = ymat(i, co) + bias;
    }
  }
  return y;
}

template <class T>
Tensor4<T> conv_backward(const Tensor4<T>& x, const NamedTensor<T>& w, int k, const Tensor4<T>& dy,
                         NamedTensor<T>& dw, NamedTensor<T>& db) {
  const int cout = w.dims[0], cin = w.dims[1];
  const int off = k / 2;
  const std::int64_t hw = x.plane_size();
  const std::int64_t cols = static_cast<std::int64_t>(cin) * k * k;
  Tensor4<T> dx(x.n, x.c, x.h, x.w);
  std::vector<T> pbuf;
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dymat(hw, cout), dp(hw, cols);
  MatMap<T> dW(dw.v.data(), cout, cols);
  ConstMatMap<T> W(w.v.data(), cout, cols);
  for (int bb = 0; bb < x.n; ++bb) {
    for (int co = 0; co < cout; ++co) {
      const T* src = dy.plane(bb, co);
      for (std::int64_t i = 0; i < hw; ++i) dymat(i, co) = src[i];
      db.v[static_cast<std::size_t>(co)] += dymat.col(co).sum();
    }
    detail::im2col(x, bb, k, pbuf);
    ConstMatMap<T> P(pbuf.data(), hw, cols);
    dW.noalias() += dymat.transpose() * P;
    dp.noalias() = dymat * W;
    // Scatter patch gradients back through the (reflected) gather.
    for (int y = 0; y < x.h; ++y) {
      for (int xx = 0; xx < x.w; ++xx) {
        const std::int64_t row = static_cast<std::int64_t>(y) * x.w + xx;
        std::int64_t j = 0;
        for (int ci = 0; ci < cin; ++ci) {
          T* dst = dx.plane(bb, ci);
          for (int ky = 0; ky < k; ++ky) {
            const int sy = reflect3(y + ky - off, x.h);
            T* drow = dst + static_cast<std::int64_t>(sy) * x.w;
            for (int kx = 0; kx < k; ++kx) drow[reflect3(xx + kx - off, x.w)] += dp(row, j++);
          }
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Instance normalization

template <class T>
Tensor4<T> instnorm_forward(const Tensor4<T>& x, const NamedTensor<T>& gamma, const NamedTensor<T>& beta,
                            T eps, NormTape<T>& tape) {
  Tensor4<T> y(x.n, x.c, x.h, x.w);
  tape.xhat = Tensor4<T>(x.n, x.c, x.h, x.w);
  tape.inv_std.assign(static_cast<std::size_t>(x.n) * x.c, T{});
  tape.batch_mean.assign(static_cast<std::size_t>(x.n) * x.c, T{});
  tape.batch_var.assign(static_cast<std::size_t>(x.n) * x.c, T{});
  const std::int64_t hw = x.plane_size();
  for (int bb = 0; bb < x.n; ++bb) {
    for (int ci = 0; ci < x.c; ++ci) {
      const T* src = x.plane(bb, ci);
      double sum = 0.0;
      for (std::int64_t i = 0; i < hw; ++i) sum += static_cast<double>(src[i]);
      const double mean = sum / static_cast<double>(hw);
      double ss = 0.0;
      for (std::int64_t i = 0; i < hw; ++i) {
        const double d = static_cast<double>(src[i]) - mean;
        ss += d * d;
      }
      const double var = ss / static_cast<double>(hw);
      const T inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      const std::size_t bc = static_cast<std::size_t>(bb) * x.c + ci;
      tape.inv_std[bc] = inv;
      tape.batch_mean[bc] = static_cast<T>(mean);
      tape.batch_var[bc] = static_cast<T>(var);
      const T g = gamma.v[static_cast<std::size_t>(ci)], be = beta.v[static_cast<std::size_t>(ci)];
      T* xh = tape.xhat.plane(bb, ci);
      T* dst = y.plane(bb, ci);
      for (std::int64_t i = 0; i < hw; ++i) {
        xh[i] = static_cast<T>((static_cast<double>(src[i]) - mean) * static_cast<double>(inv));
        dst[i] = g * xh[i] + be;
      }
    }
  }
  return y;
}

template <class T>
Tensor4<T> instnorm_forward_running(const Tensor4<T>& x, const NamedTensor<T>& gamma,
                                    const NamedTensor<T>& beta, const NamedTensor<T>& run_mean,
                                    const NamedTensor<T>& run_var, T eps) {
  Tensor4<T> y(x.n, x.c, x.h, x.w);
  const std::int64_t hw = x.plane_size();
  for (int bb = 0; bb < x.n; ++bb) {
    for (int ci = 0; ci < x.c; ++ci) {
      const std::size_t c = static_cast<std::size_t>(ci);
      const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(run_var.v[c]) + static_cast<double>(eps)));
      const T scale = gamma.v[c] * inv;
      const T shift = beta.v[c] - run_mean.v[c] * scale;
      const T* src = x.plane(bb, ci);
      T* dst = y.plane(bb, ci);
      for (std::int64_t i = 0; i < hw; ++i) dst[i] = scale * src[i] + shift;
    }
  }
  return y;
}

template <class T>
Tensor4<T> instnorm_backward(const NormTape<T>& tape, const NamedTensor<T>& gamma, const Tensor4<T>& dy,
                             NamedTensor<T>& dgamma, NamedTensor<T>& dbeta) {
  const auto& xhat = tape.xhat;
  Tensor4<T> dx(dy.n, dy.c, dy.h, dy.w);
  const std::int64_t hw = dy.plane_size();
  for (int bb = 0; bb < dy.n; ++bb) {
    for (int ci = 0; ci < dy.c; ++ci) {
      const T* dyp = dy.plane(bb, ci);
      const T* xh = xhat.plane(bb, ci);
      double gsum = 0.0, xsum = 0.0;
      for (std::int64_t i = 0; i < hw; ++i) {
        gsum += static_cast<double>(dyp[i]);
        xsum += static_cast<double>(dyp[i]) * static_cast<double>(xh[i]);
      }
      dgamma.v[static_cast<std::size_t>(ci)] += static_cast<T>(xsum);
      dbeta.v[static_cast<std::size_t>(ci)] += static_cast<T>(gsum);
      const double n = static_cast<double>(hw);
      const double g = static_cast<double>(gamma.v[static_cast<std::size_t>(ci)]);
      const double inv = static_cast<double>(tape.inv_std[static_cast<std::size_t>(bb) * dy.c + ci]);
      T* dst = dx.plane(bb, ci);
      for (std::int64_t i = 0; i < hw; ++i) {
        const double t = static_cast<double>(dyp[i]) - gsum / n - static_cast<double>(xh[i]) * xsum / n;
        dst[i] = static_cast<T>(g * inv * t);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ReLU, max pooling, transposed convolution, concatenation

template <class T>
Tensor4<T> relu_forward(const Tensor4<T>& x) {
  Tensor4<T> y(x.n, x.c, x.h, x.w);
  for (std::size_t i = 0; i < x.v.size(); ++i) y.v[i] = x.v[i] > T{} ? x.v[i] : T{};
  return y;
}

template <class T>
Tensor4<T> relu_backward(const Tensor4<T>& y, const Tensor4<T>& dy) {
  Tensor4<T> dx(dy.n, dy.c, dy.h, dy.w);
  for (std::size_t i = 0; i < dy.v.size(); ++i) dx.v[i] = y.v[i] > T{} ? dy.v[i] : T{};
  return dx;
}

template <class T>
Tensor4<T> maxpool2_forward(const Tensor4<T>& x, PoolTape<T>& tape) {
  if (x.h % 2 != 0 || x.w % 2 != 0) fail(Errc::dimension_mismatch, "maxpool2: odd spatial dims");
  Tensor4<T> y(x.n, x.c, x.h / 2, x.w / 2);
  tape.in_h = x.h;
  tape.in_w = x.w;
  tape.argmax.assign(static_cast<std::size_t>(y.size()), 0);
  std::int64_t out = 0;
  for (int bb = 0; bb < x.n; ++bb) {
    for (int ci = 0; ci < x.c; ++ci) {
      const T* src = x.plane(bb, ci);
      T* dst = y.plane(bb, ci);
      for (int yy = 0; yy < y.h; ++yy) {
        for (int xx = 0; xx < y.w; ++xx) {
          // Ties go to the first maximal element in scan order.
          std::int32_t best = 2 * yy * x.w + 2 * xx;
          T bv = src[best];
          const std::int32_t cands[3] = {2 * yy * x.w + 2 * xx + 1, (2 * yy + 1) * x.w + 2 * xx,
                                         (2 * yy + 1) * x.w + 2 * xx + 1};
          for (std::int32_t idx : cands)
            if (src[idx] > bv) { bv = src[idx]; best = idx; }
          dst[static_cast<std::int64_t>(yy) * y.w + xx] = bv;
          tape.argmax[static_cast<std::size_t>(out++)] = best;
        }
      }
    }
  }
  return y;
}

template <class T>
Tensor4<T> maxpool2_backward(const PoolTape<T>& tape, int channels, int batch, const Tensor4<T>& dy) {
  Tensor4<T> dx(batch, channels, tape.in_h, tape.in_w);
  std::int64_t out = 0;
  for (int bb = 0; bb < batch; ++bb) {
    for (int ci = 0; ci < channels; ++ci) {
      T* dst = dx.plane(bb, ci);
      const T* src = dy.plane(bb, ci);
      for (std::int64_t i = 0; i < dy.plane_size(); ++i)
        dst[tape.argmax[static_cast<std::size_t>(out++)]] += src[i];
    }
  }
  return dx;
}

template <class T>
Tensor4<T> upconv_forward(const Tensor4<T>& x, const NamedTensor<T>& w, const NamedTensor<T>& b) {
  const int cin = w.dims[0], cout = w.dims[1];
  if (cin != x.c) fail(Errc::dimension_mismatch, "upconv: input channels do not match " + w.name);
  Tensor4<T> y(x.n, cout, x.h * 2, x.w * 2);
  const std::int64_t hw = x.plane_size();
  const int cols = cout * 4;
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> xmat(hw, cin), m(hw, cols);
  ConstMatMap<T> W(w.v.data(), cin, cols);
  for (int bb = 0; bb < x.n; ++bb) {
    for (int ci = 0; ci < cin; ++ci) {
      const T* src = x.plane(bb, ci);
      for (std::int64_t i = 0; i < hw; ++i) xmat(i, ci) = src[i];
    }
    m.noalias() = xmat * W;
    for (int co = 0; co < cout; ++co) {
      T* dst = y.plane(bb, co);
      const T bias = b.v[static_cast<std::size_t>(co)];
      for (int yy = 0; yy < x.h; ++yy) {
        for (int xx = 0; xx < x.w; ++xx) {
          const std::int64_t i = static_cast<std::int64_t>(yy) * x.w + xx;
          dst[static_cast<std::int64_t>(2 * yy) * y.w + 2 * xx] = m(i, co * 4 + 0) + bias;
          dst[static_cast<std::int64_t>(2 * yy) * y.w + 2 * xx + 1] = m(i, co * 4 + 1) + bias;
          dst[static_cast<std::int64_t>(2 * yy + 1) * y.w + 2 * xx] = m(i, co * 4 + 2) + bias;
          dst[static_cast<std::int64_t>(2 * yy + 1) * y.w + 2 * xx + 1] = m(i, co * 4 + 3) + bias;
        }
      }
    }
  }
  return y;
}

template <class T>
Tensor4<T> upconv_backward(const Tensor4<T>& x, const NamedTensor<T>& w, const Tensor4<T>& dy,
                           NamedTensor<T>& dw, NamedTensor<T>& db) {
  const int cin = w.dims[0], cout = w.dims[1];
  const std::int64_t hw = x.plane_size();
  const int cols = cout * 4;
  Tensor4<T> dx(x.n, x.c, x.h, x.w);
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> xmat(hw, cin), dm(hw, cols), dxm(hw, cin);
  MatMap<T> dW(dw.v.data(), cin, cols);
  ConstMatMap<T> W(w.v.data(), cin, cols);
  for (int bb = 0; bb < x.n; ++bb) {
    for (int co = 0; co < cout; ++co) {
      const T* src = dy.plane(bb, co);
      double bsum = 0.0;
      for (int yy = 0; yy < x.h; ++yy) {
        for (int xx = 0; xx < x.w; ++xx) {
          const std::int64_t i = static_cast<std::int64_t>(yy) * x.w + xx;
          dm(i, co * 4 + 0) = src[static_cast<std::int64_t>(2 * yy) * dy.w + 2 * xx];
          dm(i, co * 4 + 1) = src[static_cast<std::int64_t>(2 * yy) * dy.w + 2 * xx + 1];
          dm(i, co * 4 + 2) = src[static_cast<std::int64_t>(2 * yy + 1) * dy.w + 2 * xx];
          dm(i, co * 4 + 3) = src[static_cast<std::int64_t>(2 * yy + 1) * dy.w + 2 * xx + 1];
        }
      }
      for (std::int64_t i = 0; i < dy.plane_size(); ++i) bsum += static_cast<double>(src[i]);
      db.v[static_cast<std::size_t>(co)] += static_cast<T>(bsum);
    }
    for (int ci = 0; ci < cin; ++ci) {
      const T* src = x.plane(bb, ci);
      for (std::int64_t i = 0; i < hw; ++i) xmat(i, ci) = src[i];
    }
    dW.noalias() += xmat.transpose() * dm;
    dxm.noalias() = dm * W.transpose();
    for (int ci = 0; ci < cin; ++ci) {
      T* dst = dx.plane(bb, ci);
      for (std::int64_t i = 0; i < hw; ++i) dst[i] = dxm(i, ci);
    }
  }
  return dx;
}

template <class T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w)
    fail(Errc::dimension_mismatch, "concat: spatial/batch dims differ");
  Tensor4<T> y(a.n, a.c + b.c, a.h, a.w);
  for (int bb = 0; bb < a.n; ++bb) {
    for (int ci = 0; ci < a.c; ++ci)
      std::copy_n(a.plane(bb, ci), a.plane_size(), y.plane(bb, ci));
    for (int ci = 0; ci < b.c; ++ci)
      std::copy_n(b.plane(bb, ci), b.plane_size(), y.plane(bb, a.c + ci));
  }
  return y;
}

template <class T>
void split_channels(const Tensor4<T>& d, int c_a, Tensor4<T>& da, Tensor4<T>& db) {
  da = Tensor4<T>(d.n, c_a, d.h, d.w);
  db = Tensor4<T>(d.n, d.c - c_a, d.h, d.w);
  for (int bb = 0; bb < d.n; ++bb) {
    for (int ci = 0; ci < c_a; ++ci)
      std::copy_n(d.plane(bb, ci), d.plane_size(), da.plane(bb, ci));
    for (int ci = c_a; ci < d.c; ++ci)
      std::copy_n(d.plane(bb, ci), d.plane_size(), db.plane(bb, ci - c_a));
  }
}

// ---------------------------------------------------------------------------
// U-Net assembly

namespace detail {

template <class T>
Tensor4<T> double_conv_forward(const NetParams<T>& p, const NetConfig& cfg, const std::string& prefix,
                               const Tensor4<T>& x, StatsMode mode, DoubleConvTape<T>* tape) {
  const bool norm = cfg.normalization == Normalization::instance;
  const T eps = static_cast<T>(cfg.norm_epsilon);
  NormTape<T> scratch_n1, scratch_n2;

  Tensor4<T> y = conv_forward(x, p.get(prefix + ".conv1.w"), p.get(prefix + ".conv1.b"), 3);
  if (norm) {
    if (mode == StatsMode::per_sample)
      y = instnorm_forward(y, p.get(prefix + ".norm1.gamma"), p.get(prefix + ".norm1.beta"), eps,
                           tape ? tape->n1 : scratch_n1);
    else
      y = instnorm_forward_running(y, p.get(prefix + ".norm1.gamma"), p.get(prefix + ".norm1.beta"),
                                   p.get(prefix + ".norm1.run_mean"), p.get(prefix + ".norm1.run_var"), eps);
  }
  Tensor4<T> r1 = relu_forward(y);
  Tensor4<T> y2 = conv_forward(r1, p.get(prefix + ".conv2.w"), p.get(prefix + ".conv2.b"), 3);
  if (norm) {
    if (mode == StatsMode::per_sample)
      y2 = instnorm_forward(y2, p.get(prefix + ".norm2.gamma"), p.get(prefix + ".norm2.beta"), eps,
                            tape ? tape->n2 : scratch_n2);
    else
      y2 = instnorm_forward_running(y2, p.get(prefix + ".norm2.gamma"), p.get(prefix + ".norm2.beta"),
                                    p.get(prefix + ".norm2.run_mean"), p.get(prefix + ".norm2.run_var"), eps);
  }
  Tensor4<T> r2 = relu_forward(y2);
  if (tape) {
    tape->c1.x = x;
    tape->r1 = std::move(r1);
    tape->r2 = r2;
    return r2;
  }
  return r2;
}

// Gradient of a double-conv block; returns the gradient with respect to the
// block input.
template <class T>
Tensor4<T> double_conv_backward(const NetParams<T>& p, const NetConfig& cfg, const std::string& prefix,
                                const DoubleConvTape<T>& tape, const Tensor4<T>& dout, NetParams<T>& g) {
  const bool norm = cfg.normalization == Normalization::instance;
  Tensor4<T> d = relu_backward(tape.r2, dout);
  if (norm)
    d = instnorm_backward(tape.n2, p.get(prefix + ".norm2.gamma"), d, g.get(prefix + ".norm2.gamma"),
                          g.get(prefix + ".norm2.beta"));
  d = conv_backward(tape.r1, p.get(prefix + ".conv2.w"), 3, d, g.get(prefix + ".conv2.w"),
                    g.get(prefix + ".conv2.b"));
  d = relu_backward(tape.r1, d);
  if (norm)
    d = instnorm_backward(tape.n1, p.get(prefix + ".norm1.gamma"), d, g.get(prefix + ".norm1.gamma"),
                          g.get(prefix + ".norm1.beta"));
  d = conv_backward(tape.c1.x, p.get(prefix + ".conv1.w"), 3, d, g.get(prefix + ".conv1.w"),
                    g.get(prefix + ".conv1.b"));
  return d;
}

}  // namespace detail

template <class T>
Tensor4<T> forward(const NetParams<T>& params, const NetConfig& cfg, const Tensor4<T>& x, StatsMode mode,
                   typename std::type_identity<Tape<T>>::type* tape) {
  cfg.validate();
  if (x.c != cfg.in_channels) fail(Errc::dimension_mismatch, "forward: wrong input channel count");
  const int f = cfg.pool_factor();
  if (x.h % f != 0 || x.w % f != 0 || x.h < f || x.w < f)
    fail(Errc::dimension_mismatch, "forward: spatial dims must be positive multiples of 2^(depth-1)");

  const int levels = cfg.depth - 1;
  if (tape) {
    tape->enc.resize(static_cast<std::size_t>(levels));
    tape->pool.resize(static_cast<std::size_t>(levels));
    tape->up.resize(static_cast<std::size_t>(levels));
    tape->dec.resize(static_cast<std::size_t>(levels));
  }

  std::vector<Tensor4<T>> skips(static_cast<std::size_t>(levels));
  PoolTape<T> scratch_pool;
  Tensor4<T> cur = x;
  for (int l = 0; l < levels; ++l) {
    cur = detail::double_conv_forward(params, cfg, "enc" + std::to_string(l), cur, mode,
                                      tape ? &tape->enc[static_cast<std::size_t>(l)] : nullptr);
    skips[static_cast<std::size_t>(l)] = cur;
    cur = maxpool2_forward(cur, tape ? tape->pool[static_cast<std::size_t>(l)] : scratch_pool);
  }
  cur = detail::double_conv_forward(params, cfg, "bot", cur, mode, tape ? &tape->bot : nullptr);
  for (int l = levels - 1; l >= 0; --l) {
    const std::string ln = std::to_string(l);
    if (tape) tape->up[static_cast<std::size_t>(l)].x = cur;
    Tensor4<T> up = upconv_forward(cur, params.get("up" + ln + ".w"), params.get("up" + ln + ".b"));
    Tensor4<T> cat = concat_channels(skips[static_cast<std::size_t>(l)], up);
    cur = detail::double_conv_forward(params, cfg, "dec" + ln, cat, mode,
                                      tape ? &tape->dec[static_cast<std::size_t>(l)] : nullptr);
  }
  if (tape) tape->head.x = cur;
  return conv_forward(cur, params.get("head.w"), params.get("head.b"), 1);
}

template <class T>
NetParams<T> backward(const NetParams<T>& params, const NetConfig& cfg, const Tape<T>& tape,
                      const Tensor4<T>& dlogits, Tensor4<T>* dx) {
  NetParams<T> g = make_params<T>(cfg);
  // make_params seeds norm scales/running vars at 1; gradients start at zero.
  for (auto& t : g.tensors) std::fill(t.v.begin(), t.v.end(), T{});

  const int levels = cfg.depth - 1;
  if (static_cast<int>(tape.enc.size()) != levels || tape.head.x.n != dlogits.n)
    fail(Errc::dimension_mismatch, "backward: tape does not match this config/batch");

  Tensor4<T> d = conv_backward(tape.head.x, params.get("head.w"), 1, dlogits, g.get("head.w"),
                               g.get("head.b"));
  std::vector<Tensor4<T>> dskip(static_cast<std::size_t>(levels));
  for (int l = 0; l < levels; ++l) {
    const std::string ln = std::to_string(l);
    Tensor4<T> dcat = detail::double_conv_backward(params, cfg, "dec" + ln,
                                                   tape.dec[static_cast<std::size_t>(l)], d, g);
    Tensor4<T> dup;
    split_channels(dcat, cfg.level_filters(l), dskip[static_cast<std::size_t>(l)], dup);
    d = upconv_backward(tape.up[static_cast<std::size_t>(l)].x, params.get("up" + ln + ".w"), dup,
                        g.get("up" + ln + ".w"), g.get("up" + ln + ".b"));
  }
  d = detail::double_conv_backward(params, cfg, "bot", tape.bot, d, g);
  for (int l = levels - 1; l >= 0; --l) {
    Tensor4<T> dpool = maxpool2_backward(tape.pool[static_cast<std::size_t>(l)],
                                         cfg.level_filters(l), d.n, d);
    for (std::size_t i = 0; i < dpool.v.size(); ++i)
      dpool.v[i] += dskip[static_cast<std::size_t>(l)].v[i];
    d = detail::double_conv_backward(params, cfg, "enc" + std::to_string(l),
                                     tape.enc[static_cast<std::size_t>(l)], dpool, g);
  }
  if (dx) *dx = std::move(d);
  return g;
}

template <class T>
void update_running_stats(NetParams<T>& params, const Tape<T>& tape, double momentum) {
  if (params.cfg.normalization != Normalization::instance) return;
  auto fold = [&](const std::string& prefix, const NormTape<T>& nt) {
    auto& rm = params.get(prefix + ".run_mean");
    auto& rv = params.get(prefix + ".run_var");
    const int channels = static_cast<int>(rm.v.size());
    if (nt.batch_mean.empty()) return;
    const int batch = static_cast<int>(nt.batch_mean.size()) / channels;
    for (int ci = 0; ci < channels; ++ci) {
      double ms = 0.0, vs = 0.0;
      for (int bb = 0; bb < batch; ++bb) {
        ms += static_cast<double>(nt.batch_mean[static_cast<std::size_t>(bb) * channels + ci]);
        vs += static_cast<double>(nt.batch_var[static_cast<std::size_t>(bb) * channels + ci]);
      }
      ms /= batch;
      vs /= batch;
      rm.v[static_cast<std::size_t>(ci)] =
          static_cast<T>((1.0 - momentum) * static_cast<double>(rm.v[static_cast<std::size_t>(ci)]) + momentum * ms);
      rv.v[static_cast<std::size_t>(ci)] =
          static_cast<T>((1.0 - momentum) * static_cast<double>(rv.v[static_cast<std::size_t>(ci)]) + momentum * vs);
    }
  };
  const int levels = params.cfg.depth - 1;
  for (int l = 0; l < levels; ++l) {
    fold("enc" + std::to_string(l) + ".norm1", tape.enc[static_cast<std::size_t>(l)].n1);
    fold("enc" + std::to_string(l) + ".norm2", tape.enc[static_cast<std::size_t>(l)].n2);
  }
  fold("bot.norm1", tape.bot.n1);
  fold("bot.norm2", tape.bot.n2);
  for (int l = 0; l < levels; ++l) {
    fold("dec" + std::to_string(l) + ".norm1", tape.dec[static_cast<std::size_t>(l)].n1);
    fold("dec" + std::to_string(l) + ".norm2", tape.dec[static_cast<std::size_t>(l)].n2);
  }
}

// ---------------------------------------------------------------------------
// Adam

template <class T>
void opt_step(NetParams<T>& params, const NetParams<T>& grads, AdamState<T>& state, double lr,
              const AdamConfig& hyper) {
  if (grads.tensors.size() != params.tensors.size())
    fail(Errc::dimension_mismatch, "opt_step: gradient/parameter tensor count mismatch");
  if (state.m.empty()) {
    state.m.resize(params.tensors.size());
    state.v.resize(params.tensors.size());
    for (std::size_t t = 0; t < params.tensors.size(); ++t) {
      state.m[t].assign(params.tensors[t].v.size(), T{});
      state.v[t].assign(params.tensors[t].v.size(), T{});
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    auto& p = params.tensors[t];
    const auto& gt = grads.tensors[t];
    if (!p.learnable) continue;
    if (gt.v.size() != p.v.size()) fail(Errc::dimension_mismatch, "opt_step: shape mismatch at " + p.name);
    auto& m = state.m[t];
    auto& v = state.v[t];
    for (std::size_t i = 0; i < p.v.size(); ++i) {
      const double gi = static_cast<double>(gt.v[i]);
      const double mi = hyper.beta1 * static_cast<double>(m[i]) + (1.0 - hyper.beta1) * gi;
      const double vi = hyper.beta2 * static_cast<double>(v[i]) + (1.0 - hyper.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      p.v[i] = static_cast<T>(static_cast<double>(p.v[i]) -
                              lr * (mi / bc1) / (std::sqrt(vi / bc2) + hyper.eps));
    }
  }
}

template <class T>
std::uint64_t params_checksum(const NetParams<T>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& t : params.tensors) {
    feed(t.name.data(), t.name.size());
    feed(t.v.data(), t.v.size() * sizeof(T));
  }
  return h;
}

}  // namespace canopyseg
