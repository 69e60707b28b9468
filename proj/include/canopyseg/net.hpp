#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "canopyseg/rng.hpp"
#include "canopyseg/tensor.hpp"

namespace canopyseg {

enum class Upsampling : std::uint8_t { transposed_conv = 0 };
enum class Padding : std::uint8_t { reflection = 0 };
enum class Normalization : std::uint8_t { instance = 0, none = 1 };

struct NetConfig {
  int in_channels = 2;  // DTM, CHM
  int out_channels = 4;
  int depth = 5;
  int base_filters = 16;
  Upsampling upsampling = Upsampling::transposed_conv;
  Padding padding = Padding::reflection;
  Normalization normalization = Normalization::instance;
  float norm_epsilon = 1e-5f;

  bool operator==(const NetConfig&) const = default;

  int level_filters(int level) const { return base_filters << level; }
  int pool_factor() const { return 1 << (depth - 1); }

  void validate() const {
    if (depth < 2) fail(Errc::invalid_argument, "NetConfig: depth must be >= 2");
    if (base_filters < 1 || in_channels < 1 || out_channels < 1)
      fail(Errc::invalid_argument, "NetConfig: channel counts must be >= 1");
    if (norm_epsilon <= 0.0f) fail(Errc::invalid_argument, "NetConfig: norm_epsilon must be > 0");
  }
};

// Input feature scaling baked into a trained model: canopy height divided by
// chm_scale, terrain standardized with fixed map statistics.
struct FeatureNorm {
  float dtm_mean = 0.0f;
  float dtm_std = 1.0f;
  float chm_scale = 30.0f;
};

template <class T>
struct NamedTensor {
  std::string name;
  std::vector<int> dims;
  std::vector<T> v;
  bool learnable = true;

  std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
};

// Ordered named tensors; order is the construction (and serialization and
// RNG-draw) order.
template <class T>
struct NetParams {
  NetConfig cfg;
  std::vector<NamedTensor<T>> tensors;
  std::unordered_map<std::string, std::size_t> index;

  NamedTensor<T>& add(const std::string& name, std::vector<int> dims, bool learnable = true) {
    std::int64_t sz = 1;
    for (int d : dims) sz *= d;
    index.emplace(name, tensors.size());
    tensors.push_back(NamedTensor<T>{name, std::move(dims), std::vector<T>(static_cast<std::size_t>(sz)), learnable});
    return tensors.back();
  }

  NamedTensor<T>& get(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) fail(Errc::invalid_argument, "NetParams: unknown tensor " + name);
    return tensors[it->second];
  }
  const NamedTensor<T>& get(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) fail(Errc::invalid_argument, "NetParams: unknown tensor " + name);
    return tensors[it->second];
  }

  std::int64_t total_values() const {
    std::int64_t s = 0;
    for (const auto& t : tensors) s += t.size();
    return s;
  }

  template <class U>
  NetParams<U> cast() const {
    NetParams<U> out;
    out.cfg = cfg;
    out.index = index;
    out.tensors.reserve(tensors.size());
    for (const auto& t : tensors) {
      NamedTensor<U> nt{t.name, t.dims, std::vector<U>(t.v.size()), t.learnable};
      for (std::size_t i = 0; i < t.v.size(); ++i) nt.v[i] = static_cast<U>(t.v[i]);
      out.tensors.push_back(std::move(nt));
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Parameter layout

template <class T>
void add_norm(NetParams<T>& p, const std::string& prefix, int channels) {
  if (p.cfg.normalization != Normalization::instance) return;
  auto& gamma = p.add(prefix + ".gamma", {channels});
  std::fill(gamma.v.begin(), gamma.v.end(), T{1});
  p.add(prefix + ".beta", {channels});
  p.add(prefix + ".run_mean", {channels}, false);
  auto& rv = p.add(prefix + ".run_var", {channels}, false);
  std::fill(rv.v.begin(), rv.v.end(), T{1});
}

template <class T>
void add_double_conv(NetParams<T>& p, const std::string& prefix, int cin, int cout) {
  p.add(prefix + ".conv1.w", {cout, cin, 3, 3});
  p.add(prefix + ".conv1.b", {cout});
  add_norm(p, prefix + ".norm1", cout);
  p.add(prefix + ".conv2.w", {cout, cout, 3, 3});
  p.add(prefix + ".conv2.b", {cout});
  add_norm(p, prefix + ".norm2", cout);
}

// All-zero parameter set with the shapes the config dictates (norm scales and
// running variances start at 1).
template <class T>
NetParams<T> make_params(const NetConfig& cfg) {
  cfg.validate();
  NetParams<T> p;
  p.cfg = cfg;
  int cin = cfg.in_channels;
  for (int l = 0; l <= cfg.depth - 2; ++l) {
    add_double_conv(p, "enc" + std::to_string(l), cin, cfg.level_filters(l));
    cin = cfg.level_filters(l);
  }
  add_double_conv(p, "bot", cfg.level_filters(cfg.depth - 2), cfg.level_filters(cfg.depth - 1));
  for (int l = cfg.depth - 2; l >= 0; --l) {
    const std::string up = "up" + std::to_string(l);
    p.add(up + ".w", {cfg.level_filters(l + 1), cfg.level_filters(l), 2, 2});
    p.add(up + ".b", {cfg.level_filters(l)});
    add_double_conv(p, "dec" + std::to_string(l), 2 * cfg.level_filters(l), cfg.level_filters(l));
  }
  p.add("head.w", {cfg.out_channels, cfg.level_filters(0), 1, 1});
  p.add("head.b", {cfg.out_channels});
  return p;
}

// Fan-in-scaled uniform init for convolution kernels; biases and norm shifts
// zero, norm scales one. Deterministic per seed.
template <class T>
NetParams<T> init_model(const NetConfig& cfg, std::uint64_t seed) {
  NetParams<T> p = make_params<T>(cfg);
  Rng rng(mix_seed(seed, 0xCA90F5EEDULL));
  for (auto& t : p.tensors) {
    const bool is_kernel = t.dims.size() == 4 && t.learnable;
    if (!is_kernel) continue;
    // dims: conv (cout, cin, k, k); transposed conv (cin, cout, 2, 2). Either
    // way dims[1] * k * k is the per-output fan-in for conv, and for the
    // non-overlapping 2x2 stride-2 transposed kernel the fan-in is dims[0].
    const bool transposed = t.name.rfind("up", 0) == 0;
    const double fan_in = transposed ? t.dims[0] : static_cast<double>(t.dims[1]) * t.dims[2] * t.dims[3];
    const double bound = std::sqrt(1.0 / fan_in);
    for (auto& v : t.v) v = static_cast<T>(rng.uniform(-bound, bound));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Layers. Each forward has an exact matching backward; tapes hold what the
// backward needs and nothing else.

template <class T>
struct ConvTape {
  Tensor4<T> x;
};
template <class T>
struct NormTape {
  Tensor4<T> xhat;
  std::vector<T> inv_std;     // per (b, c)
  std::vector<T> batch_mean;  // per (b, c); feeds the running-stat update
  std::vector<T> batch_var;
};
template <class T>
struct ReluTape {
  const Tensor4<T>* y = nullptr;  // points at the activation owned elsewhere
};
template <class T>
struct PoolTape {
  std::vector<std::int32_t> argmax;  // flat index into the input plane
  int in_h = 0, in_w = 0;
};

int reflect3(int i, int n);

// k x k convolution (k = 1 or 3), reflection padding for k = 3.
// Weight dims (cout, cin, k, k).
template <class T>
Tensor4<T> conv_forward(const Tensor4<T>& x, const NamedTensor<T>& w, const NamedTensor<T>& b, int k);
template <class T>
Tensor4<T> conv_backward(const Tensor4<T>& x, const NamedTensor<T>& w, int k, const Tensor4<T>& dy,
                         NamedTensor<T>& dw, NamedTensor<T>& db);

// Instance norm with per-sample statistics (training path).
template <class T>
Tensor4<T> instnorm_forward(const Tensor4<T>& x, const NamedTensor<T>& gamma, const NamedTensor<T>& beta,
                            T eps, NormTape<T>& tape);
// Instance norm as a fixed per-channel affine from running statistics.
template <class T>
Tensor4<T> instnorm_forward_running(const Tensor4<T>& x, const NamedTensor<T>& gamma,
                                    const NamedTensor<T>& beta, const NamedTensor<T>& run_mean,
                                    const NamedTensor<T>& run_var, T eps);
template <class T>
Tensor4<T> instnorm_backward(const NormTape<T>& tape, const NamedTensor<T>& gamma, const Tensor4<T>& dy,
                             NamedTensor<T>& dgamma, NamedTensor<T>& dbeta);

template <class T>
Tensor4<T> relu_forward(const Tensor4<T>& x);
template <class T>
Tensor4<T> relu_backward(const Tensor4<T>& y, const Tensor4<T>& dy);

template <class T>
Tensor4<T> maxpool2_forward(const Tensor4<T>& x, PoolTape<T>& tape);
template <class T>
Tensor4<T> maxpool2_backward(const PoolTape<T>& tape, int channels, int batch, const Tensor4<T>& dy);

// 2x2 stride-2 transposed convolution; weight dims (cin, cout, 2, 2).
template <class T>
Tensor4<T> upconv_forward(const Tensor4<T>& x, const NamedTensor<T>& w, const NamedTensor<T>& b);
template <class T>
Tensor4<T> upconv_backward(const Tensor4<T>& x, const NamedTensor<T>& w, const Tensor4<T>& dy,
                           NamedTensor<T>& dw, NamedTensor<T>& db);

template <class T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b);
template <class T>
void split_channels(const Tensor4<T>& d, int c_a, Tensor4<T>& da, Tensor4<T>& db);

// ---------------------------------------------------------------------------
// Network

template <class T>
struct DoubleConvTape {
  ConvTape<T> c1;
  NormTape<T> n1;
  Tensor4<T> r1;  // post-ReLU activation (input of conv2)
  NormTape<T> n2;
  Tensor4<T> r2;  // block output
};

template <class T>
struct Tape {
  std::vector<DoubleConvTape<T>> enc;
  std::vector<PoolTape<T>> pool;
  DoubleConvTape<T> bot;
  std::vector<ConvTape<T>> up;       // input of each transposed conv, by level
  std::vector<DoubleConvTape<T>> dec;
  ConvTape<T> head;
};

enum class StatsMode { per_sample, running };

// Full U-Net forward. `tape` may be null when no backward pass will follow.
template <class T>
Tensor4<T> forward(const NetParams<T>& params, const NetConfig& cfg, const Tensor4<T>& x,
                   StatsMode mode = StatsMode::per_sample,
                   typename std::type_identity<Tape<T>>::type* tape = nullptr);

// Exact gradients of sum(logits * dlogits) with respect to every parameter.
template <class T>
NetParams<T> backward(const NetParams<T>& params, const NetConfig& cfg, const Tape<T>& tape,
                      const Tensor4<T>& dlogits, Tensor4<T>* dx = nullptr);

// Folds the tape's per-sample norm statistics into the run_mean/run_var
// buffers (exponential moving average).
template <class T>
void update_running_stats(NetParams<T>& params, const Tape<T>& tape, double momentum);

// ---------------------------------------------------------------------------
// Optimizer (Adam with bias correction)

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  std::int64_t step = 0;
};

template <class T>
void opt_step(NetParams<T>& params, const NetParams<T>& grads, AdamState<T>& state, double lr,
              const AdamConfig& hyper = {});

// FNV-1a over the raw little-endian tensor payloads, for determinism checks.
template <class T>
std::uint64_t params_checksum(const NetParams<T>& params);

}  // namespace canopyseg

#include "canopyseg/net_impl.hpp"
