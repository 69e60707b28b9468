#include "canopyseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace canopyseg {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'N', 'P'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

template <class T>
T take(const std::string& buf, std::size_t& off, const std::string& path) {
  if (off + sizeof(T) > buf.size()) fail(Errc::truncated_payload, path + ": truncated checkpoint");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

void save_checkpoint(const NetParams<float>& params, const FeatureNorm& feat, const std::string& path) {
  std::string buf;
  buf.append(kMagic, 4);
  put<std::uint32_t>(buf, kVersion);
  const NetConfig& cfg = params.cfg;
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(cfg.in_channels));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(cfg.out_channels));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(cfg.depth));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(cfg.base_filters));
  put<std::uint8_t>(buf, static_cast<std::uint8_t>(cfg.upsampling));
  put<std::uint8_t>(buf, static_cast<std::uint8_t>(cfg.padding));
  put<std::uint8_t>(buf, static_cast<std::uint8_t>(cfg.normalization));
  put<float>(buf, cfg.norm_epsilon);
  put<float>(buf, feat.dtm_mean);
  put<float>(buf, feat.dtm_std);
  put<float>(buf, feat.chm_scale);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(params.tensors.size()));

  std::uint64_t offset = 0;
  for (const auto& t : params.tensors) {
    put<std::uint16_t>(buf, static_cast<std::uint16_t>(t.name.size()));
    buf.append(t.name);
    put<std::uint8_t>(buf, t.learnable ? 1 : 0);
    put<std::uint8_t>(buf, static_cast<std::uint8_t>(t.dims.size()));
    for (int d : t.dims) put<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
    put<std::uint64_t>(buf, offset);
    offset += static_cast<std::uint64_t>(t.size()) * sizeof(float);
  }
  for (const auto& t : params.tensors)
    buf.append(reinterpret_cast<const char*>(t.v.data()), t.v.size() * sizeof(float));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io_failure, "cannot open " + path + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(Errc::io_failure, "short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_failure, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();

  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0)
    fail(Errc::bad_magic, path + ": not a CSNP checkpoint");
  std::size_t off = 4;
  if (take<std::uint32_t>(buf, off, path) != kVersion)
    fail(Errc::bad_magic, path + ": unsupported checkpoint version");

  NetConfig cfg;
  cfg.in_channels = static_cast<int>(take<std::uint32_t>(buf, off, path));
  cfg.out_channels = static_cast<int>(take<std::uint32_t>(buf, off, path));
  cfg.depth = static_cast<int>(take<std::uint32_t>(buf, off, path));
  cfg.base_filters = static_cast<int>(take<std::uint32_t>(buf, off, path));
  cfg.upsampling = static_cast<Upsampling>(take<std::uint8_t>(buf, off, path));
  cfg.padding = static_cast<Padding>(take<std::uint8_t>(buf, off, path));
  cfg.normalization = static_cast<Normalization>(take<std::uint8_t>(buf, off, path));
  cfg.norm_epsilon = take<float>(buf, off, path);
  FeatureNorm feat;
  feat.dtm_mean = take<float>(buf, off, path);
  feat.dtm_std = take<float>(buf, off, path);
  feat.chm_scale = take<float>(buf, off, path);

  Checkpoint ck;
  ck.cfg = cfg;
  ck.params = make_params<float>(cfg);
  const auto ntensors = take<std::uint32_t>(buf, off, path);
  if (ntensors != ck.params.tensors.size())
    fail(Errc::architecture_mismatch, path + ": tensor directory does not match the config's shape table");

  std::vector<std::uint64_t> offsets(ntensors);
  for (std::uint32_t i = 0; i < ntensors; ++i) {
    auto& t = ck.params.tensors[i];
    const auto name_len = take<std::uint16_t>(buf, off, path);
    if (off + name_len > buf.size()) fail(Errc::truncated_payload, path + ": truncated checkpoint");
    const std::string name = buf.substr(off, name_len);
    off += name_len;
    const bool learnable = take<std::uint8_t>(buf, off, path) != 0;
    const auto ndims = take<std::uint8_t>(buf, off, path);
    std::vector<int> dims(ndims);
    for (auto& d : dims) d = static_cast<int>(take<std::uint32_t>(buf, off, path));
    offsets[i] = take<std::uint64_t>(buf, off, path);
    if (name != t.name || dims != t.dims || learnable != t.learnable)
      fail(Errc::architecture_mismatch, path + ": tensor " + name + " does not match expected " + t.name);
  }
  const std::size_t payload_start = off;
  for (std::uint32_t i = 0; i < ntensors; ++i) {
    auto& t = ck.params.tensors[i];
    const std::size_t begin = payload_start + offsets[i];
    const std::size_t bytes = t.v.size() * sizeof(float);
    if (begin + bytes > buf.size()) fail(Errc::truncated_payload, path + ": payload shorter than directory promises");
    std::memcpy(t.v.data(), buf.data() + begin, bytes);
  }
  ck.feat = feat;
  return ck;
}

Checkpoint load_checkpoint(const std::string& path, const NetConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.cfg == expected))
    fail(Errc::architecture_mismatch, path + ": checkpoint architecture differs from the requested config");
  return ck;
}

}  // namespace canopyseg
