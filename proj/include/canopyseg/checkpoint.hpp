#pragma once

#include <string>

#include "canopyseg/net.hpp"

namespace canopyseg {

// Checkpoint file "CSNP": config header, input feature scaling, tensor
// directory (name, dims, offset), then 32-bit little-endian payloads.
void save_checkpoint(const NetParams<float>& params, const FeatureNorm& feat, const std::string& path);

struct Checkpoint {
  NetParams<float> params;
  NetConfig cfg;
  FeatureNorm feat;
};

Checkpoint load_checkpoint(const std::string& path);

// Refuses a checkpoint whose architecture differs from `expected`.
Checkpoint load_checkpoint(const std::string& path, const NetConfig& expected);

}  // namespace canopyseg
