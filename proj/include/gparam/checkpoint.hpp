#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gparam/tensor.hpp"

namespace gparam {

using ParamList = std::vector<std::pair<std::string, Tensor>>;

// Named-tensor container ("GPRC"): little-endian, bit-exact round trip.
// Layout: magic, u16 version, metadata map, tensor table (name/dtype/shape/
// offset/size), raw payload.
struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> metadata;
  ParamList params;

  const Tensor* find(const std::string& name) const;
  const std::string* meta(const std::string& key) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a over names and raw value bytes in listed order; identifies a frozen
// weight set.
uint64_t params_fingerprint(const ParamList& params);

// Copies values from a loaded checkpoint into live tensors by name; throws if
// a listed param is missing or has a different shape/dtype.
void restore_params(const Checkpoint& ckpt, const ParamList& live);

}  // namespace gparam
