#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "m2t2/network.hpp"

namespace m2t2 {

// Generic named-tensor container used for checkpoints. Keys are sorted (map),
// which makes the on-disk byte stream a pure function of the content.
struct NamedTensor {
  std::vector<std::uint32_t> dims;
  std::vector<double> data;

  bool operator==(const NamedTensor&) const = default;
};

using TensorDict = std::map<std::string, NamedTensor>;

// File layout: magic "M2T2CKPT", version u32, then one record per tensor in
// key order: name length u16, name bytes, rank u8, dims u32 each, payload
// little-endian f64.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const TensorDict& tensors);
TensorDict load_checkpoint(const std::string& path);

// ModelParams bridge: every parameter becomes a rank-2 record [rows, cols].
TensorDict params_to_dict(const ModelParams& params);
// Copies values into an already shaped ModelParams; throws on missing names
// or shape mismatches. Extra dict entries (e.g. optimizer state) are ignored.
void params_from_dict(ModelParams& params, const TensorDict& dict);

}  // namespace m2t2
