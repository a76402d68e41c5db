#pragma once

#include <cstdint>
#include <string>

#include "prunefl/nn.hpp"

namespace prunefl {

// Checkpoint file, little-endian:
//   magic "PFNN", u32 version (= 1), u64 init_seed, u32 layer_count
//   per layer: u64 weight_count, u64 bias_count
//   per layer: mask bitmap (ceil(weight_count/8) bytes, LSB-first),
//              weight values (f64 x weight_count),
//              bias values (f64 x bias_count)
// Round-trips bit-exactly, including the mask.
struct Checkpoint {
  MaskedParams params;
  std::uint64_t init_seed = 0;
};

void save_checkpoint(const std::string& path, const MaskedParams& params,
                     std::uint64_t init_seed);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace prunefl
