#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "depthformer/tensor.hpp"

namespace df {

// Binary checkpoint container ("DFCP"): little-endian, a flat list of
// (dotted path, shape, raw f32 data) entries. See README for the layout.
using CheckpointEntries = std::vector<std::pair<std::string, Tensor<float>>>;

void save_checkpoint(const std::string& path, const CheckpointEntries& entries);
CheckpointEntries load_checkpoint(const std::string& path);

// u64 metadata rides in the same container as four exact 16-bit limbs
// (low to high), each stored in one f32.
Tensor<float> pack_u64(uint64_t v);
uint64_t unpack_u64(const Tensor<float>& t);

}  // namespace df
