#pragma once

#include <string>
#include <vector>

#include "dla/backbone.hpp"

namespace dla {

// Flat binary checkpoint: u32 array count, then per array
//   u32 name length, name bytes, u32 rank, u32 extents[rank],
//   little-endian f64 values (row-major).
// Every registered tensor is stored, including non-trainable buffers.
void save_checkpoint(const std::string& path, const std::vector<ParamInfo>& params);
// Loads by name into the given registry; shape mismatch or a missing /
// unknown array is a format error.
void load_checkpoint(const std::string& path, std::vector<ParamInfo>& params);

}  // namespace dla
