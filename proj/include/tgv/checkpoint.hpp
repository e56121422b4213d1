#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tgv/tensor.hpp"

namespace tgv {

// Binary model checkpoint, little-endian throughout:
//   magic "TGVM" | version u32 | repeated tensor records until EOF
//   record: name_len u32 | name bytes | ndim u32 | dims u32[ndim] | f32 payload
// Round trips are bit-exact (raw float bit patterns are preserved).

inline constexpr uint32_t kCheckpointVersion = 1;

using TensorMap = std::map<std::string, Tensor>;

std::vector<uint8_t> save_checkpoint(const TensorMap& tensors);
TensorMap load_checkpoint(const std::vector<uint8_t>& bytes);

void save_checkpoint_file(const std::string& path, const TensorMap& tensors);
TensorMap load_checkpoint_file(const std::string& path);

} // namespace tgv
