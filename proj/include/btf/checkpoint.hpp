#pragma once

// Versioned binary checkpoint container. Layout (all integers and doubles
// little-endian, doubles IEEE-754 binary64):
//
//   magic "BTF3CKPT" | u32 version
//   repeated sections: u32 tag | u64 payload bytes | payload | u32 crc32
//   terminator section tag "DONE" with empty payload
//
// Matrices are written column-major, tensors in the Tensor3 flat layout.
// Loading verifies magic, version and every CRC before any state is built,
// so a truncated or corrupted file never yields a partial state.

#include <filesystem>
#include <stdexcept>

#include "btf/model.hpp"

namespace btf {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const ModelState& state, const std::filesystem::path& p);
ModelState load_checkpoint(const std::filesystem::path& p);

}  // namespace btf
