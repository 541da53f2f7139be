#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ivt/encoder.hpp"
#include "ivt/params.hpp"

namespace ivt {

// Single-file container: an 8-byte magic, a little-endian u64 header length,
// a UTF-8 JSON header (model config, vocabulary, rng seed, step count and the
// name -> (offset, shape) index of every array), then the arrays themselves as
// little-endian 32-bit floats. Offsets count floats from the payload start.
struct Checkpoint {
  EncoderConfig config;
  std::vector<std::string> vocab_tokens;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::optional<ParamStore> params;
  std::optional<ParamStore> momentum;  // optimizer state, saved under "momentum/"
};

// Writing rounds the in-memory stores through float32 first, so the state a
// run continues with equals the state a resumed run reloads.
void save_checkpoint(Checkpoint& ckpt, const std::string& path);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace ivt
