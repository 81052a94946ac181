#pragma once

#include <cstdint>

#include "bminus/common.h"

namespace testing {

// Byte stream shared with the frozen zlib oracles.
inline bminus::Bytes lcg_bytes(std::uint64_t seed, std::size_t n) {
  bminus::Bytes out(n);
  std::uint64_t x = seed;
  for (auto& b : out) {
    x = x * 6364136223846793005ULL + 1442695040888963407ULL;
    b = static_cast<std::uint8_t>(x >> 56);
  }
  return out;
}

inline bminus::Bytes block_of(std::uint8_t v) { return bminus::Bytes(bminus::kBlockSize, v); }

}  // namespace testing
