#include "bminus/common.h"

#include <zlib.h>

#include <algorithm>

namespace bminus {

std::uint32_t crc32(ByteView data, std::uint32_t seed) {
  return static_cast<std::uint32_t>(
      ::crc32(seed, data.data(), static_cast<uInt>(data.size())));
}

bool is_all_zero(ByteView data) {
  // Word-at-a-time scan; callers hit this on every slot and log block read.
  std::size_t i = 0;
  for (; i + 8 <= data.size(); i += 8) {
    if (load_le<std::uint64_t>(data.data() + i) != 0) return false;
  }
  return std::all_of(data.begin() + static_cast<std::ptrdiff_t>(i), data.end(),
                     [](std::uint8_t b) { return b == 0; });
}

}  // namespace bminus
