#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bminus {

static_assert(std::endian::native == std::endian::little,
              "on-storage formats are little-endian and copied verbatim");

inline constexpr std::size_t kBlockSize = 4096;

using Lba = std::uint64_t;
using PageId = std::uint64_t;
using Lsn = std::uint64_t;
using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;
using MutableByteView = std::span<std::uint8_t>;

inline constexpr PageId kNoPage = ~PageId{0};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OutOfRangeError : public Error {
 public:
  using Error::Error;
};

class InvalidArgumentError : public Error {
 public:
  using Error::Error;
};

// Raised by every device write/trim once an injected crash has fired.
class DeviceCrashedError : public Error {
 public:
  using Error::Error;
};

class DeviceFullError : public Error {
 public:
  using Error::Error;
};

// Persistent state that cannot be explained by the crash model.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

class LogFullError : public Error {
 public:
  using Error::Error;
};

template <typename T>
inline void store_le(std::uint8_t* dst, T value) {
  std::memcpy(dst, &value, sizeof(T));
}

template <typename T>
inline T load_le(const std::uint8_t* src) {
  T value;
  std::memcpy(&value, src, sizeof(T));
  return value;
}

std::uint32_t crc32(ByteView data, std::uint32_t seed = 0);

bool is_all_zero(ByteView data);

}  // namespace bminus
