#pragma once

#include <memory>
#include <string>
#include <string_view>

#include "bminus/common.h"

namespace bminus {

// Lossless per-block codec run by the simulated device on its write path.
// Only the output size matters to the device; implementations must be
// deterministic so physical accounting is reproducible.
class BlockCodec {
 public:
  virtual ~BlockCodec() = default;

  virtual std::uint32_t id() const = 0;
  virtual std::string_view name() const = 0;
  virtual std::size_t compressed_size(ByteView block) const = 0;
  // Upper bound on compressed_size(b) - b.size() for a 4KB block.
  virtual std::size_t max_overhead() const = 0;
};

// zlib-framed deflate, the class of engine found in compressing drives.
class DeflateCodec final : public BlockCodec {
 public:
  explicit DeflateCodec(int level = 1);

  std::uint32_t id() const override { return 1; }
  std::string_view name() const override { return "deflate"; }
  std::size_t compressed_size(ByteView block) const override;
  std::size_t max_overhead() const override;
  int level() const { return level_; }

 private:
  int level_;
};

// Zero-run-length coder: literal spans cost 2 + len bytes, runs of at least
// eight zero bytes cost 3 bytes, plus a 4-byte frame header. Much cheaper than
// deflate and stands in for it in crash and property tests.
class ZeroRunCodec final : public BlockCodec {
 public:
  std::uint32_t id() const override { return 2; }
  std::string_view name() const override { return "zero-run"; }
  std::size_t compressed_size(ByteView block) const override;
  std::size_t max_overhead() const override { return 6; }
};

// Accepts "deflate", "deflate:<level>", "zero-run".
std::unique_ptr<BlockCodec> make_codec(std::string_view spec);
std::unique_ptr<BlockCodec> make_codec(std::uint32_t id, int level);

}  // namespace bminus
