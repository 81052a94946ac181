#include "bminus/codec.h"

#include <zlib.h>

#include <charconv>

namespace bminus {

namespace {

struct DeflateStream {
  z_stream strm{};
  int level = -100;
  Bytes out;

  ~DeflateStream() {
    if (level != -100) deflateEnd(&strm);
  }

  void ensure(int want) {
    if (level == want) return;
    if (level != -100) deflateEnd(&strm);
    strm = z_stream{};
    if (deflateInit(&strm, want) != Z_OK) throw Error("deflateInit failed");
    level = want;
  }
};

}  // namespace

DeflateCodec::DeflateCodec(int level) : level_(level) {
  if (level < 0 || level > 9) throw InvalidArgumentError("deflate level must be 0..9");
}

std::size_t DeflateCodec::compressed_size(ByteView block) const {
  thread_local DeflateStream ds;
  ds.ensure(level_);
  deflateReset(&ds.strm);
  const auto bound = deflateBound(&ds.strm, static_cast<uLong>(block.size()));
  if (ds.out.size() < bound) ds.out.resize(bound);
  ds.strm.next_in = const_cast<Bytef*>(block.data());
  ds.strm.avail_in = static_cast<uInt>(block.size());
  ds.strm.next_out = ds.out.data();
  ds.strm.avail_out = static_cast<uInt>(ds.out.size());
  if (deflate(&ds.strm, Z_FINISH) != Z_STREAM_END) throw Error("deflate failed");
  return ds.strm.total_out;
}

std::size_t DeflateCodec::max_overhead() const {
  return compressBound(kBlockSize) - kBlockSize;
}

std::size_t ZeroRunCodec::compressed_size(ByteView block) const {
  constexpr std::size_t kMinRun = 8;
  std::size_t size = 4;
  std::size_t literal = 0;
  std::size_t i = 0;
  while (i < block.size()) {
    if (block[i] == 0) {
      std::size_t j = i;
      while (j < block.size() && block[j] == 0) ++j;
      const std::size_t run = j - i;
      if (run >= kMinRun) {
        if (literal > 0) size += 2 + literal;
        literal = 0;
        size += 3;
      } else {
        literal += run;
      }
      i = j;
    } else {
      ++literal;
      ++i;
    }
  }
  if (literal > 0) size += 2 + literal;
  return size;
}

std::unique_ptr<BlockCodec> make_codec(std::string_view spec) {
  if (spec == "zero-run") return std::make_unique<ZeroRunCodec>();
  if (spec == "deflate") return std::make_unique<DeflateCodec>();
  if (spec.starts_with("deflate:")) {
    int level = 0;
    const auto digits = spec.substr(8);
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), level);
    if (ec != std::errc{} || ptr != digits.data() + digits.size()) {
      throw InvalidArgumentError("bad deflate level in codec spec: " + std::string(spec));
    }
    return std::make_unique<DeflateCodec>(level);
  }
  throw InvalidArgumentError("unknown codec: " + std::string(spec));
}

std::unique_ptr<BlockCodec> make_codec(std::uint32_t id, int level) {
  switch (id) {
    case 1:
      return std::make_unique<DeflateCodec>(level);
    case 2:
      return std::make_unique<ZeroRunCodec>();
    default:
      throw InvalidArgumentError("unknown codec id " + std::to_string(id));
  }
}

}  // namespace bminus
