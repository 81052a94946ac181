#pragma once

#include <optional>

#include "bminus/page.h"
#include "bminus/shadow_store.h"

namespace bminus {

// Modification-log block, little-endian, exactly 4096 bytes:
//
//   u32 magic "BMDL" | u32 crc | u64 page_id | u64 lsn | u32 page_size |
//   u16 segment_size | u16 payload_len | f (ceil(k/8) bytes, bit i = byte
//   i/8, bit i%8) | payload (dirty segments in ascending order) | zeros
//
// The crc covers the whole block with the crc field zeroed. An all-zero
// block means "no delta".
namespace delta_layout {
inline constexpr std::uint32_t kMagic = 0x4c444d42;  // "BMDL"
inline constexpr std::size_t kFixedHeader = 32;
}  // namespace delta_layout

std::size_t delta_header_size(const PageGeometry& geometry);
// Largest usable threshold: what fits next to the header.
std::size_t max_threshold(const PageGeometry& geometry);
void validate_threshold(std::size_t threshold, const PageGeometry& geometry);

enum class FlushPath { kSkip, kDeltaLog, kFullReset };

struct FlushDecision {
  FlushPath path = FlushPath::kSkip;
  std::size_t delta_bytes = 0;
};

FlushDecision decide_flush(const SegmentTracker& tracker, std::size_t threshold);

struct DeltaBlock {
  PageId page_id = 0;
  Lsn lsn = 0;
  Delta delta;
};

Bytes encode_delta_block(const DeltaBlock& block, const PageGeometry& geometry);
Bytes encode_empty_delta_block(PageId id, Lsn lsn, const PageGeometry& geometry);
// nullopt for the all-zero block or one failing its crc.
std::optional<DeltaBlock> decode_delta_block(ByteView raw, const PageGeometry& geometry);

struct Reconstructed {
  PageImage image;
  // f restored from an applied block; all-zero when the block was ignored
  SegmentBits f;
  bool applied = false;
};

// Applies the delta when it is newer than the base image.
Reconstructed reconstruct(const PageImage& base, ByteView raw_modlog, const PageGeometry& geometry);

// Writes cumulative deltas and full-page resets for one store.
class ModLog {
 public:
  ModLog(ShadowStore& shadow, PageGeometry geometry, std::size_t threshold);

  // The page image passed in must be sealed (checksum stamped).
  void flush_delta(PageId id, const PageImage& sealed, const SegmentTracker& tracker);
  void flush_full_reset(PageId id, const PageImage& sealed, SegmentTracker& tracker);

  std::size_t threshold() const { return threshold_; }

 private:
  ShadowStore& shadow_;
  PageGeometry geometry_;
  std::size_t threshold_;
};

}  // namespace bminus
