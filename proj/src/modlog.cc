#include "bminus/modlog.h"

namespace bminus {

namespace dl = delta_layout;

std::size_t delta_header_size(const PageGeometry& geometry) {
  return dl::kFixedHeader + (geometry.segment_count() + 7) / 8;
}

std::size_t max_threshold(const PageGeometry& geometry) {
  return kBlockSize - delta_header_size(geometry);
}

void validate_threshold(std::size_t threshold, const PageGeometry& geometry) {
  if (threshold == 0 || threshold > max_threshold(geometry))
    throw InvalidArgumentError("threshold must lie in (0, " + std::to_string(max_threshold(geometry)) +
                               "] for this page geometry");
}

FlushDecision decide_flush(const SegmentTracker& tracker, std::size_t threshold) {
  validate_threshold(threshold, tracker.geometry());
  FlushDecision d;
  d.delta_bytes = tracker.delta_size();
  if (d.delta_bytes == 0)
    d.path = FlushPath::kSkip;
  else if (d.delta_bytes <= threshold)
    d.path = FlushPath::kDeltaLog;
  else
    d.path = FlushPath::kFullReset;
  return d;
}

Bytes encode_delta_block(const DeltaBlock& block, const PageGeometry& geometry) {
  const std::size_t header = delta_header_size(geometry);
  const auto& d = block.delta;
  if (d.f.size() != geometry.segment_count()) throw InvalidArgumentError("delta geometry mismatch");
  if (d.segments.size() != delta_size(d.f, geometry))
    throw InvalidArgumentError("delta payload length disagrees with its segment vector");
  if (header + d.segments.size() > kBlockSize) throw InvalidArgumentError("delta exceeds one block");
  Bytes b(kBlockSize, 0);
  auto* p = b.data();
  store_le<std::uint32_t>(p, dl::kMagic);
  store_le<std::uint64_t>(p + 8, block.page_id);
  store_le<std::uint64_t>(p + 16, block.lsn);
  store_le<std::uint32_t>(p + 24, geometry.page_size);
  store_le<std::uint16_t>(p + 28, static_cast<std::uint16_t>(geometry.segment_size));
  store_le<std::uint16_t>(p + 30, static_cast<std::uint16_t>(d.segments.size()));
  d.f.encode(p + dl::kFixedHeader);
  if (!d.segments.empty()) std::memcpy(p + header, d.segments.data(), d.segments.size());
  store_le<std::uint32_t>(p + 4, crc32(b));
  return b;
}

Bytes encode_empty_delta_block(PageId id, Lsn lsn, const PageGeometry& geometry) {
  return encode_delta_block({id, lsn, Delta{SegmentBits(geometry.segment_count()), {}}}, geometry);
}

std::optional<DeltaBlock> decode_delta_block(ByteView raw, const PageGeometry& geometry) {
  if (raw.size() != kBlockSize || is_all_zero(raw)) return std::nullopt;
  const auto* p = raw.data();
  if (load_le<std::uint32_t>(p) != dl::kMagic) return std::nullopt;
  Bytes copy(raw.begin(), raw.end());
  store_le<std::uint32_t>(copy.data() + 4, 0);
  if (crc32(copy) != load_le<std::uint32_t>(p + 4)) return std::nullopt;
  if (load_le<std::uint32_t>(p + 24) != geometry.page_size ||
      load_le<std::uint16_t>(p + 28) != geometry.segment_size)
    throw CorruptionError("modification log written with a different page geometry");
  DeltaBlock out;
  out.page_id = load_le<std::uint64_t>(p + 8);
  out.lsn = load_le<std::uint64_t>(p + 16);
  const auto k = geometry.segment_count();
  out.delta.f = SegmentBits::decode(k, p + dl::kFixedHeader);
  const std::size_t len = load_le<std::uint16_t>(p + 30);
  const std::size_t header = delta_header_size(geometry);
  if (len != delta_size(out.delta.f, geometry) || header + len > kBlockSize)
    throw CorruptionError("modification log payload disagrees with its segment vector");
  out.delta.segments.assign(p + header, p + header + len);
  return out;
}

Reconstructed reconstruct(const PageImage& base, ByteView raw_modlog, const PageGeometry& geometry) {
  Reconstructed r{base, SegmentBits(geometry.segment_count()), false};
  if (base.empty()) return r;
  const auto block = decode_delta_block(raw_modlog, geometry);
  if (!block) return r;
  if (block->page_id != base.page_id()) throw CorruptionError("modification log names another page");
  if (block->lsn <= base.lsn()) return r;
  Bytes merged = apply_delta(base.bytes(), block->delta, geometry);
  if (!is_valid_page_image(merged)) throw CorruptionError("reconstructed page fails its checksum");
  r.image = PageImage::deserialize(geometry, merged);
  r.f = block->delta.f;
  r.applied = true;
  return r;
}

ModLog::ModLog(ShadowStore& shadow, PageGeometry geometry, std::size_t threshold)
    : shadow_(shadow), geometry_(geometry), threshold_(threshold) {
  validate_threshold(threshold_, geometry_);
}

void ModLog::flush_delta(PageId id, const PageImage& sealed, const SegmentTracker& tracker) {
  DeltaBlock block{id, sealed.lsn(), extract_delta(sealed.bytes(), tracker)};
  shadow_.write_modlog(id, encode_delta_block(block, geometry_));
}

void ModLog::flush_full_reset(PageId id, const PageImage& sealed, SegmentTracker& tracker) {
  shadow_.flush_page(id, sealed.bytes());
  shadow_.write_modlog(id, encode_empty_delta_block(id, sealed.lsn(), geometry_));
  tracker.clear();
}

}  // namespace bminus
