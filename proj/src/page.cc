#include "bminus/page.h"

#include <algorithm>
#include <string>

namespace bminus {

namespace pl = page_layout;

void PageGeometry::validate() const {
  if (page_size < kBlockSize || page_size % kBlockSize != 0 || page_size > 32768)
    throw InvalidArgumentError("page size must be a multiple of 4096 up to 32768");
  if (segment_size < pl::kHeaderSize || segment_size > page_size)
    throw InvalidArgumentError("segment size must hold the page header");
}

std::uint32_t SegmentBits::count() const {
  std::uint32_t n = 0;
  for (auto w : words_) n += static_cast<std::uint32_t>(std::popcount(w));
  return n;
}

bool SegmentBits::none() const {
  return std::all_of(words_.begin(), words_.end(), [](std::uint64_t w) { return w == 0; });
}

void SegmentBits::reset() { std::fill(words_.begin(), words_.end(), 0); }

void SegmentBits::set_all() {
  for (std::uint32_t i = 0; i < k_; ++i) set(i);
}

bool SegmentBits::contains(const SegmentBits& other) const {
  if (other.k_ != k_) return false;
  for (std::size_t i = 0; i < words_.size(); ++i)
    if ((other.words_[i] & ~words_[i]) != 0) return false;
  return true;
}

void SegmentBits::encode(std::uint8_t* out) const {
  std::memset(out, 0, encoded_size());
  for (std::uint32_t i = 0; i < k_; ++i)
    if (test(i)) out[i / 8] |= static_cast<std::uint8_t>(1U << (i % 8));
}

SegmentBits SegmentBits::decode(std::uint32_t k, const std::uint8_t* in) {
  SegmentBits bits(k);
  for (std::uint32_t i = 0; i < k; ++i)
    if (in[i / 8] & (1U << (i % 8))) bits.set(i);
  return bits;
}

void SegmentTracker::mark_dirty(std::uint32_t offset, std::uint32_t length) {
  if (static_cast<std::uint64_t>(offset) + length > geometry_.page_size)
    throw OutOfRangeError("dirty range beyond page end");
  if (length == 0) return;
  const std::uint32_t first = offset / geometry_.segment_size;
  const std::uint32_t last = (offset + length - 1) / geometry_.segment_size;
  for (std::uint32_t i = first; i <= last; ++i) bits_.set(i);
}

void SegmentTracker::assign(SegmentBits bits) {
  if (bits.size() != geometry_.segment_count())
    throw InvalidArgumentError("segment vector width mismatch");
  bits_ = std::move(bits);
}

std::size_t delta_size(const SegmentBits& f, const PageGeometry& geometry) {
  std::size_t total = 0;
  for (std::uint32_t i = 0; i < f.size(); ++i)
    if (f.test(i)) total += geometry.segment_length(i);
  return total;
}

std::size_t SegmentTracker::delta_size() const { return bminus::delta_size(bits_, geometry_); }

Delta extract_delta(ByteView mem, const SegmentTracker& tracker) {
  const auto& geo = tracker.geometry();
  if (mem.size() != geo.page_size) throw InvalidArgumentError("page image size mismatch");
  Delta d{tracker.bits(), {}};
  d.segments.reserve(tracker.delta_size());
  for (std::uint32_t i = 0; i < geo.segment_count(); ++i) {
    if (!d.f.test(i)) continue;
    const auto* p = mem.data() + geo.segment_offset(i);
    d.segments.insert(d.segments.end(), p, p + geo.segment_length(i));
  }
  return d;
}

void apply_delta_in_place(MutableByteView base, const Delta& delta, const PageGeometry& geometry) {
  if (base.size() != geometry.page_size || delta.f.size() != geometry.segment_count())
    throw InvalidArgumentError("delta geometry mismatch");
  if (delta_size(delta.f, geometry) != delta.segments.size())
    throw InvalidArgumentError("delta payload length disagrees with its segment vector");
  std::size_t pos = 0;
  for (std::uint32_t i = 0; i < geometry.segment_count(); ++i) {
    if (!delta.f.test(i)) continue;
    const auto len = geometry.segment_length(i);
    std::memcpy(base.data() + geometry.segment_offset(i), delta.segments.data() + pos, len);
    pos += len;
  }
}

Bytes apply_delta(ByteView base, const Delta& delta, const PageGeometry& geometry) {
  Bytes out(base.begin(), base.end());
  apply_delta_in_place(out, delta, geometry);
  return out;
}

std::uint32_t page_checksum(ByteView image) {
  static constexpr std::uint8_t kZero[4] = {};
  std::uint32_t c = crc32(image.subspan(0, pl::kChecksumOff));
  c = crc32(ByteView(kZero, 4), c);
  return crc32(image.subspan(pl::kChecksumOff + 4), c);
}

bool verify_checksum(ByteView image) {
  if (image.size() < pl::kHeaderSize + pl::kTrailerSize) return false;
  return load_le<std::uint32_t>(image.data() + pl::kChecksumOff) == page_checksum(image);
}

bool is_valid_page_image(ByteView image) {
  if (image.size() < pl::kHeaderSize + pl::kTrailerSize) return false;
  if (load_le<std::uint32_t>(image.data()) != pl::kMagic) return false;
  if (load_le<std::uint32_t>(image.data() + pl::kSizeOff) != image.size()) return false;
  const auto* tr = image.data() + image.size() - pl::kTrailerSize;
  if (load_le<std::uint32_t>(tr + 8) != pl::kTrailerMagic) return false;
  if (load_le<std::uint64_t>(tr) != load_le<std::uint64_t>(image.data() + pl::kLsnOff)) return false;
  return verify_checksum(image);
}

PageImage PageImage::fresh(PageGeometry geometry, PageId id, std::uint16_t level) {
  PageImage p(geometry);
  PageEditor(p, nullptr).format(id, level);
  return p;
}

PageImage PageImage::from_bytes(PageGeometry geometry, ByteView bytes) {
  if (bytes.size() != geometry.page_size) throw InvalidArgumentError("page image size mismatch");
  PageImage p;
  p.geometry_ = geometry;
  p.data_.assign(bytes.begin(), bytes.end());
  return p;
}

PageImage PageImage::deserialize(PageGeometry geometry, ByteView bytes) {
  PageImage p = from_bytes(geometry, bytes);
  if (!is_valid_page_image(bytes)) throw CorruptionError("page image fails checksum");
  if (!p.check_structure()) throw CorruptionError("page image structurally invalid");
  return p;
}

Bytes PageImage::serialize() const {
  Bytes out = data_;
  store_le<std::uint32_t>(out.data() + pl::kChecksumOff, page_checksum(out));
  return out;
}

std::uint32_t PageImage::record_size(std::size_t slot) const {
  const auto off = record_offset(slot);
  return pl::kRecordOverhead + get<std::uint16_t>(off) + get<std::uint16_t>(off + 2);
}

std::string_view PageImage::key_at(std::size_t slot) const {
  const auto off = record_offset(slot);
  const auto klen = get<std::uint16_t>(off);
  return {reinterpret_cast<const char*>(data_.data() + off + 4), klen};
}

std::string_view PageImage::value_at(std::size_t slot) const {
  const auto off = record_offset(slot);
  const auto klen = get<std::uint16_t>(off);
  const auto vlen = get<std::uint16_t>(off + 2);
  return {reinterpret_cast<const char*>(data_.data() + off + 4 + klen), vlen};
}

PageId PageImage::child_at(std::size_t slot) const {
  auto v = value_at(slot);
  if (v.size() != sizeof(PageId)) throw CorruptionError("inner record without a child id");
  return load_le<PageId>(reinterpret_cast<const std::uint8_t*>(v.data()));
}

std::size_t PageImage::lower_bound(std::string_view key) const {
  std::size_t lo = 0, hi = record_count();
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (key_at(mid) < key)
      lo = mid + 1;
    else
      hi = mid;
  }
  return lo;
}

std::optional<std::size_t> PageImage::find(std::string_view key) const {
  const auto i = lower_bound(key);
  if (i < record_count() && key_at(i) == key) return i;
  return std::nullopt;
}

PageId PageImage::route(std::string_view key) const {
  // separators are the first key of their child
  std::size_t lo = 0, hi = record_count();
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (key_at(mid) <= key)
      lo = mid + 1;
    else
      hi = mid;
  }
  return lo == 0 ? leftmost_child() : child_at(lo - 1);
}

std::uint32_t PageImage::contiguous_free() const {
  const auto dir_end = pl::kHeaderSize + static_cast<std::uint32_t>(record_count()) * pl::kSlotSize;
  const auto heap = heap_start();
  return heap > dir_end ? heap - dir_end : 0;
}

bool PageImage::check_structure() const {
  const auto size = geometry_.page_size;
  const auto n = record_count();
  const auto heap = heap_start();
  const auto dir_end = pl::kHeaderSize + n * pl::kSlotSize;
  if (heap < dir_end || heap > size - pl::kTrailerSize) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const auto off = record_offset(i);
    if (off < heap || off + pl::kRecordOverhead > size - pl::kTrailerSize) return false;
    if (off + record_size(i) > size - pl::kTrailerSize) return false;
    if (i > 0 && !(key_at(i - 1) < key_at(i))) return false;
  }
  return true;
}

// Only segments whose bytes actually change are marked.
void PageEditor::write(std::uint32_t off, const void* src, std::uint32_t len) {
  auto* dst = page_.mutable_bytes().data() + off;
  const auto* in = static_cast<const std::uint8_t*>(src);
  if (tracker_ && len > 0) {
    const auto seg = page_.geometry().segment_size;
    std::uint32_t pos = 0;
    while (pos < len) {
      const std::uint32_t abs = off + pos;
      const std::uint32_t chunk = std::min(len - pos, seg - abs % seg);
      if (std::memcmp(dst + pos, in + pos, chunk) != 0) tracker_->mark_dirty(abs, chunk);
      pos += chunk;
    }
  }
  std::memmove(dst, in, len);
}

void PageEditor::format(PageId id, std::uint16_t level) {
  auto bytes = page_.mutable_bytes();
  const auto size = page_.geometry().page_size;
  std::fill(bytes.begin(), bytes.end(), 0);
  store_le<std::uint32_t>(bytes.data() + pl::kMagicOff, pl::kMagic);
  store_le<std::uint64_t>(bytes.data() + pl::kPageIdOff, id);
  store_le<std::uint16_t>(bytes.data() + pl::kLevelOff, level);
  store_le<std::uint32_t>(bytes.data() + pl::kHeapOff, size - pl::kTrailerSize);
  store_le<std::uint64_t>(bytes.data() + pl::kRightOff, kNoPage);
  store_le<std::uint64_t>(bytes.data() + pl::kLeftmostOff, kNoPage);
  store_le<std::uint32_t>(bytes.data() + pl::kSizeOff, size);
  auto* tr = bytes.data() + size - pl::kTrailerSize;
  store_le<std::uint32_t>(tr + 8, pl::kTrailerMagic);
  store_le<std::uint32_t>(tr + 12, static_cast<std::uint32_t>(id));
  if (tracker_) tracker_->mark_all();
}

void PageEditor::set_lsn(Lsn lsn) {
  put<std::uint64_t>(pl::kLsnOff, lsn);
  put<std::uint64_t>(page_.geometry().page_size - pl::kTrailerSize, lsn);
}

void PageEditor::set_right_sibling(PageId id) { put<std::uint64_t>(pl::kRightOff, id); }
void PageEditor::set_leftmost_child(PageId id) { put<std::uint64_t>(pl::kLeftmostOff, id); }

std::uint32_t PageEditor::allocate(std::uint32_t len) {
  const auto heap = page_.heap_start() - len;
  put<std::uint32_t>(pl::kHeapOff, heap);
  return heap;
}

void PageEditor::compact(std::optional<std::size_t> skip_slot) {
  const auto size = page_.geometry().page_size;
  const auto n = page_.record_count();
  Bytes heap_img(size, 0);
  std::vector<std::uint16_t> offsets(n, 0);
  std::uint32_t heap = size - pl::kTrailerSize;
  const auto bytes = page_.bytes();
  for (std::size_t i = 0; i < n; ++i) {
    if (skip_slot && *skip_slot == i) continue;
    const auto off = page_.record_offset(i);
    const auto len = page_.record_size(i);
    heap -= len;
    std::memcpy(heap_img.data() + heap, bytes.data() + off, len);
    offsets[i] = static_cast<std::uint16_t>(heap);
  }
  const auto dir_end = pl::kHeaderSize + static_cast<std::uint32_t>(n) * pl::kSlotSize;
  // free gap is zeroed so it compresses away
  write(dir_end, heap_img.data() + dir_end, size - pl::kTrailerSize - dir_end);
  if (n > 0) write(pl::kHeaderSize, offsets.data(), static_cast<std::uint32_t>(n) * pl::kSlotSize);
  put<std::uint32_t>(pl::kHeapOff, heap);
  put<std::uint32_t>(pl::kFragOff, 0);
}

bool PageEditor::insert(std::size_t slot, std::string_view key, std::string_view value) {
  if (key.size() > kMaxKeySize || value.size() > 0xFFFF) return false;
  const auto n = page_.record_count();
  if (n >= 0xFFFF) return false;
  const auto rec = pl::kRecordOverhead + static_cast<std::uint32_t>(key.size() + value.size());
  const auto need = rec + pl::kSlotSize;
  if (page_.contiguous_free() < need) {
    if (page_.free_space() < need) return false;
    compact(std::nullopt);
  }
  const auto off = allocate(rec);
  std::uint8_t hdr[4];
  store_le<std::uint16_t>(hdr, static_cast<std::uint16_t>(key.size()));
  store_le<std::uint16_t>(hdr + 2, static_cast<std::uint16_t>(value.size()));
  write(off, hdr, 4);
  if (!key.empty()) write(off + 4, key.data(), static_cast<std::uint32_t>(key.size()));
  if (!value.empty())
    write(off + 4 + static_cast<std::uint32_t>(key.size()), value.data(),
          static_cast<std::uint32_t>(value.size()));

  auto* base = page_.mutable_bytes().data();
  const auto slot_off = pl::kHeaderSize + static_cast<std::uint32_t>(slot) * pl::kSlotSize;
  const auto tail = static_cast<std::uint32_t>(n - slot) * pl::kSlotSize;
  std::memmove(base + slot_off + pl::kSlotSize, base + slot_off, tail);
  store_le<std::uint16_t>(base + slot_off, static_cast<std::uint16_t>(off));
  if (tracker_) tracker_->mark_dirty(slot_off, tail + pl::kSlotSize);
  put<std::uint16_t>(pl::kCountOff, static_cast<std::uint16_t>(n + 1));
  return true;
}

bool PageEditor::update(std::size_t slot, std::string_view value) {
  if (value.size() > 0xFFFF) return false;
  const auto off = page_.record_offset(slot);
  const auto klen = page_.key_at(slot).size();
  const auto old_vlen = page_.value_at(slot).size();
  const auto val_off = off + 4 + static_cast<std::uint32_t>(klen);
  if (value.size() <= old_vlen) {
    if (value.size() != old_vlen) {
      put<std::uint16_t>(off + 2, static_cast<std::uint16_t>(value.size()));
      put<std::uint32_t>(pl::kFragOff,
                         page_.fragmented_bytes() + static_cast<std::uint32_t>(old_vlen - value.size()));
    }
    if (!value.empty()) write(val_off, value.data(), static_cast<std::uint32_t>(value.size()));
    return true;
  }
  const auto old_rec = page_.record_size(slot);
  const auto rec = pl::kRecordOverhead + static_cast<std::uint32_t>(klen + value.size());
  if (page_.contiguous_free() < rec) {
    if (page_.free_space() + old_rec < rec) return false;
    std::string key(page_.key_at(slot));
    compact(slot);
    return place(slot, key, value, rec);
  }
  std::string key(page_.key_at(slot));
  put<std::uint32_t>(pl::kFragOff, page_.fragmented_bytes() + old_rec);
  return place(slot, key, value, rec);
}

bool PageEditor::place(std::size_t slot, std::string_view key, std::string_view value,
                       std::uint32_t rec) {
  const auto off = allocate(rec);
  std::uint8_t hdr[4];
  store_le<std::uint16_t>(hdr, static_cast<std::uint16_t>(key.size()));
  store_le<std::uint16_t>(hdr + 2, static_cast<std::uint16_t>(value.size()));
  write(off, hdr, 4);
  if (!key.empty()) write(off + 4, key.data(), static_cast<std::uint32_t>(key.size()));
  if (!value.empty())
    write(off + 4 + static_cast<std::uint32_t>(key.size()), value.data(),
          static_cast<std::uint32_t>(value.size()));
  put<std::uint16_t>(pl::kHeaderSize + static_cast<std::uint32_t>(slot) * pl::kSlotSize,
                     static_cast<std::uint16_t>(off));
  return true;
}

void PageEditor::erase(std::size_t slot) {
  const auto n = page_.record_count();
  const auto rec = page_.record_size(slot);
  auto* base = page_.mutable_bytes().data();
  const auto slot_off = pl::kHeaderSize + static_cast<std::uint32_t>(slot) * pl::kSlotSize;
  const auto tail = static_cast<std::uint32_t>(n - slot - 1) * pl::kSlotSize;
  std::memmove(base + slot_off, base + slot_off + pl::kSlotSize, tail);
  store_le<std::uint16_t>(base + slot_off + tail, 0);
  if (tracker_) tracker_->mark_dirty(slot_off, tail + pl::kSlotSize);
  put<std::uint16_t>(pl::kCountOff, static_cast<std::uint16_t>(n - 1));
  put<std::uint32_t>(pl::kFragOff, page_.fragmented_bytes() + rec);
}

void PageEditor::rebuild(std::uint16_t level,
                         const std::vector<std::pair<std::string, std::string>>& records,
                         PageId right_sibling, PageId leftmost_child) {
  const auto geo = page_.geometry();
  const PageId id = page_.page_id();
  const Lsn lsn = page_.lsn();
  PageImage fresh = PageImage::fresh(geo, id, level);
  {
    PageEditor ed(fresh, nullptr);
    ed.set_lsn(lsn);
    ed.set_right_sibling(right_sibling);
    ed.set_leftmost_child(leftmost_child);
    for (std::size_t i = 0; i < records.size(); ++i)
      if (!ed.insert(i, records[i].first, records[i].second))
        throw InvalidArgumentError("records overflow page");
  }
  assign(fresh.bytes());
}

void PageEditor::assign(ByteView image) {
  if (image.size() != page_.geometry().page_size)
    throw InvalidArgumentError("page image size mismatch");
  std::memcpy(page_.mutable_bytes().data(), image.data(), image.size());
  if (tracker_) tracker_->mark_all();
}

void PageEditor::seal() {
  put<std::uint32_t>(pl::kChecksumOff, page_checksum(page_.bytes()));
}

}  // namespace bminus
