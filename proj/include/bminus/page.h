#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bminus/common.h"

namespace bminus {

// Page size and the dirty-tracking segment size. Segment i covers
// [i * segment_size, min((i + 1) * segment_size, page_size)); the final
// segment is short when segment_size does not divide page_size.
struct PageGeometry {
  std::uint32_t page_size = 8192;
  std::uint32_t segment_size = 128;

  std::uint32_t segment_count() const { return (page_size + segment_size - 1) / segment_size; }
  std::uint32_t segment_offset(std::uint32_t i) const { return i * segment_size; }
  std::uint32_t segment_length(std::uint32_t i) const {
    const std::uint32_t begin = segment_offset(i);
    return std::min(segment_size, page_size - begin);
  }
  std::uint32_t blocks() const { return page_size / static_cast<std::uint32_t>(kBlockSize); }
  void validate() const;

  friend bool operator==(const PageGeometry&, const PageGeometry&) = default;
};

// Fixed-width bit vector with one bit per segment.
class SegmentBits {
 public:
  SegmentBits() = default;
  explicit SegmentBits(std::uint32_t k) : k_(k), words_((k + 63) / 64, 0) {}

  std::uint32_t size() const { return k_; }
  void set(std::uint32_t i) { words_[i / 64] |= std::uint64_t{1} << (i % 64); }
  bool test(std::uint32_t i) const { return (words_[i / 64] >> (i % 64)) & 1U; }
  std::uint32_t count() const;
  bool none() const;
  void reset();
  void set_all();
  // Every bit set in `other` is also set here.
  bool contains(const SegmentBits& other) const;

  std::size_t encoded_size() const { return (k_ + 7) / 8; }
  void encode(std::uint8_t* out) const;
  static SegmentBits decode(std::uint32_t k, const std::uint8_t* in);

  friend bool operator==(const SegmentBits&, const SegmentBits&) = default;

 private:
  std::uint32_t k_ = 0;
  std::vector<std::uint64_t> words_;
};

// The per-page vector f: bit i is set iff segment i changed since the last
// full-page flush.
class SegmentTracker {
 public:
  SegmentTracker() = default;
  explicit SegmentTracker(PageGeometry geometry)
      : geometry_(geometry), bits_(geometry.segment_count()) {}

  void mark_dirty(std::uint32_t offset, std::uint32_t length);
  void mark_all() { bits_.set_all(); }
  void clear() { bits_.reset(); }
  void assign(SegmentBits bits);

  // Sum of the lengths of all dirty segments.
  std::size_t delta_size() const;
  const SegmentBits& bits() const { return bits_; }
  const PageGeometry& geometry() const { return geometry_; }

 private:
  PageGeometry geometry_;
  SegmentBits bits_;
};

// The dirty segments of an in-memory image, concatenated in ascending order.
struct Delta {
  SegmentBits f;
  Bytes segments;
};

Delta extract_delta(ByteView mem, const SegmentTracker& tracker);
Bytes apply_delta(ByteView base, const Delta& delta, const PageGeometry& geometry);
void apply_delta_in_place(MutableByteView base, const Delta& delta, const PageGeometry& geometry);
std::size_t delta_size(const SegmentBits& f, const PageGeometry& geometry);

// On-page layout, little-endian:
//
//   [0, 64)            header
//   [64, 64 + 2n)      slot directory, u16 record offsets in key order
//   ...                free space
//   [heap, size - 16)  records: u16 key_len | u16 value_len | key | value
//   [size - 16, size)  trailer: u64 lsn | u32 magic | u32 page_id (low bits)
//
// Header: u32 magic | u32 checksum | u64 page_id | u64 lsn | u16 level |
// u16 record_count | u32 heap_start | u64 right_sibling | u64 leftmost_child |
// u32 fragmented_bytes | u32 page_size | 8 reserved bytes.
//
// The checksum is CRC-32 over the whole page with the checksum field zeroed.
// Inner pages store child page ids as 8-byte values; leftmost_child covers
// keys below the first separator.
namespace page_layout {
inline constexpr std::uint32_t kMagic = 0x47504d42;  // "BMPG"
inline constexpr std::uint32_t kTrailerMagic = 0x52544d42;  // "BMTR"
inline constexpr std::uint32_t kHeaderSize = 64;
inline constexpr std::uint32_t kTrailerSize = 16;
inline constexpr std::uint32_t kSlotSize = 2;
inline constexpr std::uint32_t kRecordOverhead = 4;

inline constexpr std::uint32_t kMagicOff = 0;
inline constexpr std::uint32_t kChecksumOff = 4;
inline constexpr std::uint32_t kPageIdOff = 8;
inline constexpr std::uint32_t kLsnOff = 16;
inline constexpr std::uint32_t kLevelOff = 24;
inline constexpr std::uint32_t kCountOff = 26;
inline constexpr std::uint32_t kHeapOff = 28;
inline constexpr std::uint32_t kRightOff = 32;
inline constexpr std::uint32_t kLeftmostOff = 40;
inline constexpr std::uint32_t kFragOff = 48;
inline constexpr std::uint32_t kSizeOff = 52;

// Bytes a record consumes including its slot.
inline constexpr std::uint32_t footprint(std::size_t key_len, std::size_t value_len) {
  return static_cast<std::uint32_t>(kRecordOverhead + key_len + value_len + kSlotSize);
}
// Largest footprint accepted; three such records always fit an empty page,
// which keeps byte-balanced splits valid.
inline constexpr std::uint32_t max_footprint(std::uint32_t page_size) {
  return (page_size - kHeaderSize - kTrailerSize) / 3;
}
inline constexpr std::uint32_t usable_bytes(std::uint32_t page_size) {
  return page_size - kHeaderSize - kTrailerSize;
}
}  // namespace page_layout

inline constexpr std::size_t kMaxKeySize = 2048;

std::uint32_t page_checksum(ByteView image);
bool verify_checksum(ByteView image);
// Checksum, magic and trailer agree; what slot resolution calls "valid".
bool is_valid_page_image(ByteView image);

class PageImage {
 public:
  PageImage() = default;
  explicit PageImage(PageGeometry geometry) : geometry_(geometry), data_(geometry.page_size, 0) {}

  // A formatted page with no records.
  static PageImage fresh(PageGeometry geometry, PageId id, std::uint16_t level);
  // Copies bytes without any validation.
  static PageImage from_bytes(PageGeometry geometry, ByteView bytes);
  // Validates checksum and structure; throws CorruptionError.
  static PageImage deserialize(PageGeometry geometry, ByteView bytes);
  // Image with the checksum stamped in.
  Bytes serialize() const;

  PageId page_id() const { return get<std::uint64_t>(page_layout::kPageIdOff); }
  Lsn lsn() const { return get<std::uint64_t>(page_layout::kLsnOff); }
  std::uint16_t level() const { return get<std::uint16_t>(page_layout::kLevelOff); }
  bool is_leaf() const { return level() == 0; }
  std::size_t record_count() const { return get<std::uint16_t>(page_layout::kCountOff); }
  std::uint32_t heap_start() const { return get<std::uint32_t>(page_layout::kHeapOff); }
  std::uint32_t fragmented_bytes() const { return get<std::uint32_t>(page_layout::kFragOff); }
  PageId right_sibling() const { return get<std::uint64_t>(page_layout::kRightOff); }
  PageId leftmost_child() const { return get<std::uint64_t>(page_layout::kLeftmostOff); }

  std::uint32_t record_offset(std::size_t slot) const {
    return get<std::uint16_t>(page_layout::kHeaderSize + static_cast<std::uint32_t>(slot) * 2);
  }
  std::uint32_t record_size(std::size_t slot) const;
  std::string_view key_at(std::size_t slot) const;
  std::string_view value_at(std::size_t slot) const;
  PageId child_at(std::size_t slot) const;

  // First slot whose key is >= key.
  std::size_t lower_bound(std::string_view key) const;
  std::optional<std::size_t> find(std::string_view key) const;
  // Inner pages: the child covering `key`.
  PageId route(std::string_view key) const;

  std::uint32_t contiguous_free() const;
  std::uint32_t free_space() const { return contiguous_free() + fragmented_bytes(); }

  // Keys strictly ascending and every offset within the record area.
  bool check_structure() const;

  const PageGeometry& geometry() const { return geometry_; }
  ByteView bytes() const { return data_; }
  MutableByteView mutable_bytes() { return data_; }
  bool empty() const { return data_.empty(); }

  friend bool operator==(const PageImage& a, const PageImage& b) { return a.data_ == b.data_; }

 private:
  template <typename T>
  T get(std::uint32_t off) const {
    return load_le<T>(data_.data() + off);
  }

  PageGeometry geometry_;
  Bytes data_;
};

// All byte mutations of a page go through an editor, which reports every
// touched range to the tracker.
class PageEditor {
 public:
  PageEditor(PageImage& page, SegmentTracker* tracker) : page_(page), tracker_(tracker) {}

  void format(PageId id, std::uint16_t level);
  void set_lsn(Lsn lsn);
  void set_right_sibling(PageId id);
  void set_leftmost_child(PageId id);

  // Return false when the page lacks room even after compaction.
  bool insert(std::size_t slot, std::string_view key, std::string_view value);
  bool update(std::size_t slot, std::string_view value);
  void erase(std::size_t slot);

  // Rewrites the page to hold exactly `records` (sorted), keeping page_id
  // and lsn. Used by splits.
  void rebuild(std::uint16_t level, const std::vector<std::pair<std::string, std::string>>& records,
               PageId right_sibling, PageId leftmost_child);
  // Replaces every byte; used when redo replay installs an image.
  void assign(ByteView image);
  // Stamps the checksum into the in-memory image.
  void seal();

 private:
  void write(std::uint32_t off, const void* src, std::uint32_t len);
  template <typename T>
  void put(std::uint32_t off, T value) {
    write(off, &value, sizeof(T));
  }
  void compact(std::optional<std::size_t> skip_slot);
  std::uint32_t allocate(std::uint32_t len);
  bool place(std::size_t slot, std::string_view key, std::string_view value, std::uint32_t rec);

  PageImage& page_;
  SegmentTracker* tracker_;
};

}  // namespace bminus
