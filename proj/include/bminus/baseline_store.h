#pragma once

#include <mutex>
#include <optional>
#include <vector>

#include "bminus/metrics.h"
#include "bminus/page.h"

namespace bminus {

// Conventional shadowing for comparison: each flush writes the page to a
// freshly allocated slot, then persists the page-table block holding its
// mapping (tagged e), then trims and frees the old slot.
//
// Table block layout (4096 bytes): u32 magic "BMPT" | u32 crc | u64 seq |
// u64 first_page_id | 509 x u64 entries, entry = slot index + 1, 0 = unmapped.
// Each table block has two ping-pong locations; the valid one with the
// higher seq wins.
class BaselineStore {
 public:
  static constexpr std::uint32_t kMagic = 0x54504d42;  // "BMPT"
  static constexpr std::size_t kHeaderSize = 24;
  static constexpr std::size_t kEntriesPerBlock = (kBlockSize - kHeaderSize) / 8;

  static std::uint64_t table_blocks_for(std::uint64_t max_pages) {
    return (max_pages + kEntriesPerBlock - 1) / kEntriesPerBlock;
  }

  BaselineStore(IoAccountant& io, PageGeometry geometry, Lba table_base, Lba pool_base,
                std::uint64_t max_pages, std::uint64_t slot_count);

  // Rebuilds mapping and free list from the persisted table.
  void open();
  std::optional<PageImage> load_page(PageId id);
  void flush_page(PageId id, ByteView sealed);

  std::uint64_t max_pages() const { return max_pages_; }
  std::uint64_t free_slots() const;

 private:
  Lba slot_lba(std::uint64_t slot) const { return pool_base_ + slot * geometry_.blocks(); }
  void write_table_block(std::uint64_t tb);

  IoAccountant& io_;
  PageGeometry geometry_;
  Lba table_base_;
  Lba pool_base_;
  std::uint64_t max_pages_;
  std::uint64_t slot_count_;

  mutable std::mutex mu_;
  std::vector<std::uint64_t> mapping_;  // slot + 1, 0 = none
  std::vector<std::uint64_t> free_;
  std::vector<std::uint64_t> table_seq_;
  std::vector<std::uint8_t> table_slot_;  // location holding the current copy
  std::vector<std::unique_ptr<std::mutex>> table_mu_;
};

}  // namespace bminus
