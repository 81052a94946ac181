#pragma once

#include <atomic>
#include <memory>
#include <optional>

#include "bminus/metrics.h"
#include "bminus/page.h"

namespace bminus {

// Fixed LBA extent of one page: slot0, slot1, then the modification-log block.
struct PageRegion {
  PageId page_id = 0;
  Lba slot0 = 0;
  Lba slot1 = 0;
  Lba modlog = 0;
};

enum class SlotId : std::uint8_t { kSlot0 = 0, kSlot1 = 1, kEmpty = 2 };

struct SlotResolution {
  SlotId slot = SlotId::kEmpty;
  bool torn_seen = false;     // a nonzero slot failed verification
  bool both_valid = false;    // settled by comparing LSNs
};

// Zero or failing slots lose; two valid slots go to the higher LSN.
// Throws CorruptionError when both are nonzero and invalid.
SlotResolution resolve_slots(ByteView img0, ByteView img1);
SlotId resolve_valid_slot(ByteView img0, ByteView img1);

// In-memory valid-slot map, one entry per page, rebuilt lazily on load.
class SlotDirectory {
 public:
  explicit SlotDirectory(std::uint64_t pages);

  bool known(PageId id) const { return entries_[id].load(std::memory_order_acquire) != 0; }
  // Valid for known entries only.
  SlotId valid(PageId id) const {
    return entries_[id].load(std::memory_order_acquire) == 2 ? SlotId::kSlot1 : SlotId::kSlot0;
  }
  void set(PageId id, SlotId slot) {
    entries_[id].store(slot == SlotId::kSlot1 ? 2 : 1, std::memory_order_release);
  }
  void forget_all();
  std::uint64_t size() const { return size_; }

 private:
  std::uint64_t size_;
  std::unique_ptr<std::atomic<std::uint8_t>[]> entries_;
};

struct LoadedPage {
  PageImage image;    // empty() when the page was never durably written
  Bytes modlog;       // raw 4096-byte modification-log block
  SlotId slot = SlotId::kEmpty;
};

class ShadowStore {
 public:
  ShadowStore(IoAccountant& io, PageGeometry geometry, Lba base, std::uint64_t max_pages);

  PageRegion region(PageId id) const;
  std::uint64_t region_blocks() const { return 2 * geometry_.blocks() + 1; }
  std::uint64_t max_pages() const { return max_pages_; }
  Lba base() const { return base_; }

  // One read request covering both slots and the modlog block.
  LoadedPage load_page(PageId id);
  // Writes `sealed` to the stale slot, trims the other slot, flips the entry.
  void flush_page(PageId id, ByteView sealed);
  void write_modlog(PageId id, ByteView block);

  SlotDirectory& directory() { return directory_; }
  std::uint64_t torn_slots_detected() const { return torn_.load(); }
  std::uint64_t double_valid_resolved() const { return double_valid_.load(); }

 private:
  void check_page(PageId id) const;

  IoAccountant& io_;
  PageGeometry geometry_;
  Lba base_;
  std::uint64_t max_pages_;
  SlotDirectory directory_;
  std::atomic<std::uint64_t> torn_{0};
  std::atomic<std::uint64_t> double_valid_{0};
};

// Tree metadata, kept in a two-slot shadow region at LBA 0 and 1.
struct Superblock {
  std::uint64_t sequence = 0;
  std::uint32_t page_size = 0;
  std::uint32_t segment_size = 0;
  std::uint8_t mode = 0;
  std::uint8_t log_mode = 0;
  PageId root = 0;
  std::uint64_t page_count = 0;
  Lsn checkpoint_lsn = 0;
  Lsn next_lsn = 1;
  Lba log_head = 0;           // offset of the first live log block within the log region
  std::uint64_t log_head_seq = 1;
  std::uint64_t next_txn = 1;
};

class SuperblockStore {
 public:
  static constexpr std::uint32_t kMagic = 0x42534d42;  // "BMSB"
  static constexpr Lba kLba0 = 0;
  static constexpr Lba kLba1 = 1;

  explicit SuperblockStore(IoAccountant& io) : io_(io) {}

  std::optional<Superblock> load();
  // Bumps the sequence and writes the stale slot, then trims the other.
  void store(Superblock& sb);

  static Bytes encode(const Superblock& sb);
  static std::optional<Superblock> decode(ByteView block);

 private:
  IoAccountant& io_;
  int valid_slot_ = 0;
};

}  // namespace bminus
