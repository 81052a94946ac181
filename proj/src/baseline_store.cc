#include "bminus/baseline_store.h"

#include <algorithm>

namespace bminus {

namespace {

struct TableBlock {
  std::uint64_t seq = 0;
  std::uint64_t first = 0;
  std::vector<std::uint64_t> entries;
};

std::optional<TableBlock> decode_table(ByteView b) {
  if (load_le<std::uint32_t>(b.data()) != BaselineStore::kMagic) return std::nullopt;
  Bytes copy(b.begin(), b.end());
  store_le<std::uint32_t>(copy.data() + 4, 0);
  if (crc32(copy) != load_le<std::uint32_t>(b.data() + 4)) return std::nullopt;
  TableBlock t;
  t.seq = load_le<std::uint64_t>(b.data() + 8);
  t.first = load_le<std::uint64_t>(b.data() + 16);
  t.entries.resize(BaselineStore::kEntriesPerBlock);
  for (std::size_t i = 0; i < t.entries.size(); ++i)
    t.entries[i] = load_le<std::uint64_t>(b.data() + BaselineStore::kHeaderSize + 8 * i);
  return t;
}

}  // namespace

BaselineStore::BaselineStore(IoAccountant& io, PageGeometry geometry, Lba table_base, Lba pool_base,
                             std::uint64_t max_pages, std::uint64_t slot_count)
    : io_(io),
      geometry_(geometry),
      table_base_(table_base),
      pool_base_(pool_base),
      max_pages_(max_pages),
      slot_count_(slot_count) {
  const auto tbs = table_blocks_for(max_pages_);
  if (table_base_ + 2 * tbs > pool_base_ ||
      pool_base_ + slot_count_ * geometry_.blocks() > io_.device().logical_blocks())
    throw InvalidArgumentError("baseline layout exceeds device capacity");
  table_seq_.assign(tbs, 0);
  table_slot_.assign(tbs, 1);
  for (std::uint64_t i = 0; i < tbs; ++i) table_mu_.push_back(std::make_unique<std::mutex>());
  mapping_.assign(max_pages_, 0);
}

void BaselineStore::open() {
  std::lock_guard lk(mu_);
  const auto tbs = table_blocks_for(max_pages_);
  std::fill(mapping_.begin(), mapping_.end(), 0);
  Bytes buf(2 * kBlockSize);
  for (std::uint64_t tb = 0; tb < tbs; ++tb) {
    io_.read(table_base_ + 2 * tb, buf);
    auto a = decode_table(ByteView(buf.data(), kBlockSize));
    auto b = decode_table(ByteView(buf.data() + kBlockSize, kBlockSize));
    const TableBlock* pick = nullptr;
    if (a && (!b || a->seq >= b->seq)) {
      pick = &*a;
      table_slot_[tb] = 0;
    } else if (b) {
      pick = &*b;
      table_slot_[tb] = 1;
    } else {
      table_slot_[tb] = 1;
    }
    table_seq_[tb] = pick ? pick->seq : 0;
    if (!pick) continue;
    for (std::size_t i = 0; i < pick->entries.size(); ++i) {
      const auto page = tb * kEntriesPerBlock + i;
      if (page < max_pages_) mapping_[page] = pick->entries[i];
    }
  }
  std::vector<bool> used(slot_count_, false);
  for (auto m : mapping_) {
    if (m == 0) continue;
    if (m - 1 >= slot_count_) throw CorruptionError("page table points outside the slot pool");
    used[m - 1] = true;
  }
  free_.clear();
  for (std::uint64_t s = slot_count_; s-- > 0;)
    if (!used[s]) free_.push_back(s);
}

std::uint64_t BaselineStore::free_slots() const {
  std::lock_guard lk(mu_);
  return free_.size();
}

std::optional<PageImage> BaselineStore::load_page(PageId id) {
  std::uint64_t m;
  {
    std::lock_guard lk(mu_);
    if (id >= max_pages_) throw OutOfRangeError("page beyond configured page capacity");
    m = mapping_[id];
  }
  if (m == 0) return std::nullopt;
  Bytes buf(geometry_.page_size);
  io_.read(slot_lba(m - 1), buf);
  auto img = PageImage::deserialize(geometry_, buf);
  if (img.page_id() != id) throw CorruptionError("slot holds a different page");
  return img;
}

void BaselineStore::write_table_block(std::uint64_t tb) {
  Bytes b(kBlockSize, 0);
  {
    std::lock_guard lk(mu_);
    store_le<std::uint32_t>(b.data(), kMagic);
    store_le<std::uint64_t>(b.data() + 8, table_seq_[tb] + 1);
    store_le<std::uint64_t>(b.data() + 16, tb * kEntriesPerBlock);
    for (std::size_t i = 0; i < kEntriesPerBlock; ++i) {
      const auto page = tb * kEntriesPerBlock + i;
      if (page >= max_pages_) break;
      store_le<std::uint64_t>(b.data() + kHeaderSize + 8 * i, mapping_[page]);
    }
  }
  store_le<std::uint32_t>(b.data() + 4, crc32(b));
  const std::uint8_t target = table_slot_[tb] ^ 1;
  io_.write(table_base_ + 2 * tb + target, b, {WriteCategory::kExtra, WriteKind::kTable});
  table_slot_[tb] = target;
  table_seq_[tb] += 1;
}

void BaselineStore::flush_page(PageId id, ByteView sealed) {
  if (sealed.size() != geometry_.page_size) throw InvalidArgumentError("page image size mismatch");
  std::uint64_t slot, old;
  {
    std::lock_guard lk(mu_);
    if (id >= max_pages_) throw OutOfRangeError("page beyond configured page capacity");
    if (free_.empty()) throw DeviceFullError("baseline slot pool exhausted");
    slot = free_.back();
    free_.pop_back();
    old = mapping_[id];
  }
  try {
    for (std::uint32_t b = 0; b < geometry_.blocks(); ++b)
      io_.write(slot_lba(slot) + b, sealed.subspan(b * kBlockSize, kBlockSize),
                {WriteCategory::kPage, WriteKind::kSlot});
  } catch (...) {
    std::lock_guard lk(mu_);
    free_.push_back(slot);
    throw;
  }
  const auto tb = id / kEntriesPerBlock;
  {
    std::lock_guard tlk(*table_mu_[tb]);
    {
      std::lock_guard lk(mu_);
      mapping_[id] = slot + 1;
    }
    write_table_block(tb);
  }
  if (old != 0) {
    for (std::uint32_t b = 0; b < geometry_.blocks(); ++b) io_.trim(slot_lba(old - 1) + b, WriteKind::kSlot);
    std::lock_guard lk(mu_);
    free_.push_back(old - 1);
  }
}

}  // namespace bminus
