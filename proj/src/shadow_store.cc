#include "bminus/shadow_store.h"

namespace bminus {

SlotResolution resolve_slots(ByteView img0, ByteView img1) {
  const bool zero0 = is_all_zero(img0), zero1 = is_all_zero(img1);
  const bool ok0 = !zero0 && is_valid_page_image(img0);
  const bool ok1 = !zero1 && is_valid_page_image(img1);
  SlotResolution r;
  r.torn_seen = (!zero0 && !ok0) || (!zero1 && !ok1);
  if (ok0 && ok1) {
    r.both_valid = true;
    const auto lsn0 = load_le<Lsn>(img0.data() + page_layout::kLsnOff);
    const auto lsn1 = load_le<Lsn>(img1.data() + page_layout::kLsnOff);
    r.slot = lsn1 > lsn0 ? SlotId::kSlot1 : SlotId::kSlot0;
  } else if (ok0) {
    r.slot = SlotId::kSlot0;
  } else if (ok1) {
    r.slot = SlotId::kSlot1;
  } else if (zero0 || zero1) {
    r.slot = SlotId::kEmpty;
  } else {
    throw CorruptionError("both page slots fail verification");
  }
  return r;
}

SlotId resolve_valid_slot(ByteView img0, ByteView img1) { return resolve_slots(img0, img1).slot; }

SlotDirectory::SlotDirectory(std::uint64_t pages)
    : size_(pages), entries_(std::make_unique<std::atomic<std::uint8_t>[]>(pages)) {
  forget_all();
}

void SlotDirectory::forget_all() {
  for (std::uint64_t i = 0; i < size_; ++i) entries_[i].store(0, std::memory_order_relaxed);
}

ShadowStore::ShadowStore(IoAccountant& io, PageGeometry geometry, Lba base, std::uint64_t max_pages)
    : io_(io), geometry_(geometry), base_(base), max_pages_(max_pages), directory_(max_pages) {
  geometry_.validate();
  if (base_ + max_pages_ * region_blocks() > io_.device().logical_blocks())
    throw InvalidArgumentError("page regions exceed device capacity");
}

void ShadowStore::check_page(PageId id) const {
  if (id >= max_pages_)
    throw OutOfRangeError("page " + std::to_string(id) + " beyond configured page capacity");
}

PageRegion ShadowStore::region(PageId id) const {
  check_page(id);
  const Lba start = base_ + id * region_blocks();
  return {id, start, start + geometry_.blocks(), start + 2 * geometry_.blocks()};
}

LoadedPage ShadowStore::load_page(PageId id) {
  const auto reg = region(id);
  const std::size_t ps = geometry_.page_size;
  Bytes buf(2 * ps + kBlockSize);
  io_.read(reg.slot0, buf);
  const ByteView img0(buf.data(), ps), img1(buf.data() + ps, ps);
  const auto res = resolve_slots(img0, img1);
  if (res.torn_seen) torn_.fetch_add(1);
  if (res.both_valid) double_valid_.fetch_add(1);

  LoadedPage out;
  out.slot = res.slot;
  out.modlog.assign(buf.begin() + 2 * ps, buf.end());
  if (res.slot == SlotId::kEmpty) {
    directory_.set(id, SlotId::kSlot0);
    return out;
  }
  const ByteView chosen = res.slot == SlotId::kSlot0 ? img0 : img1;
  out.image = PageImage::deserialize(geometry_, chosen);
  if (out.image.page_id() != id) throw CorruptionError("slot holds a different page");
  directory_.set(id, res.slot);
  return out;
}

void ShadowStore::flush_page(PageId id, ByteView sealed) {
  if (sealed.size() != geometry_.page_size) throw InvalidArgumentError("page image size mismatch");
  const auto reg = region(id);
  if (!directory_.known(id)) load_page(id);
  const SlotId valid = directory_.valid(id);
  const Lba target = valid == SlotId::kSlot0 ? reg.slot1 : reg.slot0;
  const Lba stale = valid == SlotId::kSlot0 ? reg.slot0 : reg.slot1;
  const auto nblocks = geometry_.blocks();
  for (std::uint32_t b = 0; b < nblocks; ++b)
    io_.write(target + b, sealed.subspan(b * kBlockSize, kBlockSize),
              {WriteCategory::kPage, WriteKind::kSlot});
  for (std::uint32_t b = 0; b < nblocks; ++b) io_.trim(stale + b, WriteKind::kSlot);
  directory_.set(id, valid == SlotId::kSlot0 ? SlotId::kSlot1 : SlotId::kSlot0);
}

void ShadowStore::write_modlog(PageId id, ByteView block) {
  io_.write(region(id).modlog, block, {WriteCategory::kPage, WriteKind::kModlog});
}

namespace {
constexpr std::size_t kSbCrcOff = 4;
}

Bytes SuperblockStore::encode(const Superblock& sb) {
  Bytes b(kBlockSize, 0);
  auto* p = b.data();
  store_le<std::uint32_t>(p, kMagic);
  store_le<std::uint64_t>(p + 8, sb.sequence);
  store_le<std::uint32_t>(p + 16, sb.page_size);
  store_le<std::uint32_t>(p + 20, sb.segment_size);
  p[24] = sb.mode;
  p[25] = sb.log_mode;
  store_le<std::uint64_t>(p + 32, sb.root);
  store_le<std::uint64_t>(p + 40, sb.page_count);
  store_le<std::uint64_t>(p + 48, sb.checkpoint_lsn);
  store_le<std::uint64_t>(p + 56, sb.next_lsn);
  store_le<std::uint64_t>(p + 64, sb.log_head);
  store_le<std::uint64_t>(p + 72, sb.log_head_seq);
  store_le<std::uint64_t>(p + 80, sb.next_txn);
  store_le<std::uint32_t>(p + kSbCrcOff, crc32(b));
  return b;
}

std::optional<Superblock> SuperblockStore::decode(ByteView block) {
  if (block.size() != kBlockSize || load_le<std::uint32_t>(block.data()) != kMagic) return std::nullopt;
  Bytes copy(block.begin(), block.end());
  const auto stored = load_le<std::uint32_t>(copy.data() + kSbCrcOff);
  store_le<std::uint32_t>(copy.data() + kSbCrcOff, 0);
  if (crc32(copy) != stored) return std::nullopt;
  const auto* p = block.data();
  Superblock sb;
  sb.sequence = load_le<std::uint64_t>(p + 8);
  sb.page_size = load_le<std::uint32_t>(p + 16);
  sb.segment_size = load_le<std::uint32_t>(p + 20);
  sb.mode = p[24];
  sb.log_mode = p[25];
  sb.root = load_le<std::uint64_t>(p + 32);
  sb.page_count = load_le<std::uint64_t>(p + 40);
  sb.checkpoint_lsn = load_le<std::uint64_t>(p + 48);
  sb.next_lsn = load_le<std::uint64_t>(p + 56);
  sb.log_head = load_le<std::uint64_t>(p + 64);
  sb.log_head_seq = load_le<std::uint64_t>(p + 72);
  sb.next_txn = load_le<std::uint64_t>(p + 80);
  return sb;
}

std::optional<Superblock> SuperblockStore::load() {
  Bytes buf(2 * kBlockSize);
  io_.read(kLba0, buf);
  const auto a = decode(ByteView(buf.data(), kBlockSize));
  const auto b = decode(ByteView(buf.data() + kBlockSize, kBlockSize));
  const bool za = is_all_zero(ByteView(buf.data(), kBlockSize));
  const bool zb = is_all_zero(ByteView(buf.data() + kBlockSize, kBlockSize));
  if (!a && !b) {
    if (za || zb) {
      valid_slot_ = 0;
      return std::nullopt;
    }
    throw CorruptionError("both superblock slots fail verification");
  }
  if (a && (!b || a->sequence >= b->sequence)) {
    valid_slot_ = 0;
    return a;
  }
  valid_slot_ = 1;
  return b;
}

void SuperblockStore::store(Superblock& sb) {
  sb.sequence += 1;
  const auto block = encode(sb);
  const Lba target = valid_slot_ == 0 ? kLba1 : kLba0;
  const Lba stale = valid_slot_ == 0 ? kLba0 : kLba1;
  io_.write(target, block, {WriteCategory::kPage, WriteKind::kSuperblock});
  io_.trim(stale, WriteKind::kSuperblock);
  valid_slot_ = 1 - valid_slot_;
}

}  // namespace bminus
