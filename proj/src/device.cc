#include "bminus/device.h"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cmath>
#include <fstream>
#include <map>
#include <thread>

namespace bminus {

namespace {

constexpr std::uint64_t kSuperheaderSize = 4096;

std::uint64_t table_offset() { return kSuperheaderSize; }

std::uint64_t data_offset(std::uint64_t logical_blocks) {
  const std::uint64_t table = logical_blocks * 4;
  return kSuperheaderSize + (table + kBlockSize - 1) / kBlockSize * kBlockSize;
}

void pread_all(int fd, void* buf, std::size_t n, std::uint64_t off) {
  auto* p = static_cast<std::uint8_t*>(buf);
  while (n > 0) {
    const ssize_t r = ::pread(fd, p, n, static_cast<off_t>(off));
    if (r < 0) throw Error("device image read failed");
    if (r == 0) {
      std::memset(p, 0, n);
      return;
    }
    p += r;
    n -= static_cast<std::size_t>(r);
    off += static_cast<std::uint64_t>(r);
  }
}

void pwrite_all(int fd, const void* buf, std::size_t n, std::uint64_t off) {
  const auto* p = static_cast<const std::uint8_t*>(buf);
  while (n > 0) {
    const ssize_t r = ::pwrite(fd, p, n, static_cast<off_t>(off));
    if (r <= 0) throw Error("device image write failed");
    p += r;
    n -= static_cast<std::size_t>(r);
    off += static_cast<std::uint64_t>(r);
  }
}

}  // namespace

SimDevice::SimDevice(DeviceConfig config)
    : config_(std::move(config)), stripes_(std::make_unique<Stripe[]>(kStripes)) {
  if (!config_.backing_file.empty()) {
    open_file();
  } else {
    if (config_.logical_blocks == 0) throw InvalidArgumentError("device needs at least one block");
    codec_ = make_codec(config_.codec);
  }
}

SimDevice::~SimDevice() {
  if (fd_ >= 0) {
    try {
      save_stats();
    } catch (...) {
    }
    ::close(fd_);
  }
}

void SimDevice::check_range(Lba lba) const {
  if (lba >= config_.logical_blocks) {
    throw OutOfRangeError("LBA " + std::to_string(lba) + " beyond device capacity of " +
                          std::to_string(config_.logical_blocks) + " blocks");
  }
}

SimDevice::WriteFate SimDevice::next_write_fate(double& tear_fraction) {
  std::lock_guard lk(plan_mu_);
  if (!plan_) return WriteFate::kApply;
  if (writes_since_arm_ < *plan_->crash_after_n_block_writes) {
    ++writes_since_arm_;
    return WriteFate::kApply;
  }
  crashed_.store(true, std::memory_order_release);
  const bool tear = plan_->partial_write_fraction.has_value();
  if (tear) tear_fraction = *plan_->partial_write_fraction;
  plan_.reset();
  return tear ? WriteFate::kTear : WriteFate::kDrop;
}

void SimDevice::load_content(Lba lba, std::uint8_t* out) const {
  if (fd_ >= 0) {
    if (file_sizes_[lba] == 0) {
      std::memset(out, 0, kBlockSize);
    } else {
      file_read(lba, out);
    }
    return;
  }
  auto& s = stripe(lba);
  auto it = s.blocks.find(lba);
  if (it == s.blocks.end()) {
    std::memset(out, 0, kBlockSize);
  } else {
    std::memcpy(out, it->second.data->data(), kBlockSize);
  }
}

std::size_t SimDevice::write_block(Lba lba, ByteView data) {
  check_range(lba);
  if (data.size() != kBlockSize) throw InvalidArgumentError("write_block needs exactly 4096 bytes");
  std::shared_lock st(state_mu_);
  if (crashed()) throw DeviceCrashedError("device crashed; writes rejected until reopen");

  double tear_fraction = 0.0;
  const WriteFate fate = next_write_fate(tear_fraction);
  if (fate == WriteFate::kDrop) throw DeviceCrashedError("device crashed before this write");

  Block content;
  std::size_t size = 0;
  auto& s = stripe(lba);
  std::unique_lock lk(s.mu);
  if (fate == WriteFate::kTear) {
    load_content(lba, content.data());
    const auto cut = static_cast<std::size_t>(std::lround(kBlockSize * tear_fraction));
    std::memcpy(content.data(), data.data(), std::min(cut, kBlockSize));
  } else {
    std::memcpy(content.data(), data.data(), kBlockSize);
  }
  size = codec_->compressed_size(content);

  std::uint32_t old_size = 0;
  if (fd_ >= 0) {
    old_size = file_sizes_[lba];
  } else if (auto it = s.blocks.find(lba); it != s.blocks.end()) {
    old_size = it->second.size;
  }
  if (config_.physical_capacity_bytes != 0) {
    const auto resident = resident_.load();
    if (resident - old_size + size > config_.physical_capacity_bytes) {
      throw DeviceFullError("physical capacity exhausted");
    }
  }

  if (fd_ >= 0) {
    file_write(lba, content.data(), static_cast<std::uint32_t>(size));
  } else {
    auto& slot = s.blocks[lba];
    if (!slot.data) slot.data = std::make_unique<Block>();
    *slot.data = content;
    slot.size = static_cast<std::uint32_t>(size);
  }
  resident_.fetch_add(size);
  resident_.fetch_sub(old_size);
  logical_written_.fetch_add(kBlockSize);
  physical_written_.fetch_add(size);
  block_writes_.fetch_add(1);
  lk.unlock();

  if (fate == WriteFate::kTear) throw DeviceCrashedError("device crashed during this write");
  return size;
}

void SimDevice::read_block(Lba lba, MutableByteView out) const {
  read_blocks(lba, out);
}

Block SimDevice::read_block(Lba lba) const {
  Block b;
  read_blocks(lba, b);
  return b;
}

void SimDevice::read_blocks(Lba first, MutableByteView out) const {
  if (out.size() % kBlockSize != 0 || out.empty()) {
    throw InvalidArgumentError("read size must be a positive multiple of 4096");
  }
  const std::size_t count = out.size() / kBlockSize;
  check_range(first);
  check_range(first + count - 1);
  std::shared_lock st(state_mu_);
  for (std::size_t i = 0; i < count; ++i) {
    const Lba lba = first + i;
    std::lock_guard lk(stripe(lba).mu);
    load_content(lba, out.data() + i * kBlockSize);
  }
  logical_read_.fetch_add(out.size());
  read_requests_.fetch_add(1);
}

void SimDevice::trim(Lba lba) {
  check_range(lba);
  std::shared_lock st(state_mu_);
  if (crashed()) throw DeviceCrashedError("device crashed; trims rejected until reopen");
  {
    std::lock_guard lk(plan_mu_);
    if (plan_ && plan_->suppress_pending_trims &&
        writes_since_arm_ >= *plan_->crash_after_n_block_writes) {
      trims_.fetch_add(1);
      return;
    }
  }
  auto& s = stripe(lba);
  std::lock_guard lk(s.mu);
  std::uint32_t old_size = 0;
  if (fd_ >= 0) {
    old_size = file_sizes_[lba];
    if (old_size != 0) file_clear(lba);
  } else if (auto it = s.blocks.find(lba); it != s.blocks.end()) {
    old_size = it->second.size;
    s.blocks.erase(it);
  }
  resident_.fetch_sub(old_size);
  trims_.fetch_add(1);
}

void SimDevice::sync() {
  if (crashed()) throw DeviceCrashedError("device crashed; sync rejected");
  if (config_.sync_latency.count() > 0) std::this_thread::sleep_for(config_.sync_latency);
  if (crashed()) throw DeviceCrashedError("device crashed; sync rejected");
  syncs_.fetch_add(1);
}

DeviceStats SimDevice::stats() const {
  std::unique_lock st(state_mu_);
  DeviceStats s;
  s.logical_bytes_written = logical_written_.load();
  s.physical_bytes_written = physical_written_.load();
  s.logical_bytes_read = logical_read_.load();
  s.trims_issued = trims_.load();
  s.physical_bytes_resident = resident_.load();
  s.block_writes = block_writes_.load();
  s.read_requests = read_requests_.load();
  s.syncs = syncs_.load();
  return s;
}

std::size_t SimDevice::resident_bytes(Lba lba) const {
  check_range(lba);
  auto& s = stripe(lba);
  std::lock_guard lk(s.mu);
  if (fd_ >= 0) return file_sizes_[lba];
  auto it = s.blocks.find(lba);
  return it == s.blocks.end() ? 0 : it->second.size;
}

void SimDevice::inject_crash(const FaultPlan& plan) {
  std::lock_guard lk(plan_mu_);
  if (!plan.crash_after_n_block_writes) {
    crashed_.store(true, std::memory_order_release);
    plan_.reset();
    return;
  }
  if (plan.partial_write_fraction &&
      (*plan.partial_write_fraction <= 0.0 || *plan.partial_write_fraction >= 1.0)) {
    throw InvalidArgumentError("partial_write_fraction must lie in (0,1)");
  }
  plan_ = plan;
  writes_since_arm_ = 0;
}

void SimDevice::reopen() {
  std::unique_lock st(state_mu_);
  std::lock_guard lk(plan_mu_);
  plan_.reset();
  crashed_.store(false, std::memory_order_release);
}

// --- file-backed mode -------------------------------------------------------

void SimDevice::open_file() {
  struct stat sb {};
  const bool exists = ::stat(config_.backing_file.c_str(), &sb) == 0;
  fd_ = ::open(config_.backing_file.c_str(), O_RDWR | O_CREAT, 0644);
  if (fd_ < 0) throw Error("cannot open device image " + config_.backing_file);

  std::uint8_t header[kSuperheaderSize] = {};
  if (exists && sb.st_size >= static_cast<off_t>(kSuperheaderSize)) {
    pread_all(fd_, header, sizeof(header), 0);
    if (std::memcmp(header, kImageMagic, sizeof(kImageMagic)) != 0) {
      throw CorruptionError("not a device image: " + config_.backing_file);
    }
    config_.logical_blocks = load_le<std::uint64_t>(header + 16);
    const auto codec_id = load_le<std::uint32_t>(header + 12);
    const auto level = static_cast<int>(load_le<std::uint32_t>(header + 24));
    codec_ = make_codec(codec_id, level);
    file_sizes_.assign(config_.logical_blocks, 0);
    pread_all(fd_, file_sizes_.data(), file_sizes_.size() * 4, table_offset());
    std::uint64_t resident = 0;
    for (auto s : file_sizes_) resident += s;
    resident_.store(resident);

    std::ifstream in(config_.backing_file + ".stats");
    std::map<std::string, std::uint64_t> kv;
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      kv[line.substr(0, eq)] = std::stoull(line.substr(eq + 1));
    }
    logical_written_ = kv["logical_bytes_written"];
    physical_written_ = kv["physical_bytes_written"];
    logical_read_ = kv["logical_bytes_read"];
    trims_ = kv["trims_issued"];
    block_writes_ = kv["block_writes"];
    read_requests_ = kv["read_requests"];
    syncs_ = kv["syncs"];
    return;
  }

  if (config_.logical_blocks == 0) throw InvalidArgumentError("device needs at least one block");
  codec_ = make_codec(config_.codec);
  std::memcpy(header, kImageMagic, sizeof(kImageMagic));
  store_le<std::uint32_t>(header + 8, 1);  // format version
  store_le<std::uint32_t>(header + 12, codec_->id());
  store_le<std::uint64_t>(header + 16, config_.logical_blocks);
  const auto* deflate = dynamic_cast<const DeflateCodec*>(codec_.get());
  store_le<std::uint32_t>(header + 24, deflate ? static_cast<std::uint32_t>(deflate->level()) : 0);
  pwrite_all(fd_, header, sizeof(header), 0);
  const auto total = data_offset(config_.logical_blocks) + config_.logical_blocks * kBlockSize;
  if (::ftruncate(fd_, static_cast<off_t>(total)) != 0) throw Error("cannot size device image");
  file_sizes_.assign(config_.logical_blocks, 0);
}

void SimDevice::file_read(Lba lba, std::uint8_t* out) const {
  pread_all(fd_, out, kBlockSize, data_offset(config_.logical_blocks) + lba * kBlockSize);
}

void SimDevice::file_write(Lba lba, const std::uint8_t* data, std::uint32_t size) {
  pwrite_all(fd_, data, kBlockSize, data_offset(config_.logical_blocks) + lba * kBlockSize);
  pwrite_all(fd_, &size, 4, table_offset() + lba * 4);
  file_sizes_[lba] = size;
}

void SimDevice::file_clear(Lba lba) {
  const std::uint32_t zero = 0;
  pwrite_all(fd_, &zero, 4, table_offset() + lba * 4);
  file_sizes_[lba] = 0;
}

std::uint32_t SimDevice::file_size_of(Lba lba) const { return file_sizes_[lba]; }

void SimDevice::save_stats() const {
  if (fd_ < 0) return;
  std::ofstream out(config_.backing_file + ".stats", std::ios::trunc);
  out << "logical_bytes_written=" << logical_written_.load() << '\n'
      << "physical_bytes_written=" << physical_written_.load() << '\n'
      << "logical_bytes_read=" << logical_read_.load() << '\n'
      << "trims_issued=" << trims_.load() << '\n'
      << "physical_bytes_resident=" << resident_.load() << '\n'
      << "block_writes=" << block_writes_.load() << '\n'
      << "read_requests=" << read_requests_.load() << '\n'
      << "syncs=" << syncs_.load() << '\n';
}

}  // namespace bminus
