#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "bminus/codec.h"
#include "bminus/common.h"

namespace bminus {

using Block = std::array<std::uint8_t, kBlockSize>;

struct DeviceConfig {
  std::uint64_t logical_blocks = 1 << 16;
  // Post-compression capacity; 0 means unbounded.
  std::uint64_t physical_capacity_bytes = 0;
  std::string codec = "deflate";
  // Time a sync() takes to acknowledge; models the fsync round trip.
  std::chrono::microseconds sync_latency{0};
  // Empty for the in-memory store, otherwise the block image path.
  std::string backing_file;
};

struct DeviceStats {
  std::uint64_t logical_bytes_written = 0;
  std::uint64_t physical_bytes_written = 0;
  std::uint64_t logical_bytes_read = 0;
  std::uint64_t trims_issued = 0;
  std::uint64_t physical_bytes_resident = 0;
  std::uint64_t block_writes = 0;
  std::uint64_t read_requests = 0;
  std::uint64_t syncs = 0;
};

struct FaultPlan {
  // Number of further block writes that complete before the crash fires.
  // Unset means crash immediately.
  std::optional<std::uint64_t> crash_after_n_block_writes;
  // Tears the first write past the cut: bytes [0, round(4096*f)) are new,
  // the rest keep the prior content. Unset drops that write entirely.
  std::optional<double> partial_write_fraction;
  // Trims issued after the cut (before the crash fires) are acknowledged
  // but have no effect.
  bool suppress_pending_trims = false;
};

// Block device with transparent per-4KB compression. Every write is charged
// the exact codec output size; reads of unwritten or trimmed blocks return
// zeros. Safe for concurrent use; operations on one block are linearizable.
class SimDevice {
 public:
  explicit SimDevice(DeviceConfig config);
  ~SimDevice();

  SimDevice(const SimDevice&) = delete;
  SimDevice& operator=(const SimDevice&) = delete;

  // Returns the physical bytes charged for this write.
  std::size_t write_block(Lba lba, ByteView data);
  void read_block(Lba lba, MutableByteView out) const;
  Block read_block(Lba lba) const;
  // One request covering `out.size() / 4096` consecutive blocks.
  void read_blocks(Lba first, MutableByteView out) const;
  void trim(Lba lba);
  // Durability barrier; blocks for the configured sync latency.
  void sync();

  DeviceStats stats() const;
  std::size_t resident_bytes(Lba lba) const;

  void inject_crash(const FaultPlan& plan);
  bool crashed() const { return crashed_.load(std::memory_order_acquire); }
  // Clears the crashed state; surviving content is what the next user sees.
  void reopen();

  std::uint64_t logical_blocks() const { return config_.logical_blocks; }
  const BlockCodec& codec() const { return *codec_; }
  const DeviceConfig& config() const { return config_; }

  // File-backed mode: persist the stats sidecar next to the image.
  void save_stats() const;

 private:
  struct Stored {
    std::unique_ptr<Block> data;
    std::uint32_t size = 0;
  };
  struct Stripe {
    mutable std::mutex mu;
    std::unordered_map<Lba, Stored> blocks;
  };
  static constexpr std::size_t kStripes = 64;

  void check_range(Lba lba) const;
  Stripe& stripe(Lba lba) const { return stripes_[lba % kStripes]; }
  void load_content(Lba lba, std::uint8_t* out) const;

  // Fault-plan bookkeeping; returns how the next write must be handled.
  enum class WriteFate { kApply, kTear, kDrop };
  WriteFate next_write_fate(double& tear_fraction);

  void open_file();
  void file_read(Lba lba, std::uint8_t* out) const;
  void file_write(Lba lba, const std::uint8_t* data, std::uint32_t size);
  void file_clear(Lba lba);
  std::uint32_t file_size_of(Lba lba) const;

  DeviceConfig config_;
  std::unique_ptr<BlockCodec> codec_;
  mutable std::shared_mutex state_mu_;
  mutable std::unique_ptr<Stripe[]> stripes_;

  std::atomic<bool> crashed_{false};
  std::mutex plan_mu_;
  std::optional<FaultPlan> plan_;
  std::uint64_t writes_since_arm_ = 0;

  std::atomic<std::uint64_t> logical_written_{0};
  std::atomic<std::uint64_t> physical_written_{0};
  mutable std::atomic<std::uint64_t> logical_read_{0};
  mutable std::atomic<std::uint64_t> read_requests_{0};
  std::atomic<std::uint64_t> trims_{0};
  std::atomic<std::uint64_t> resident_{0};
  std::atomic<std::uint64_t> block_writes_{0};
  std::atomic<std::uint64_t> syncs_{0};

  // File-backed mode.
  int fd_ = -1;
  std::vector<std::uint32_t> file_sizes_;
};

inline constexpr char kImageMagic[8] = {'C', 'S', 'D', 'S', 'I', 'M', '0', '1'};

}  // namespace bminus
