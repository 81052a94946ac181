#pragma once

#include <array>
#include <atomic>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "bminus/device.h"

namespace bminus {

enum class WriteCategory : std::uint8_t { kNone = 0, kLog = 1, kPage = 2, kExtra = 3 };
// What a write or trim targets; used by the crash harness to find boundaries.
enum class WriteKind : std::uint8_t { kOther, kSlot, kModlog, kLog, kSuperblock, kTable };

inline constexpr std::size_t kCategories = 3;  // log, pg, e
std::string_view category_name(WriteCategory c);
std::string_view kind_name(WriteKind k);

struct WriteTag {
  WriteCategory category = WriteCategory::kNone;
  WriteKind kind = WriteKind::kOther;
};

struct TraceEntry {
  enum class Op : std::uint8_t { kWrite, kTrim };
  // Number of block writes issued before this entry.
  std::uint64_t write_index = 0;
  Op op = Op::kWrite;
  Lba lba = 0;
  WriteCategory category = WriteCategory::kNone;
  WriteKind kind = WriteKind::kOther;
  std::uint32_t physical = 0;
};

// Counter snapshot: per-category logical and physical bytes plus user bytes
// and the raw device counter for the conservation check.
struct IoCounters {
  std::uint64_t user_bytes = 0;
  std::array<std::uint64_t, kCategories> logical{};
  std::array<std::uint64_t, kCategories> physical{};
  std::uint64_t device_physical = 0;
  std::uint64_t device_logical = 0;
};

// Front door to the device: every write names its category, and the
// physical bytes reported by the device for that exact write are credited
// to it.
class IoAccountant {
 public:
  explicit IoAccountant(SimDevice& device) : device_(device) {}

  std::size_t write(Lba lba, ByteView data, WriteTag tag);
  void trim(Lba lba, WriteKind kind);
  void read(Lba lba, MutableByteView out) const { device_.read_blocks(lba, out); }
  void sync() { device_.sync(); }

  // Raw hook; rejects untagged writes.
  void record_write(WriteTag tag, std::uint64_t logical, std::uint64_t physical);
  void add_user_bytes(std::uint64_t n) { user_bytes_.fetch_add(n, std::memory_order_relaxed); }

  IoCounters snapshot() const;

  void set_tracing(bool on);
  std::vector<TraceEntry> trace() const;
  void clear_trace();

  SimDevice& device() { return device_; }
  const SimDevice& device() const { return device_; }

 private:
  SimDevice& device_;
  std::atomic<std::uint64_t> user_bytes_{0};
  std::array<std::atomic<std::uint64_t>, kCategories> logical_{};
  std::array<std::atomic<std::uint64_t>, kCategories> physical_{};

  std::atomic<bool> tracing_{false};
  mutable std::mutex trace_mu_;
  std::vector<TraceEntry> trace_;
  std::uint64_t writes_seen_ = 0;
};

struct CategoryReport {
  std::uint64_t logical = 0;
  std::uint64_t physical = 0;
  double wa = 0.0;     // logical / W_usr
  double alpha = 0.0;  // physical / logical, 0 when nothing written
};

struct WAReport {
  std::uint64_t user_bytes = 0;
  CategoryReport log, pg, e;
  double wa_total = 0.0;           // sum of physical / W_usr
  double wa_from_components = 0.0;  // sum of alpha * WA
  std::uint64_t device_physical_delta = 0;

  std::uint64_t physical_sum() const { return log.physical + pg.physical + e.physical; }
  bool conserved() const { return physical_sum() == device_physical_delta; }
  double logical_wa() const {
    return static_cast<double>(log.logical + pg.logical + e.logical) / static_cast<double>(user_bytes);
  }
};

// Deltas between two snapshots. Throws InvalidArgumentError when W_usr = 0.
WAReport make_report(const IoCounters& begin, const IoCounters& end);

struct StorageOverheadReport {
  std::uint64_t pages = 0;
  std::uint32_t page_size = 0;
  std::uint64_t delta_bytes = 0;          // sum of logical |delta_i|
  std::uint64_t delta_resident_bytes = 0;  // device-resident bytes of modlog blocks
  double beta = 0.0;
  double beta_compressed = 0.0;
  std::uint64_t logical_footprint = 0;
  std::uint64_t physical_footprint = 0;
};

StorageOverheadReport make_overhead_report(std::uint64_t pages, std::uint32_t page_size,
                                           std::uint64_t delta_bytes,
                                           std::uint64_t delta_resident_bytes);

}  // namespace bminus
