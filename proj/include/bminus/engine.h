#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "bminus/baseline_store.h"
#include "bminus/buffer_pool.h"
#include "bminus/metrics.h"
#include "bminus/modlog.h"
#include "bminus/redo_log.h"
#include "bminus/shadow_store.h"

namespace bminus {

enum class StoreMode : std::uint8_t { kBminus = 0, kBaseline = 1 };

std::string_view mode_name(StoreMode m);
std::string_view log_mode_name(LogMode m);
std::string_view policy_name(FlushPolicy p);

struct EngineConfig {
  std::uint32_t page_size = 8192;
  std::uint32_t segment_size = 128;
  std::size_t threshold = 2048;
  std::size_t cache_bytes = std::size_t{64} << 20;
  unsigned flusher_count = 4;
  StoreMode mode = StoreMode::kBminus;
  LogMode log_mode = LogMode::kSparse;
  FlushPolicy log_policy = FlushPolicy::kPerCommit;
  std::chrono::milliseconds timer_interval{1000};
  // Share of the device given to the redo log ring.
  double log_fraction = 0.125;
  // Background flushers start when this share of frames is dirty.
  double dirty_target = 0.25;
  // Checkpoint when the log ring is this full.
  double checkpoint_log_usage = 0.5;
  // Log a checkpoint may leave behind for deltas still backed only by it.
  double log_retain_usage = 0.25;

  PageGeometry geometry() const { return {page_size, segment_size}; }
  std::size_t cache_frames() const { return cache_bytes / page_size; }
  void validate() const;
};

// LBA map: [superblock x2][log ring][page regions | page table + slot pool].
struct DeviceLayout {
  Lba log_base = 2;
  std::uint64_t log_blocks = 0;
  Lba page_base = 0;
  std::uint64_t max_pages = 0;
  // baseline only
  Lba table_base = 0;
  Lba pool_base = 0;
  std::uint64_t slot_count = 0;

  static DeviceLayout compute(const EngineConfig& config, std::uint64_t logical_blocks);
};

struct EngineStats {
  std::uint64_t pages = 0;
  std::uint64_t height = 0;
  std::uint64_t commits = 0;
  std::uint64_t delta_flushes = 0;
  std::uint64_t full_flushes = 0;
  std::uint64_t wal_deferred = 0;
  std::uint64_t checkpoints = 0;
  std::uint64_t forced_resets = 0;  // full resets issued to release log space
  std::uint64_t evictions = 0;
  std::uint64_t eviction_flushes = 0;
  std::uint64_t cache_misses = 0;
  std::uint64_t forced_log_flushes = 0;
  std::uint64_t log_flushes = 0;
  std::uint64_t torn_slots_detected = 0;
  std::uint64_t double_valid_resolved = 0;
  std::uint64_t replayed_records = 0;
  std::uint64_t replayed_txns = 0;
  std::uint64_t discarded_records = 0;
  Lsn next_lsn = 0;
};

class Engine;

class Transaction {
 public:
  enum class State { kActive, kCommitted, kAborted };

  void put(std::string_view key, std::string_view value);
  void del(std::string_view key);

  std::uint64_t id() const { return id_; }
  State state() const { return state_; }
  std::size_t size() const { return ops_.size(); }

 private:
  friend class Engine;
  struct Op {
    bool erase;
    std::string key;
    std::string value;
  };
  Transaction(std::uint64_t id, std::size_t max_footprint) : id_(id), max_footprint_(max_footprint) {}
  void check_active() const;

  std::uint64_t id_;
  std::size_t max_footprint_;
  State state_ = State::kActive;
  std::vector<Op> ops_;
};

class Engine {
 public:
  // Fresh device: formats an empty tree. Otherwise recovers from the
  // superblock and redo log.
  static std::unique_ptr<Engine> open(const EngineConfig& config, SimDevice& device);
  // Destruction without close() behaves like power loss: nothing is flushed.
  ~Engine();

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  Transaction begin();
  void commit(Transaction& txn);
  void abort(Transaction& txn);

  // Single-operation transactions.
  void put(std::string_view key, std::string_view value);
  void del(std::string_view key);

  std::optional<std::string> get(std::string_view key);
  std::vector<std::pair<std::string, std::string>> scan(std::string_view start, std::size_t count);

  // One pass of background flushing; returns pages flushed.
  std::size_t flush_worker_pass(std::size_t max_pages = ~std::size_t{0});
  void checkpoint();
  void close();
  // Stops flushers and the log timer so counters hold still.
  void quiesce();

  EngineStats stats() const;
  StorageOverheadReport beta_scan();
  // Walks the whole tree checking key order, separators and sibling links.
  bool check_tree();

  IoAccountant& io() { return io_; }
  const EngineConfig& config() const { return config_; }
  const DeviceLayout& layout() const { return layout_; }
  RedoLog& log() { return *log_; }
  std::uint64_t page_count() const { return next_page_.load(); }
  bool failed() const { return failed_.load(); }

  // Swap in a different cache size (bench populate uses a large one);
  // flushes everything first.
  void resize_cache(std::size_t cache_bytes);
  void set_flusher_count(unsigned n);

 private:
  Engine(const EngineConfig& config, SimDevice& device);

  struct Path;

  void format_fresh();
  void recover(const Superblock& sb);
  void start_background();
  void stop_background();
  void make_pool(std::size_t frames);

  void load_frame(PageId id, Frame& f);
  bool flush_hook(Frame& f);

  Frame* fetch(PageId id) { return pool_->fetch(id); }
  PageId allocate_page();

  // Tree mutation; caller holds commit_mu_.
  void apply_put(std::uint64_t txn, std::string_view key, std::string_view value);
  void apply_erase(std::uint64_t txn, std::string_view key);
  void split(Path& path, std::uint64_t txn);
  Lsn next_lsn() { return lsn_++; }
  void log_image(std::uint64_t txn, Frame* f);
  void redo(const LogRecord& rec);

  void checkpoint_locked();
  std::uint64_t retained_head(std::uint64_t sealed);
  void set_pin(PageId id, Lsn lsn);
  Lsn oldest_pin();
  void maybe_checkpoint();
  void flusher_main();
  void fail();
  void check_open() const;
  std::size_t safe_footprint() const;

  EngineConfig config_;
  PageGeometry geometry_;
  IoAccountant io_;
  DeviceLayout layout_;
  std::unique_ptr<ShadowStore> shadow_;
  std::unique_ptr<ModLog> modlog_;
  std::unique_ptr<BaselineStore> baseline_;
  std::unique_ptr<RedoLog> log_;
  std::unique_ptr<BufferPool> pool_;
  SuperblockStore superblock_store_;
  Superblock sb_;

  std::mutex commit_mu_;
  Lsn lsn_ = 1;
  std::atomic<std::uint64_t> next_txn_{1};
  std::atomic<std::uint64_t> next_page_{0};
  PageId root_ = 0;
  Lsn last_checkpoint_appended_ = 0;
  std::atomic<std::size_t> max_key_{8};
  std::atomic<bool> checkpoint_wanted_{false};
  // Per page: oldest lsn whose change may live only in its delta block
  // (0 = none). A torn rewrite of that block needs the log from there on.
  std::mutex pin_mu_;
  std::vector<Lsn> pins_;
  std::atomic<std::uint64_t> forced_resets_{0};

  std::atomic<bool> failed_{false};
  std::atomic<bool> closed_{false};

  std::vector<std::thread> flushers_;
  std::mutex bg_mu_;
  std::condition_variable bg_cv_;
  bool bg_stop_ = false;

  std::atomic<std::uint64_t> commits_{0};
  std::atomic<std::uint64_t> delta_flushes_{0};
  std::atomic<std::uint64_t> full_flushes_{0};
  std::atomic<std::uint64_t> wal_deferred_{0};
  std::atomic<std::uint64_t> checkpoints_{0};
  std::atomic<std::uint64_t> forced_log_{0};
  std::uint64_t replayed_records_ = 0;
  std::uint64_t replayed_txns_ = 0;
  std::uint64_t discarded_records_ = 0;
  std::uint64_t evictions_base_ = 0;
  std::uint64_t eviction_flushes_base_ = 0;
  std::uint64_t misses_base_ = 0;
};

}  // namespace bminus
