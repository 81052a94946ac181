#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "bminus/metrics.h"

namespace bminus {

enum class LogMode : std::uint8_t { kSparse = 0, kPacked = 1 };
enum class FlushPolicy : std::uint8_t { kPerCommit = 0, kTimer = 1 };

enum class RecordKind : std::uint8_t {
  kInsert = 1,
  kUpdate = 2,
  kErase = 3,
  kCommit = 4,
  kCheckpoint = 5,
  kPageImage = 6,  // full after-image of one page, logged by structure changes
};

struct LogRecord {
  Lsn lsn = 0;
  std::uint64_t txn = 0;
  RecordKind kind = RecordKind::kCommit;
  PageId page_id = kNoPage;
  std::string key;
  std::string value;
};

// Log region as a ring of 4KB blocks. Block layout: u32 magic "BMLG" |
// u16 offset of the first record starting here (0 if none) | u16 reserved |
// u64 seq, then 4080 bytes of record stream. Records are
// u32 body_len | u32 crc(body) | body, body = u64 lsn | u64 txn | u8 kind |
// u64 page_id | u32 key_len | u32 value_len | key | value, and may continue
// into the following block. A zero body_len, or fewer than 8 bytes left in a
// block, means the rest of the block is padding.
namespace log_layout {
inline constexpr std::uint32_t kMagic = 0x474c4d42;  // "BMLG"
inline constexpr std::size_t kBlockHeader = 16;
inline constexpr std::size_t kFrameHeader = 8;
inline constexpr std::size_t kBodyFixed = 33;
}  // namespace log_layout

std::size_t framed_size(const LogRecord& rec);
Bytes encode_record(const LogRecord& rec);

struct LogConfig {
  LogMode mode = LogMode::kSparse;
  FlushPolicy policy = FlushPolicy::kPerCommit;
  std::chrono::milliseconds timer_interval{1000};
};

struct LogPosition {
  std::uint64_t seq = 1;
  std::size_t offset = log_layout::kBlockHeader;
};

struct ReplayResult {
  std::vector<LogRecord> records;
  Lsn max_lsn = 0;
  LogPosition end;  // just past the last valid record
  std::uint64_t blocks_scanned = 0;
  // (block seq, lsn of the first record starting in it)
  std::vector<std::pair<std::uint64_t, Lsn>> block_starts;
};

class RedoLog {
 public:
  RedoLog(IoAccountant& io, Lba base, std::uint64_t blocks, LogConfig config);
  ~RedoLog();

  RedoLog(const RedoLog&) = delete;
  RedoLog& operator=(const RedoLog&) = delete;

  // Reads the stream starting at block `head_seq` up to the first block or
  // record that fails verification.
  ReplayResult scan(std::uint64_t head_seq) const;
  // Records with lsn > from_lsn.
  std::vector<LogRecord> replay(std::uint64_t head_seq, Lsn from_lsn) const;
  // Continue appending right after the scanned stream.
  void resume(std::uint64_t head_seq, const ReplayResult& scanned);

  // Caller serializes appends; lsns must increase.
  void append(const LogRecord& rec);
  // Blocks until everything up to `lsn` is durable. Group commit: callers
  // arriving while a flush is in flight share the next one.
  void wait_durable(Lsn lsn);
  // Forces out every staged record.
  void flush_all();
  // After flush_all: pads the current block so the next record opens a new
  // block, flushing the pad. Returns the seq of that new block.
  std::uint64_t seal();
  // Trims blocks before `new_head_seq`.
  void truncate(std::uint64_t new_head_seq);
  // Latest block a scan can start from and still see every record with
  // lsn >= `lsn`; the head when nothing that old is retained.
  std::uint64_t head_for(Lsn lsn) const;
  // Lsn of the first record starting at or after block `seq`.
  Lsn first_lsn_from(std::uint64_t seq) const;
  // Writes completed blocks without waiting (timer policy commit path).
  void write_completed_blocks();
  // Timer-policy tail flush.
  void timer_flush();

  void start_timer();
  void stop_timer();

  Lsn appended_lsn() const;
  Lsn durable_lsn() const;
  Lsn durable_commit_lsn() const;
  std::uint64_t head_seq() const;
  std::uint64_t current_seq() const;
  double usage() const;
  bool failed() const;
  std::uint64_t flushes() const;

  Lba lba_of(std::uint64_t seq) const { return base_ + seq % blocks_; }
  std::uint64_t capacity_blocks() const { return blocks_; }
  const LogConfig& config() const { return config_; }

 private:
  struct PendingBlock {
    std::uint64_t seq;
    Bytes data;
    Lsn end_lsn;
    Lsn end_commit_lsn;
  };

  void start_block_locked();
  void finish_block_locked();
  // Leader path; drops the lock around device I/O.
  void flush_locked(std::unique_lock<std::mutex>& lk, bool include_tail, bool seal_tail);

  IoAccountant& io_;
  Lba base_;
  std::uint64_t blocks_;
  LogConfig config_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  bool flushing_ = false;
  bool failed_ = false;

  Bytes staging_;
  std::size_t fill_ = log_layout::kBlockHeader;
  std::size_t flushed_fill_ = log_layout::kBlockHeader;  // tail bytes already on the device
  std::uint64_t cur_seq_ = 1;
  std::uint64_t head_seq_ = 1;
  std::vector<PendingBlock> pending_;
  std::deque<std::pair<std::uint64_t, Lsn>> starts_;

  Lsn appended_lsn_ = 0;
  Lsn appended_commit_lsn_ = 0;
  Lsn block_end_lsn_ = 0;  // last record finishing inside earlier blocks
  Lsn block_end_commit_lsn_ = 0;
  Lsn durable_lsn_ = 0;
  Lsn durable_commit_lsn_ = 0;
  std::uint64_t flushes_ = 0;

  std::thread timer_;
  std::mutex timer_mu_;
  std::condition_variable timer_cv_;
  bool timer_stop_ = false;
};

}  // namespace bminus
