#include "bminus/redo_log.h"

#include <algorithm>

namespace bminus {

namespace ll = log_layout;

namespace {

constexpr std::size_t kMaxBody = std::size_t{1} << 26;

bool block_ok(ByteView b, std::uint64_t seq) {
  return load_le<std::uint32_t>(b.data()) == ll::kMagic && load_le<std::uint64_t>(b.data() + 8) == seq;
}

}  // namespace

std::size_t framed_size(const LogRecord& rec) {
  return ll::kFrameHeader + ll::kBodyFixed + rec.key.size() + rec.value.size();
}

Bytes encode_record(const LogRecord& rec) {
  Bytes out(framed_size(rec));
  auto* body = out.data() + ll::kFrameHeader;
  store_le<std::uint64_t>(body, rec.lsn);
  store_le<std::uint64_t>(body + 8, rec.txn);
  body[16] = static_cast<std::uint8_t>(rec.kind);
  store_le<std::uint64_t>(body + 17, rec.page_id);
  store_le<std::uint32_t>(body + 25, static_cast<std::uint32_t>(rec.key.size()));
  store_le<std::uint32_t>(body + 29, static_cast<std::uint32_t>(rec.value.size()));
  std::memcpy(body + ll::kBodyFixed, rec.key.data(), rec.key.size());
  std::memcpy(body + ll::kBodyFixed + rec.key.size(), rec.value.data(), rec.value.size());
  const auto body_len = out.size() - ll::kFrameHeader;
  store_le<std::uint32_t>(out.data(), static_cast<std::uint32_t>(body_len));
  store_le<std::uint32_t>(out.data() + 4, crc32(ByteView(body, body_len)));
  return out;
}

RedoLog::RedoLog(IoAccountant& io, Lba base, std::uint64_t blocks, LogConfig config)
    : io_(io), base_(base), blocks_(blocks), config_(config), staging_(kBlockSize, 0) {
  if (blocks_ < 4) throw InvalidArgumentError("log region needs at least four blocks");
  if (base_ + blocks_ > io_.device().logical_blocks())
    throw InvalidArgumentError("log region exceeds device capacity");
  store_le<std::uint32_t>(staging_.data(), ll::kMagic);
  store_le<std::uint64_t>(staging_.data() + 8, cur_seq_);
}

RedoLog::~RedoLog() { stop_timer(); }

ReplayResult RedoLog::scan(std::uint64_t head_seq) const {
  ReplayResult r;
  r.end = {head_seq, ll::kBlockHeader};
  Bytes block(kBlockSize);
  std::uint64_t seq = head_seq;
  auto load = [&](std::uint64_t s) {
    if (s - head_seq >= blocks_) return false;
    io_.read(lba_of(s), block);
    if (!block_ok(block, s)) return false;
    ++r.blocks_scanned;
    return true;
  };
  if (!load(seq)) return r;
  // the head block may open with the tail of a record from an older block
  std::size_t off = std::max<std::size_t>(ll::kBlockHeader, load_le<std::uint16_t>(block.data() + 4));
  Lsn prev = 0;
  Bytes rec;
  while (true) {
    if (kBlockSize - off < ll::kFrameHeader) {
      if (!load(seq + 1)) break;
      ++seq;
      off = ll::kBlockHeader;
      continue;
    }
    const auto body_len = load_le<std::uint32_t>(block.data() + off);
    if (body_len == 0) {
      if (!load(seq + 1)) break;
      ++seq;
      off = ll::kBlockHeader;
      continue;
    }
    if (body_len < ll::kBodyFixed || body_len > kMaxBody) break;
    // gather the frame, possibly across blocks; work on copies so a failed
    // read leaves the cursor on the last good record
    const std::size_t total = ll::kFrameHeader + body_len;
    rec.assign(total, 0);
    std::size_t got = 0;
    std::uint64_t s = seq;
    std::size_t o = off;
    Bytes cur = block;
    bool ok = true;
    while (got < total) {
      if (o == kBlockSize) {
        if (s + 1 - head_seq >= blocks_) {
          ok = false;
          break;
        }
        io_.read(lba_of(s + 1), cur);
        if (!block_ok(cur, s + 1)) {
          ok = false;
          break;
        }
        ++s;
        o = ll::kBlockHeader;
      }
      const std::size_t n = std::min(total - got, kBlockSize - o);
      std::memcpy(rec.data() + got, cur.data() + o, n);
      got += n;
      o += n;
    }
    if (!ok) break;
    const ByteView body(rec.data() + ll::kFrameHeader, body_len);
    if (crc32(body) != load_le<std::uint32_t>(rec.data() + 4)) break;
    LogRecord lr;
    lr.lsn = load_le<std::uint64_t>(body.data());
    lr.txn = load_le<std::uint64_t>(body.data() + 8);
    lr.kind = static_cast<RecordKind>(body[16]);
    lr.page_id = load_le<std::uint64_t>(body.data() + 17);
    const auto klen = load_le<std::uint32_t>(body.data() + 25);
    const auto vlen = load_le<std::uint32_t>(body.data() + 29);
    if (std::size_t{klen} + vlen + ll::kBodyFixed != body_len || lr.lsn <= prev) break;
    lr.key.assign(reinterpret_cast<const char*>(body.data()) + ll::kBodyFixed, klen);
    lr.value.assign(reinterpret_cast<const char*>(body.data()) + ll::kBodyFixed + klen, vlen);
    prev = lr.lsn;
    r.max_lsn = lr.lsn;
    if (r.block_starts.empty() || r.block_starts.back().first != seq) r.block_starts.emplace_back(seq, lr.lsn);
    r.records.push_back(std::move(lr));
    if (s != seq) r.blocks_scanned += s - seq;
    seq = s;
    off = o;
    block = cur;
    r.end = off == kBlockSize ? LogPosition{seq + 1, ll::kBlockHeader} : LogPosition{seq, off};
  }
  return r;
}

std::vector<LogRecord> RedoLog::replay(std::uint64_t head_seq, Lsn from_lsn) const {
  auto all = scan(head_seq).records;
  std::vector<LogRecord> out;
  for (auto& r : all)
    if (r.lsn > from_lsn) out.push_back(std::move(r));
  return out;
}

void RedoLog::resume(std::uint64_t head_seq, const ReplayResult& scanned) {
  std::lock_guard lk(mu_);
  head_seq_ = head_seq;
  cur_seq_ = scanned.end.seq;
  pending_.clear();
  std::fill(staging_.begin(), staging_.end(), 0);
  if (scanned.end.offset > ll::kBlockHeader) {
    io_.read(lba_of(cur_seq_), staging_);
    std::fill(staging_.begin() + static_cast<std::ptrdiff_t>(scanned.end.offset), staging_.end(), 0);
  }
  store_le<std::uint32_t>(staging_.data(), ll::kMagic);
  store_le<std::uint64_t>(staging_.data() + 8, cur_seq_);
  fill_ = scanned.end.offset;
  flushed_fill_ = fill_;
  starts_.assign(scanned.block_starts.begin(), scanned.block_starts.end());
  Lsn commit = 0;
  for (const auto& r : scanned.records)
    if (r.kind == RecordKind::kCommit) commit = r.lsn;
  appended_lsn_ = durable_lsn_ = block_end_lsn_ = scanned.max_lsn;
  appended_commit_lsn_ = durable_commit_lsn_ = block_end_commit_lsn_ = commit;
  failed_ = false;
}

void RedoLog::start_block_locked() {
  if (cur_seq_ + 1 - head_seq_ >= blocks_) throw LogFullError("redo log ring is full");
  ++cur_seq_;
  std::fill(staging_.begin(), staging_.end(), 0);
  store_le<std::uint32_t>(staging_.data(), ll::kMagic);
  store_le<std::uint64_t>(staging_.data() + 8, cur_seq_);
  fill_ = ll::kBlockHeader;
  flushed_fill_ = ll::kBlockHeader;
}

void RedoLog::finish_block_locked() {
  pending_.push_back({cur_seq_, staging_, appended_lsn_, appended_commit_lsn_});
  block_end_lsn_ = appended_lsn_;
  block_end_commit_lsn_ = appended_commit_lsn_;
  start_block_locked();
}

void RedoLog::append(const LogRecord& rec) {
  const Bytes bytes = encode_record(rec);
  std::lock_guard lk(mu_);
  if (failed_) throw DeviceCrashedError("redo log unusable after a device failure");
  if (rec.lsn <= appended_lsn_) throw InvalidArgumentError("log sequence number regression");
  std::size_t pos = 0;
  bool started = false;
  while (pos < bytes.size()) {
    const std::size_t left = kBlockSize - fill_;
    if (!started && left < ll::kFrameHeader) {
      finish_block_locked();
      continue;
    }
    if (!started && load_le<std::uint16_t>(staging_.data() + 4) == 0)
      store_le<std::uint16_t>(staging_.data() + 4, static_cast<std::uint16_t>(fill_));
    if (!started && (starts_.empty() || starts_.back().first != cur_seq_)) starts_.emplace_back(cur_seq_, rec.lsn);
    started = true;
    const std::size_t n = std::min(left, bytes.size() - pos);
    std::memcpy(staging_.data() + fill_, bytes.data() + pos, n);
    fill_ += n;
    pos += n;
    if (fill_ == kBlockSize && pos < bytes.size()) finish_block_locked();
  }
  appended_lsn_ = rec.lsn;
  if (rec.kind == RecordKind::kCommit) appended_commit_lsn_ = rec.lsn;
  if (fill_ == kBlockSize) finish_block_locked();
}

void RedoLog::flush_locked(std::unique_lock<std::mutex>& lk, bool include_tail, bool seal_tail) {
  Lsn target = durable_lsn_, target_commit = durable_commit_lsn_;
  if (include_tail && fill_ > flushed_fill_ && seal_tail) finish_block_locked();
  std::vector<PendingBlock> blocks = std::move(pending_);
  pending_.clear();
  if (!blocks.empty()) {
    target = blocks.back().end_lsn;
    target_commit = blocks.back().end_commit_lsn;
  }
  if (include_tail) {
    if (fill_ > flushed_fill_) {
      blocks.push_back({cur_seq_, staging_, appended_lsn_, appended_commit_lsn_});
      flushed_fill_ = fill_;
    }
    target = appended_lsn_;
    target_commit = appended_commit_lsn_;
  }
  if (blocks.empty()) {
    durable_lsn_ = std::max(durable_lsn_, target);
    durable_commit_lsn_ = std::max(durable_commit_lsn_, target_commit);
    return;
  }
  flushing_ = true;
  lk.unlock();
  try {
    for (const auto& b : blocks) io_.write(lba_of(b.seq), b.data, {WriteCategory::kLog, WriteKind::kLog});
    io_.sync();
  } catch (...) {
    lk.lock();
    failed_ = true;
    flushing_ = false;
    cv_.notify_all();
    throw;
  }
  lk.lock();
  durable_lsn_ = std::max(durable_lsn_, target);
  durable_commit_lsn_ = std::max(durable_commit_lsn_, target_commit);
  ++flushes_;
  flushing_ = false;
  cv_.notify_all();
}

void RedoLog::wait_durable(Lsn lsn) {
  std::unique_lock lk(mu_);
  const bool seal = config_.mode == LogMode::kSparse && config_.policy == FlushPolicy::kPerCommit;
  while (durable_lsn_ < lsn) {
    if (failed_) throw DeviceCrashedError("redo log flush failed");
    if (!flushing_)
      flush_locked(lk, true, seal);
    else
      cv_.wait(lk);
  }
}

void RedoLog::flush_all() {
  Lsn target;
  {
    std::lock_guard lk(mu_);
    target = appended_lsn_;
  }
  wait_durable(target);
}

std::uint64_t RedoLog::seal() {
  flush_all();
  std::unique_lock lk(mu_);
  cv_.wait(lk, [&] { return !flushing_ || failed_; });
  if (failed_) throw DeviceCrashedError("redo log flush failed");
  if (fill_ > ll::kBlockHeader) {
    if (fill_ == flushed_fill_)
      start_block_locked();  // the padded image is already on the device
    else
      finish_block_locked();
  }
  flush_locked(lk, false, false);
  return cur_seq_;
}

void RedoLog::truncate(std::uint64_t new_head_seq) {
  std::uint64_t from;
  {
    std::lock_guard lk(mu_);
    if (new_head_seq < head_seq_ || new_head_seq > cur_seq_)
      throw InvalidArgumentError("truncation outside the live log");
    from = head_seq_;
    head_seq_ = new_head_seq;
    while (!starts_.empty() && starts_.front().first < new_head_seq) starts_.pop_front();
  }
  for (std::uint64_t s = from; s < new_head_seq; ++s) io_.trim(lba_of(s), WriteKind::kLog);
}

std::uint64_t RedoLog::head_for(Lsn lsn) const {
  std::lock_guard lk(mu_);
  std::uint64_t h = head_seq_;
  for (const auto& [seq, first] : starts_) {
    if (first > lsn) break;
    h = seq;
  }
  return h;
}

Lsn RedoLog::first_lsn_from(std::uint64_t seq) const {
  std::lock_guard lk(mu_);
  for (const auto& [s, first] : starts_)
    if (s >= seq) return first;
  return appended_lsn_ + 1;
}

void RedoLog::write_completed_blocks() {
  std::unique_lock lk(mu_);
  if (pending_.empty() || flushing_ || failed_) return;
  flush_locked(lk, false, false);
}

void RedoLog::timer_flush() {
  std::unique_lock lk(mu_);
  if (flushing_ || failed_) return;
  flush_locked(lk, true, false);
}

void RedoLog::start_timer() {
  if (config_.policy != FlushPolicy::kTimer || timer_.joinable()) return;
  timer_stop_ = false;
  timer_ = std::thread([this] {
    std::unique_lock tl(timer_mu_);
    while (!timer_stop_) {
      if (timer_cv_.wait_for(tl, config_.timer_interval, [&] { return timer_stop_; })) break;
      tl.unlock();
      try {
        timer_flush();
      } catch (const Error&) {
        // device failure: the log is marked failed; committers see it
      }
      tl.lock();
    }
  });
}

void RedoLog::stop_timer() {
  {
    std::lock_guard tl(timer_mu_);
    timer_stop_ = true;
  }
  timer_cv_.notify_all();
  if (timer_.joinable()) timer_.join();
}

Lsn RedoLog::appended_lsn() const {
  std::lock_guard lk(mu_);
  return appended_lsn_;
}
Lsn RedoLog::durable_lsn() const {
  std::lock_guard lk(mu_);
  return durable_lsn_;
}
Lsn RedoLog::durable_commit_lsn() const {
  std::lock_guard lk(mu_);
  return durable_commit_lsn_;
}
std::uint64_t RedoLog::head_seq() const {
  std::lock_guard lk(mu_);
  return head_seq_;
}
std::uint64_t RedoLog::current_seq() const {
  std::lock_guard lk(mu_);
  return cur_seq_;
}
double RedoLog::usage() const {
  std::lock_guard lk(mu_);
  return static_cast<double>(cur_seq_ - head_seq_ + 1) / static_cast<double>(blocks_);
}
bool RedoLog::failed() const {
  std::lock_guard lk(mu_);
  return failed_;
}
std::uint64_t RedoLog::flushes() const {
  std::lock_guard lk(mu_);
  return flushes_;
}

}  // namespace bminus
