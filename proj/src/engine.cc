#include "bminus/engine.h"

#include <algorithm>
#include <cmath>
#include <functional>

namespace bminus {

namespace pl = page_layout;

std::string_view mode_name(StoreMode m) { return m == StoreMode::kBminus ? "bminus" : "baseline"; }
std::string_view log_mode_name(LogMode m) { return m == LogMode::kSparse ? "sparse" : "packed"; }
std::string_view policy_name(FlushPolicy p) { return p == FlushPolicy::kPerCommit ? "per-commit" : "timer"; }

void EngineConfig::validate() const {
  if (page_size != 8192 && page_size != 16384) throw InvalidArgumentError("page size must be 8192 or 16384");
  geometry().validate();
  validate_threshold(threshold, geometry());
  if (cache_frames() < 16) throw InvalidArgumentError("cache must hold at least 16 pages");
  if (!(log_fraction > 0.0 && log_fraction < 0.9)) throw InvalidArgumentError("log fraction out of range");
  if (timer_interval.count() <= 0) throw InvalidArgumentError("timer interval must be positive");
  if (!(checkpoint_log_usage > 0.0 && checkpoint_log_usage < 1.0))
    throw InvalidArgumentError("checkpoint log usage out of range");
  if (!(log_retain_usage > 0.0 && log_retain_usage < checkpoint_log_usage))
    throw InvalidArgumentError("log retain usage must be below the checkpoint trigger");
}

DeviceLayout DeviceLayout::compute(const EngineConfig& config, std::uint64_t logical_blocks) {
  DeviceLayout l;
  l.log_blocks = std::max<std::uint64_t>(
      64, static_cast<std::uint64_t>(std::floor(static_cast<double>(logical_blocks) * config.log_fraction)));
  l.page_base = l.log_base + l.log_blocks;
  if (l.page_base >= logical_blocks) throw InvalidArgumentError("device too small for the log region");
  const std::uint64_t remaining = logical_blocks - l.page_base;
  const std::uint64_t pb = config.page_size / kBlockSize;
  if (config.mode == StoreMode::kBminus) {
    l.max_pages = remaining / (2 * pb + 1);
  } else {
    std::uint64_t mp = remaining / (2 * pb);
    while (mp > 0 && 2 * BaselineStore::table_blocks_for(mp) + 2 * mp * pb > remaining) --mp;
    l.max_pages = mp;
    l.table_base = l.page_base;
    l.pool_base = l.table_base + 2 * BaselineStore::table_blocks_for(mp);
    l.slot_count = 2 * mp;
  }
  if (l.max_pages < 4) throw InvalidArgumentError("device too small for a tree");
  return l;
}

void Transaction::check_active() const {
  if (state_ != State::kActive) throw InvalidArgumentError("transaction is no longer active");
}

void Transaction::put(std::string_view key, std::string_view value) {
  check_active();
  if (key.size() > kMaxKeySize) throw InvalidArgumentError("key longer than 2048 bytes");
  if (pl::footprint(key.size(), value.size()) > max_footprint_)
    throw InvalidArgumentError("record too large for a page");
  ops_.push_back({false, std::string(key), std::string(value)});
}

void Transaction::del(std::string_view key) {
  check_active();
  if (key.size() > kMaxKeySize) throw InvalidArgumentError("key longer than 2048 bytes");
  ops_.push_back({true, std::string(key), {}});
}

// Exclusively latched, pinned frames from the highest unsafe ancestor down.
struct Engine::Path {
  BufferPool* pool;
  std::vector<Frame*> frames;

  explicit Path(BufferPool* p) : pool(p) {}
  ~Path() { release(); }
  void release_prefix(std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      frames[i]->latch.unlock();
      pool->unpin(frames[i]);
    }
    frames.erase(frames.begin(), frames.begin() + static_cast<std::ptrdiff_t>(n));
  }
  void release() { release_prefix(frames.size()); }
};

Engine::Engine(const EngineConfig& config, SimDevice& device)
    : config_(config), geometry_(config.geometry()), io_(device), superblock_store_(io_) {}

std::unique_ptr<Engine> Engine::open(const EngineConfig& config, SimDevice& device) {
  config.validate();
  std::unique_ptr<Engine> e(new Engine(config, device));
  e->layout_ = DeviceLayout::compute(config, device.logical_blocks());
  const auto& l = e->layout_;
  if (config.mode == StoreMode::kBminus) {
    e->shadow_ = std::make_unique<ShadowStore>(e->io_, e->geometry_, l.page_base, l.max_pages);
    e->modlog_ = std::make_unique<ModLog>(*e->shadow_, e->geometry_, config.threshold);
  } else {
    e->baseline_ = std::make_unique<BaselineStore>(e->io_, e->geometry_, l.table_base, l.pool_base,
                                                   l.max_pages, l.slot_count);
  }
  e->log_ = std::make_unique<RedoLog>(e->io_, l.log_base, l.log_blocks,
                                      LogConfig{config.log_mode, config.log_policy, config.timer_interval});
  e->make_pool(config.cache_frames());
  e->pins_.assign(l.max_pages, 0);
  auto sb = e->superblock_store_.load();
  if (!sb) {
    e->format_fresh();
  } else {
    e->recover(*sb);
  }
  e->start_background();
  return e;
}

Engine::~Engine() {
  stop_background();
  if (log_) log_->stop_timer();
}

void Engine::make_pool(std::size_t frames) {
  BufferPool::Hooks hooks;
  hooks.load = [this](PageId id, Frame& f) { load_frame(id, f); };
  hooks.flush = [this](Frame& f) { return flush_hook(f); };
  hooks.force_log = [this] {
    forced_log_.fetch_add(1);
    log_->flush_all();
  };
  if (pool_) {
    evictions_base_ += pool_->evictions();
    eviction_flushes_base_ += pool_->eviction_flushes();
    misses_base_ += pool_->misses();
  }
  pool_.reset();
  pool_ = std::make_unique<BufferPool>(frames, geometry_, std::move(hooks));
}

void Engine::format_fresh() {
  root_ = 0;
  next_page_ = 1;
  lsn_ = 1;
  if (baseline_) baseline_->open();
  sb_ = Superblock{};
  sb_.page_size = config_.page_size;
  sb_.segment_size = config_.segment_size;
  sb_.mode = static_cast<std::uint8_t>(config_.mode);
  sb_.log_mode = static_cast<std::uint8_t>(config_.log_mode);
  sb_.root = root_;
  sb_.page_count = 1;
  sb_.checkpoint_lsn = 0;
  sb_.next_lsn = 1;
  sb_.log_head_seq = log_->head_seq();
  sb_.log_head = log_->head_seq() % log_->capacity_blocks();
  sb_.next_txn = 1;
  superblock_store_.store(sb_);
}

void Engine::load_frame(PageId id, Frame& f) {
  if (shadow_) {
    auto loaded = shadow_->load_page(id);
    if (loaded.image.empty()) {
      f.page = PageImage::fresh(geometry_, id, 0);
      f.tracker.mark_all();
      f.base_lsn = 0;
      set_pin(id, 0);
      return;
    }
    f.base_lsn = loaded.image.lsn();
    auto rc = reconstruct(loaded.image, loaded.modlog, geometry_);
    set_pin(id, rc.applied && !rc.f.none() ? f.base_lsn + 1 : 0);
    f.page = std::move(rc.image);
    f.tracker.assign(std::move(rc.f));
  } else {
    auto img = baseline_->load_page(id);
    f.page = img ? std::move(*img) : PageImage::fresh(geometry_, id, 0);
    f.tracker.clear();
  }
}

bool Engine::flush_hook(Frame& f) {
  if (f.page.lsn() > log_->durable_commit_lsn()) {
    wal_deferred_.fetch_add(1);
    return false;
  }
  PageImage sealed = f.page;
  PageEditor(sealed, nullptr).seal();
  if (shadow_) {
    const auto d = decide_flush(f.tracker, config_.threshold);
    switch (d.path) {
      case FlushPath::kSkip:
        return true;
      case FlushPath::kDeltaLog:
        modlog_->flush_delta(f.id, sealed, f.tracker);
        set_pin(f.id, f.base_lsn + 1);
        delta_flushes_.fetch_add(1);
        return true;
      case FlushPath::kFullReset:
        modlog_->flush_full_reset(f.id, sealed, f.tracker);
        f.base_lsn = sealed.lsn();
        set_pin(f.id, 0);
        full_flushes_.fetch_add(1);
        return true;
    }
  }
  baseline_->flush_page(f.id, sealed.bytes());
  f.tracker.clear();
  full_flushes_.fetch_add(1);
  return true;
}

void Engine::recover(const Superblock& sb) {
  if (sb.page_size != config_.page_size || sb.segment_size != config_.segment_size ||
      sb.mode != static_cast<std::uint8_t>(config_.mode) ||
      sb.log_mode != static_cast<std::uint8_t>(config_.log_mode))
    throw InvalidArgumentError("device was formatted with a different configuration");
  sb_ = sb;
  root_ = sb.root;
  std::uint64_t pages = sb.page_count;
  Lsn next = sb.next_lsn;
  std::uint64_t txn_hi = sb.next_txn;
  if (baseline_) baseline_->open();

  const auto scanned = log_->scan(sb.log_head_seq);
  for (const auto& r : scanned.records) {
    if (r.page_id != kNoPage) pages = std::max<std::uint64_t>(pages, r.page_id + 1);
    txn_hi = std::max<std::uint64_t>(txn_hi, r.txn + 1);
  }
  next = std::max<Lsn>(next, scanned.max_lsn + 1);
  if (pages > layout_.max_pages) throw CorruptionError("log names pages beyond the device layout");
  next_page_ = pages;
  lsn_ = next;
  next_txn_ = txn_hi;
  log_->resume(sb.log_head_seq, scanned);
  // unknown until the page is read: pinned at the retained head
  if (shadow_) std::fill(pins_.begin(), pins_.begin() + static_cast<std::ptrdiff_t>(pages), Lsn{1});

  // committed transactions only; a txn id change without a commit record
  // means that txn never committed
  std::vector<const LogRecord*> pending;
  std::uint64_t pending_txn = 0;
  for (const auto& r : scanned.records) {
    if (r.kind == RecordKind::kCheckpoint) continue;
    if (r.kind == RecordKind::kCommit) {
      if (r.txn == pending_txn) {
        for (const auto* p : pending) redo(*p);
        replayed_records_ += pending.size();
        ++replayed_txns_;
      } else {
        discarded_records_ += pending.size();
      }
      pending.clear();
      pending_txn = 0;
      continue;
    }
    if (r.txn != pending_txn) {
      discarded_records_ += pending.size();
      pending.clear();
      pending_txn = r.txn;
    }
    pending.push_back(&r);
  }
  discarded_records_ += pending.size();
  last_checkpoint_appended_ = 0;
  std::lock_guard lk(commit_mu_);
  checkpoint_locked();
}

void Engine::redo(const LogRecord& rec) {
  Frame* f = fetch(rec.page_id);
  std::unique_lock latch(f->latch);
  struct Unpin {
    BufferPool* p;
    Frame* f;
    ~Unpin() { p->unpin(f); }
  } unpin{pool_.get(), f};
  if (f->page.lsn() >= rec.lsn) return;
  PageEditor ed(f->page, &f->tracker);
  switch (rec.kind) {
    case RecordKind::kPageImage: {
      if (rec.value.size() != geometry_.page_size) throw CorruptionError("logged page image has wrong size");
      ed.assign(ByteView(reinterpret_cast<const std::uint8_t*>(rec.value.data()), rec.value.size()));
      if (f->page.lsn() != rec.lsn || f->page.page_id() != rec.page_id)
        throw CorruptionError("logged page image disagrees with its record");
      break;
    }
    case RecordKind::kInsert:
    case RecordKind::kUpdate: {
      bool ok;
      if (auto slot = f->page.find(rec.key))
        ok = ed.update(*slot, rec.value);
      else
        ok = ed.insert(f->page.lower_bound(rec.key), rec.key, rec.value);
      if (!ok) throw CorruptionError("redo record does not fit its page");
      ed.set_lsn(rec.lsn);
      break;
    }
    case RecordKind::kErase: {
      if (auto slot = f->page.find(rec.key)) ed.erase(*slot);
      ed.set_lsn(rec.lsn);
      break;
    }
    default:
      throw CorruptionError("unexpected record kind during redo");
  }
  pool_->mark_dirty(f);
}

void Engine::start_background() {
  {
    std::lock_guard lk(bg_mu_);
    bg_stop_ = false;
  }
  for (unsigned i = 0; i < config_.flusher_count; ++i) flushers_.emplace_back([this] { flusher_main(); });
  log_->start_timer();
}

void Engine::stop_background() {
  {
    std::lock_guard lk(bg_mu_);
    bg_stop_ = true;
  }
  bg_cv_.notify_all();
  for (auto& t : flushers_) t.join();
  flushers_.clear();
}

void Engine::flusher_main() {
  const std::size_t batch = std::max<std::size_t>(1, pool_->capacity() / 64);
  std::unique_lock lk(bg_mu_);
  while (!bg_stop_) {
    bg_cv_.wait_for(lk, std::chrono::milliseconds(2));
    if (bg_stop_ || failed_) break;
    const double ratio = static_cast<double>(pool_->dirty_count()) / static_cast<double>(pool_->capacity());
    if (ratio <= config_.dirty_target) continue;
    lk.unlock();
    try {
      flush_worker_pass(batch);
    } catch (const Error&) {
      fail();
    }
    lk.lock();
  }
}

std::size_t Engine::flush_worker_pass(std::size_t max_pages) {
  if (failed_) return 0;
  auto frames = pool_->dirty_candidates(std::min(max_pages, pool_->capacity()));
  std::size_t flushed = 0;
  std::size_t i = 0;
  try {
    for (; i < frames.size(); ++i) {
      const bool was_dirty = frames[i]->dirty.load();
      if (pool_->try_flush(*frames[i]) && was_dirty) ++flushed;
      pool_->unpin(frames[i]);
    }
  } catch (...) {
    for (; i < frames.size(); ++i) pool_->unpin(frames[i]);
    fail();
    throw;
  }
  return flushed;
}

void Engine::fail() { failed_ = true; }

void Engine::check_open() const {
  if (failed_) throw DeviceCrashedError("engine stopped after a device failure");
  if (closed_) throw Error("engine is closed");
}

PageId Engine::allocate_page() {
  const PageId id = next_page_.fetch_add(1);
  if (id >= layout_.max_pages) {
    next_page_.fetch_sub(1);
    throw DeviceFullError("no page regions left on the device");
  }
  return id;
}

std::size_t Engine::safe_footprint() const { return pl::footprint(max_key_.load(), sizeof(PageId)); }

Transaction Engine::begin() {
  check_open();
  return Transaction(next_txn_.fetch_add(1), pl::max_footprint(config_.page_size));
}

void Engine::abort(Transaction& txn) {
  txn.check_active();
  txn.ops_.clear();
  txn.state_ = Transaction::State::kAborted;
}

void Engine::commit(Transaction& txn) {
  check_open();
  txn.check_active();
  Lsn commit_lsn;
  std::uint64_t user = 0;
  {
    std::lock_guard lk(commit_mu_);
    check_open();
    try {
      for (const auto& op : txn.ops_) {
        if (op.erase) {
          apply_erase(txn.id_, op.key);
        } else {
          std::size_t cur = max_key_.load();
          while (op.key.size() > cur && !max_key_.compare_exchange_weak(cur, op.key.size())) {
          }
          apply_put(txn.id_, op.key, op.value);
          user += op.key.size() + op.value.size();
        }
      }
      commit_lsn = next_lsn();
      log_->append({commit_lsn, txn.id_, RecordKind::kCommit, kNoPage, {}, {}});
    } catch (...) {
      fail();
      txn.state_ = Transaction::State::kAborted;
      throw;
    }
  }
  try {
    if (config_.log_policy == FlushPolicy::kPerCommit)
      log_->wait_durable(commit_lsn);
    else
      log_->write_completed_blocks();
  } catch (...) {
    fail();
    txn.state_ = Transaction::State::kAborted;
    throw;
  }
  io_.add_user_bytes(user);
  txn.state_ = Transaction::State::kCommitted;
  commits_.fetch_add(1);
  maybe_checkpoint();
}

void Engine::put(std::string_view key, std::string_view value) {
  auto t = begin();
  t.put(key, value);
  commit(t);
}

void Engine::del(std::string_view key) {
  auto t = begin();
  t.del(key);
  commit(t);
}

void Engine::maybe_checkpoint() {
  if (log_->usage() < config_.checkpoint_log_usage) return;
  bool expected = false;
  if (!checkpoint_wanted_.compare_exchange_strong(expected, true)) return;
  try {
    checkpoint();
  } catch (...) {
    checkpoint_wanted_ = false;
    throw;
  }
  checkpoint_wanted_ = false;
}

void Engine::apply_put(std::uint64_t txn, std::string_view key, std::string_view value) {
  for (;;) {
    Path path(pool_.get());
    Frame* f = fetch(root_);
    f->latch.lock();
    path.frames.push_back(f);
    const std::size_t leaf_need = pl::footprint(key.size(), value.size());
    while (!f->page.is_leaf()) {
      Frame* c = fetch(f->page.route(key));
      c->latch.lock();
      const std::size_t need = c->page.is_leaf() ? leaf_need : safe_footprint();
      if (c->page.free_space() >= need) path.release();
      path.frames.push_back(c);
      f = c;
    }
    PageEditor ed(f->page, &f->tracker);
    bool ok;
    RecordKind kind;
    if (auto slot = f->page.find(key)) {
      ok = ed.update(*slot, value);
      kind = RecordKind::kUpdate;
    } else {
      ok = ed.insert(f->page.lower_bound(key), key, value);
      kind = RecordKind::kInsert;
    }
    if (ok) {
      const Lsn l = next_lsn();
      ed.set_lsn(l);
      pool_->mark_dirty(f);
      log_->append({l, txn, kind, f->id, std::string(key), std::string(value)});
      return;
    }
    split(path, txn);
  }
}

void Engine::apply_erase(std::uint64_t txn, std::string_view key) {
  Path path(pool_.get());
  Frame* f = fetch(root_);
  f->latch.lock();
  path.frames.push_back(f);
  while (!f->page.is_leaf()) {
    Frame* c = fetch(f->page.route(key));
    c->latch.lock();
    path.release();
    path.frames.push_back(c);
    f = c;
  }
  auto slot = f->page.find(key);
  if (!slot) return;
  PageEditor ed(f->page, &f->tracker);
  ed.erase(*slot);
  const Lsn l = next_lsn();
  ed.set_lsn(l);
  pool_->mark_dirty(f);
  log_->append({l, txn, RecordKind::kErase, f->id, std::string(key), {}});
}

namespace {

using Records = std::vector<std::pair<std::string, std::string>>;

Records collect(const PageImage& p) {
  Records r;
  r.reserve(p.record_count());
  for (std::size_t i = 0; i < p.record_count(); ++i) r.emplace_back(p.key_at(i), p.value_at(i));
  return r;
}

std::string child_value(PageId id) {
  std::string v(sizeof(PageId), '\0');
  std::memcpy(v.data(), &id, sizeof(PageId));
  return v;
}

PageId child_of(const std::string& v) {
  PageId id;
  std::memcpy(&id, v.data(), sizeof(PageId));
  return id;
}

// First index of the right half, balancing bytes.
std::size_t split_point(const Records& r) {
  std::size_t total = 0;
  for (const auto& [k, v] : r) total += pl::footprint(k.size(), v.size());
  std::size_t cum = 0, idx = r.size() / 2;
  for (std::size_t i = 0; i < r.size(); ++i) {
    cum += pl::footprint(r[i].first.size(), r[i].second.size());
    if (cum * 2 >= total) {
      idx = i + 1;
      break;
    }
  }
  return std::clamp<std::size_t>(idx, 1, r.size() - 1);
}

}  // namespace

void Engine::split(Path& path, std::uint64_t txn) {
  std::vector<Frame*> modified;
  std::vector<Frame*> created;
  std::optional<std::pair<std::string, PageId>> sep;
  for (std::size_t i = path.frames.size(); i-- > 0;) {
    Frame* n = path.frames[i];
    PageEditor ned(n->page, &n->tracker);
    if (sep) {
      if (ned.insert(n->page.lower_bound(sep->first), sep->first, child_value(sep->second))) {
        modified.push_back(n);
        sep.reset();
        break;
      }
    } else if (i + 1 != path.frames.size()) {
      break;
    }
    Records recs = collect(n->page);
    if (sep) {
      auto pos = std::lower_bound(recs.begin(), recs.end(), sep->first,
                                  [](const auto& r, const std::string& k) { return r.first < k; });
      recs.insert(pos, {sep->first, child_value(sep->second)});
      sep.reset();
    }
    const auto level = n->page.level();
    const bool leaf = level == 0;
    const std::size_t mid = split_point(recs);
    Records left(recs.begin(), recs.begin() + static_cast<std::ptrdiff_t>(mid));
    Records right(recs.begin() + static_cast<std::ptrdiff_t>(mid), recs.end());
    std::string sep_key = right.front().first;
    PageId right_leftmost = kNoPage;
    if (!leaf) {
      right_leftmost = child_of(right.front().second);
      right.erase(right.begin());
    }
    if (n->id == root_) {
      Frame* a = pool_->create(allocate_page(), level);
      created.push_back(a);
      Frame* b = pool_->create(allocate_page(), level);
      created.push_back(b);
      PageEditor(a->page, &a->tracker).rebuild(level, left, leaf ? b->id : kNoPage, n->page.leftmost_child());
      PageEditor(b->page, &b->tracker).rebuild(level, right, kNoPage, right_leftmost);
      ned.rebuild(static_cast<std::uint16_t>(level + 1), {{sep_key, child_value(b->id)}}, kNoPage, a->id);
      modified.push_back(a);
      modified.push_back(b);
      modified.push_back(n);
      break;
    }
    Frame* m = pool_->create(allocate_page(), level);
    created.push_back(m);
    PageEditor(m->page, &m->tracker).rebuild(level, right, n->page.right_sibling(), right_leftmost);
    ned.rebuild(level, left, m->id, n->page.leftmost_child());
    modified.push_back(n);
    modified.push_back(m);
    sep = {sep_key, m->id};
  }
  if (sep) throw Error("split propagated past the latched path");
  for (Frame* f : modified) log_image(txn, f);
  for (Frame* f : created) {
    f->latch.unlock();
    pool_->unpin(f);
  }
  path.release();
}

void Engine::log_image(std::uint64_t txn, Frame* f) {
  const Lsn l = next_lsn();
  PageEditor(f->page, &f->tracker).set_lsn(l);
  pool_->mark_dirty(f);
  const auto bytes = f->page.bytes();
  log_->append({l, txn, RecordKind::kPageImage, f->id, {},
                std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size())});
}

std::optional<std::string> Engine::get(std::string_view key) {
  check_open();
  Frame* f = fetch(root_);
  f->latch.lock_shared();
  while (!f->page.is_leaf()) {
    Frame* c = fetch(f->page.route(key));
    c->latch.lock_shared();
    f->latch.unlock_shared();
    pool_->unpin(f);
    f = c;
  }
  std::optional<std::string> out;
  if (auto slot = f->page.find(key)) out = std::string(f->page.value_at(*slot));
  f->latch.unlock_shared();
  pool_->unpin(f);
  return out;
}

std::vector<std::pair<std::string, std::string>> Engine::scan(std::string_view start, std::size_t count) {
  check_open();
  std::vector<std::pair<std::string, std::string>> out;
  if (count == 0) return out;
  Frame* f = fetch(root_);
  f->latch.lock_shared();
  while (!f->page.is_leaf()) {
    Frame* c = fetch(f->page.route(start));
    c->latch.lock_shared();
    f->latch.unlock_shared();
    pool_->unpin(f);
    f = c;
  }
  std::size_t slot = f->page.lower_bound(start);
  while (true) {
    for (; slot < f->page.record_count() && out.size() < count; ++slot)
      out.emplace_back(f->page.key_at(slot), f->page.value_at(slot));
    const PageId next = f->page.right_sibling();
    if (out.size() >= count || next == kNoPage) break;
    Frame* c = fetch(next);
    c->latch.lock_shared();
    f->latch.unlock_shared();
    pool_->unpin(f);
    f = c;
    slot = 0;
  }
  f->latch.unlock_shared();
  pool_->unpin(f);
  return out;
}

void Engine::checkpoint() {
  check_open();
  std::lock_guard lk(commit_mu_);
  checkpoint_locked();
}

void Engine::set_pin(PageId id, Lsn lsn) {
  std::lock_guard lk(pin_mu_);
  pins_[id] = lsn;
}

Lsn Engine::oldest_pin() {
  std::lock_guard lk(pin_mu_);
  Lsn lo = 0;
  const auto n = std::min<std::size_t>(pins_.size(), next_page_.load());
  for (std::size_t i = 0; i < n; ++i)
    if (pins_[i] != 0 && (lo == 0 || pins_[i] < lo)) lo = pins_[i];
  return lo;
}

// Caller holds commit_mu_ and every dirty page is flushed. Pages pinning
// the log further back than the retain budget get a full-page reset.
std::uint64_t Engine::retained_head(std::uint64_t sealed) {
  auto pick = [&] {
    const Lsn p = oldest_pin();
    return p == 0 ? sealed : std::min(sealed, log_->head_for(p));
  };
  std::uint64_t head = pick();
  const auto budget = static_cast<std::uint64_t>(config_.log_retain_usage *
                                                 static_cast<double>(log_->capacity_blocks()));
  if (sealed - head <= budget) return head;
  const Lsn goal = log_->first_lsn_from(sealed - budget);
  std::vector<PageId> stale;
  {
    std::lock_guard lk(pin_mu_);
    const auto n = std::min<std::size_t>(pins_.size(), next_page_.load());
    for (std::size_t i = 0; i < n; ++i)
      if (pins_[i] != 0 && pins_[i] < goal) stale.push_back(i);
  }
  for (const PageId id : stale) {
    Frame* f = fetch(id);
    try {
      bool reset = false;
      {
        std::lock_guard lk(pin_mu_);
        reset = pins_[id] != 0 && pins_[id] < goal;
      }
      if (reset) {
        {
          std::unique_lock latch(f->latch);
          f->tracker.mark_all();
          pool_->mark_dirty(f);
        }
        while (f->dirty.load()) {
          if (!pool_->try_flush(*f)) std::this_thread::yield();
        }
        forced_resets_.fetch_add(1);
      }
    } catch (...) {
      pool_->unpin(f);
      throw;
    }
    pool_->unpin(f);
  }
  return pick();
}

void Engine::checkpoint_locked() {
  try {
    log_->flush_all();
    while (pool_->dirty_count() > 0) {
      auto frames = pool_->all_dirty();
      if (frames.empty()) std::this_thread::yield();
      std::size_t i = 0;
      try {
        for (; i < frames.size(); ++i) {
          pool_->try_flush(*frames[i]);
          pool_->unpin(frames[i]);
        }
      } catch (...) {
        for (; i < frames.size(); ++i) pool_->unpin(frames[i]);
        throw;
      }
    }
    if (log_->appended_lsn() > last_checkpoint_appended_) {
      const Lsn l = next_lsn();
      log_->append({l, 0, RecordKind::kCheckpoint, kNoPage, {}, {}});
      last_checkpoint_appended_ = l;
    }
    std::uint64_t head = log_->seal();
    if (shadow_) head = retained_head(head);
    sb_.root = root_;
    sb_.page_count = next_page_.load();
    sb_.checkpoint_lsn = lsn_ - 1;
    sb_.next_lsn = lsn_;
    sb_.log_head_seq = head;
    sb_.log_head = head % log_->capacity_blocks();
    sb_.next_txn = next_txn_.load();
    superblock_store_.store(sb_);
    log_->truncate(head);
    checkpoints_.fetch_add(1);
  } catch (...) {
    fail();
    throw;
  }
}

void Engine::close() {
  if (closed_) return;
  stop_background();
  log_->stop_timer();
  if (!failed_) checkpoint();
  closed_ = true;
}

void Engine::quiesce() {
  stop_background();
  log_->stop_timer();
}

void Engine::resize_cache(std::size_t cache_bytes) {
  check_open();
  stop_background();
  {
    std::lock_guard lk(commit_mu_);
    checkpoint_locked();
    config_.cache_bytes = cache_bytes;
    config_.validate();
    make_pool(config_.cache_frames());
  }
  start_background();
}

void Engine::set_flusher_count(unsigned n) {
  stop_background();
  config_.flusher_count = n;
  start_background();
}

EngineStats Engine::stats() const {
  EngineStats s;
  s.pages = next_page_.load();
  if (!failed_) {
    Frame* r = pool_->fetch(root_);
    {
      std::shared_lock latch(r->latch);
      s.height = r->page.level() + 1u;
    }
    pool_->unpin(r);
  }
  s.commits = commits_.load();
  s.delta_flushes = delta_flushes_.load();
  s.full_flushes = full_flushes_.load();
  s.wal_deferred = wal_deferred_.load();
  s.checkpoints = checkpoints_.load();
  s.forced_resets = forced_resets_.load();
  s.evictions = evictions_base_ + pool_->evictions();
  s.eviction_flushes = eviction_flushes_base_ + pool_->eviction_flushes();
  s.cache_misses = misses_base_ + pool_->misses();
  s.forced_log_flushes = forced_log_.load();
  s.log_flushes = log_->flushes();
  if (shadow_) {
    s.torn_slots_detected = shadow_->torn_slots_detected();
    s.double_valid_resolved = shadow_->double_valid_resolved();
  }
  s.replayed_records = replayed_records_;
  s.replayed_txns = replayed_txns_;
  s.discarded_records = discarded_records_;
  s.next_lsn = lsn_;
  return s;
}

StorageOverheadReport Engine::beta_scan() {
  const std::uint64_t pages = next_page_.load();
  std::uint64_t delta = 0, resident = 0;
  if (shadow_) {
    Bytes block(kBlockSize);
    for (PageId p = 0; p < pages; ++p) {
      const auto reg = shadow_->region(p);
      io_.read(reg.modlog, block);
      if (auto d = decode_delta_block(block, geometry_)) delta += d->delta.segments.size();
      resident += io_.device().resident_bytes(reg.modlog);
    }
  }
  auto r = make_overhead_report(pages, config_.page_size, delta, resident);
  const std::uint64_t region = shadow_ ? shadow_->region_blocks() : 2 * geometry_.blocks();
  r.logical_footprint = pages * region * kBlockSize;
  r.physical_footprint = io_.device().stats().physical_bytes_resident;
  return r;
}

bool Engine::check_tree() {
  std::vector<PageId> leaves;
  std::function<bool(PageId, const std::string*, const std::string*, int)> walk =
      [&](PageId id, const std::string* lo, const std::string* hi, int level) -> bool {
    Frame* f = fetch(id);
    std::shared_lock latch(f->latch);
    struct Unpin {
      BufferPool* p;
      Frame* f;
      ~Unpin() { p->unpin(f); }
    } unpin{pool_.get(), f};
    const auto& pg = f->page;
    if (!pg.check_structure()) return false;
    if (level >= 0 && pg.level() != level) return false;
    const std::size_t n = pg.record_count();
    for (std::size_t i = 0; i < n; ++i) {
      if (lo && pg.key_at(i) < *lo) return false;
      if (hi && !(pg.key_at(i) < *hi)) return false;
    }
    if (pg.is_leaf()) {
      leaves.push_back(id);
      return true;
    }
    std::vector<std::string> keys;
    std::vector<PageId> kids;
    kids.push_back(pg.leftmost_child());
    for (std::size_t i = 0; i < n; ++i) {
      keys.emplace_back(pg.key_at(i));
      kids.push_back(pg.child_at(i));
    }
    const int child_level = pg.level() - 1;
    latch.unlock();
    for (std::size_t i = 0; i < kids.size(); ++i) {
      const std::string* clo = i == 0 ? lo : &keys[i - 1];
      const std::string* chi = i < keys.size() ? &keys[i] : hi;
      if (!walk(kids[i], clo, chi, child_level)) return false;
    }
    return true;
  };
  if (!walk(root_, nullptr, nullptr, -1)) return false;
  std::string prev;
  bool have_prev = false;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    Frame* f = fetch(leaves[i]);
    std::shared_lock latch(f->latch);
    const PageId expect = i + 1 < leaves.size() ? leaves[i + 1] : kNoPage;
    bool ok = f->page.right_sibling() == expect;
    for (std::size_t s = 0; ok && s < f->page.record_count(); ++s) {
      std::string k(f->page.key_at(s));
      if (have_prev && !(prev < k)) ok = false;
      prev = std::move(k);
      have_prev = true;
    }
    latch.unlock();
    pool_->unpin(f);
    if (!ok) return false;
  }
  return true;
}

}  // namespace bminus
