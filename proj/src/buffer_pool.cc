#include "bminus/buffer_pool.h"

#include <algorithm>

namespace bminus {

BufferPool::BufferPool(std::size_t frames, PageGeometry geometry, Hooks hooks)
    : geometry_(geometry), hooks_(std::move(hooks)) {
  if (frames < 16) throw InvalidArgumentError("buffer pool needs at least 16 frames");
  frames_.reserve(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    auto f = std::make_unique<Frame>();
    f->page = PageImage(geometry_);
    f->tracker = SegmentTracker(geometry_);
    frames_.push_back(std::move(f));
  }
  table_.reserve(frames * 2);
}

bool BufferPool::flush_frame(Frame& f) {
  std::shared_lock latch(f.latch);
  if (!f.dirty.load()) return true;
  if (!hooks_.flush(f)) return false;
  f.dirty.store(false);
  dirty_count_.fetch_sub(1);
  return true;
}

bool BufferPool::try_flush(Frame& f) {
  bool expected = false;
  if (!f.flushing.compare_exchange_strong(expected, true)) return false;
  bool ok = false;
  try {
    ok = flush_frame(f);
  } catch (...) {
    f.flushing.store(false);
    throw;
  }
  f.flushing.store(false);
  return ok;
}

Frame* BufferPool::victim_locked() {
  const std::size_t n = frames_.size();
  for (int round = 0; round < 4; ++round) {
    bool blocked = false;
    for (std::size_t step = 0; step < 2 * n; ++step) {
      Frame& f = *frames_[hand_];
      hand_ = (hand_ + 1) % n;
      if (!f.in_use) return &f;
      if (f.pins.load() > 0 || f.flushing.load()) continue;
      if (f.referenced) {
        f.referenced = false;
        continue;
      }
      if (f.dirty.load()) {
        if (!try_flush(f)) {
          blocked = true;
          continue;
        }
        eviction_flushes_.fetch_add(1);
      }
      if (f.pins.load() > 0) continue;
      table_.erase(f.id);
      f.in_use = false;
      evictions_.fetch_add(1);
      return &f;
    }
    if (blocked && hooks_.force_log) hooks_.force_log();
  }
  throw Error("buffer pool exhausted: every frame is pinned or waiting on the log");
}

Frame* BufferPool::fetch(PageId id) {
  std::lock_guard lk(mu_);
  if (auto it = table_.find(id); it != table_.end()) {
    Frame* f = it->second;
    f->pins.fetch_add(1);
    f->referenced = true;
    f->last_access.store(++tick_, std::memory_order_relaxed);
    return f;
  }
  misses_.fetch_add(1);
  Frame* f = victim_locked();
  f->id = id;
  f->dirty.store(false);
  f->tracker.clear();
  try {
    hooks_.load(id, *f);
  } catch (...) {
    f->id = kNoPage;
    throw;
  }
  f->in_use = true;
  f->referenced = true;
  f->pins.store(1);
  f->last_access.store(++tick_, std::memory_order_relaxed);
  table_[id] = f;
  return f;
}

Frame* BufferPool::create(PageId id, std::uint16_t level) {
  std::lock_guard lk(mu_);
  if (table_.count(id)) throw InvalidArgumentError("page already cached");
  Frame* f = victim_locked();
  f->latch.lock();
  f->id = id;
  f->tracker.clear();
  if (f->page.empty()) f->page = PageImage(geometry_);
  PageEditor(f->page, &f->tracker).format(id, level);
  f->in_use = true;
  f->referenced = true;
  f->pins.store(1);
  f->last_access.store(++tick_, std::memory_order_relaxed);
  f->dirty.store(true);
  dirty_count_.fetch_add(1);
  table_[id] = f;
  return f;
}

std::vector<Frame*> BufferPool::dirty_candidates(std::size_t max) {
  std::lock_guard lk(mu_);
  std::vector<Frame*> out;
  for (auto& f : frames_)
    if (f->in_use && f->dirty.load() && !f->flushing.load()) out.push_back(f.get());
  std::sort(out.begin(), out.end(), [](Frame* a, Frame* b) {
    return a->last_access.load(std::memory_order_relaxed) < b->last_access.load(std::memory_order_relaxed);
  });
  if (out.size() > max) out.resize(max);
  for (auto* f : out) f->pins.fetch_add(1);
  return out;
}

std::vector<Frame*> BufferPool::all_dirty() { return dirty_candidates(frames_.size()); }

}  // namespace bminus
