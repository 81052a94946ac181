#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <unordered_map>
#include <vector>

#include "bminus/page.h"

namespace bminus {

struct Frame {
  PageId id = kNoPage;
  PageImage page;
  SegmentTracker tracker;
  Lsn base_lsn = 0;  // lsn of the durable full image behind the delta
  std::shared_mutex latch;
  std::atomic<int> pins{0};
  std::atomic<bool> dirty{false};
  std::atomic<bool> flushing{false};
  std::atomic<std::uint64_t> last_access{0};
  bool referenced = false;  // clock bit, guarded by the pool mutex
  bool in_use = false;
};

// Fixed set of frames with CLOCK replacement. Dirty victims are flushed
// synchronously through the flush hook; victims the hook refuses (their log
// records are not yet durable) are skipped, and if nothing else is
// evictable the log is forced.
class BufferPool {
 public:
  struct Hooks {
    // Fill frame.page / frame.tracker for `id`.
    std::function<void(PageId, Frame&)> load;
    // Persist a dirty frame; caller holds its shared latch and flushing
    // flag. Returns false when the write-ahead rule forbids it for now.
    std::function<bool(Frame&)> flush;
    std::function<void()> force_log;
  };

  BufferPool(std::size_t frames, PageGeometry geometry, Hooks hooks);

  // Returned frames are pinned; release with unpin.
  Frame* fetch(PageId id);
  // New page, formatted, dirty, pinned and exclusively latched.
  Frame* create(PageId id, std::uint16_t level);
  void unpin(Frame* f) { f->pins.fetch_sub(1, std::memory_order_acq_rel); }

  // Caller holds the exclusive latch.
  void mark_dirty(Frame* f) {
    if (!f->dirty.exchange(true)) dirty_count_.fetch_add(1);
  }

  // Flushes one frame if it is dirty and nobody else is flushing it.
  // Returns true when the frame is clean afterwards.
  bool try_flush(Frame& f);

  // Up to `max` dirty frames, least recently used first, pinned.
  std::vector<Frame*> dirty_candidates(std::size_t max);
  std::vector<Frame*> all_dirty();

  std::size_t capacity() const { return frames_.size(); }
  std::size_t dirty_count() const { return dirty_count_.load(); }
  std::uint64_t evictions() const { return evictions_.load(); }
  std::uint64_t eviction_flushes() const { return eviction_flushes_.load(); }
  std::uint64_t misses() const { return misses_.load(); }

 private:
  Frame* victim_locked();
  bool flush_frame(Frame& f);

  PageGeometry geometry_;
  Hooks hooks_;
  std::vector<std::unique_ptr<Frame>> frames_;
  std::mutex mu_;
  std::unordered_map<PageId, Frame*> table_;
  std::size_t hand_ = 0;
  std::atomic<std::uint64_t> tick_{0};
  std::atomic<std::size_t> dirty_count_{0};
  std::atomic<std::uint64_t> evictions_{0};
  std::atomic<std::uint64_t> eviction_flushes_{0};
  std::atomic<std::uint64_t> misses_{0};
};

}  // namespace bminus
