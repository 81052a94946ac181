#include "bminus/metrics.h"

namespace bminus {

std::string_view category_name(WriteCategory c) {
  switch (c) {
    case WriteCategory::kLog: return "log";
    case WriteCategory::kPage: return "pg";
    case WriteCategory::kExtra: return "e";
    default: return "none";
  }
}

std::string_view kind_name(WriteKind k) {
  switch (k) {
    case WriteKind::kSlot: return "slot";
    case WriteKind::kModlog: return "modlog";
    case WriteKind::kLog: return "log";
    case WriteKind::kSuperblock: return "superblock";
    case WriteKind::kTable: return "table";
    default: return "other";
  }
}

namespace {
std::size_t index_of(WriteCategory c) {
  if (c == WriteCategory::kNone) throw InvalidArgumentError("device write without a category");
  return static_cast<std::size_t>(c) - 1;
}
}  // namespace

std::size_t IoAccountant::write(Lba lba, ByteView data, WriteTag tag) {
  const auto idx = index_of(tag.category);
  std::uint64_t index = 0;
  const bool tracing = tracing_.load(std::memory_order_relaxed);
  if (tracing) {
    std::lock_guard lk(trace_mu_);
    index = writes_seen_++;
  }
  const std::size_t physical = device_.write_block(lba, data);
  logical_[idx].fetch_add(kBlockSize, std::memory_order_relaxed);
  physical_[idx].fetch_add(physical, std::memory_order_relaxed);
  if (tracing) {
    std::lock_guard lk(trace_mu_);
    trace_.push_back({index, TraceEntry::Op::kWrite, lba, tag.category, tag.kind,
                      static_cast<std::uint32_t>(physical)});
  }
  return physical;
}

void IoAccountant::trim(Lba lba, WriteKind kind) {
  device_.trim(lba);
  if (tracing_.load(std::memory_order_relaxed)) {
    std::lock_guard lk(trace_mu_);
    trace_.push_back({writes_seen_, TraceEntry::Op::kTrim, lba, WriteCategory::kNone, kind, 0});
  }
}

void IoAccountant::record_write(WriteTag tag, std::uint64_t logical, std::uint64_t physical) {
  const auto idx = index_of(tag.category);
  logical_[idx].fetch_add(logical, std::memory_order_relaxed);
  physical_[idx].fetch_add(physical, std::memory_order_relaxed);
}

IoCounters IoAccountant::snapshot() const {
  IoCounters c;
  c.user_bytes = user_bytes_.load();
  for (std::size_t i = 0; i < kCategories; ++i) {
    c.logical[i] = logical_[i].load();
    c.physical[i] = physical_[i].load();
  }
  const auto s = device_.stats();
  c.device_physical = s.physical_bytes_written;
  c.device_logical = s.logical_bytes_written;
  return c;
}

void IoAccountant::set_tracing(bool on) {
  std::lock_guard lk(trace_mu_);
  tracing_.store(on);
}

std::vector<TraceEntry> IoAccountant::trace() const {
  std::lock_guard lk(trace_mu_);
  return trace_;
}

void IoAccountant::clear_trace() {
  std::lock_guard lk(trace_mu_);
  trace_.clear();
  writes_seen_ = 0;
}

WAReport make_report(const IoCounters& begin, const IoCounters& end) {
  WAReport r;
  r.user_bytes = end.user_bytes - begin.user_bytes;
  if (r.user_bytes == 0) throw InvalidArgumentError("write amplification undefined without user writes");
  const double usr = static_cast<double>(r.user_bytes);
  CategoryReport* parts[kCategories] = {&r.log, &r.pg, &r.e};
  for (std::size_t i = 0; i < kCategories; ++i) {
    auto& p = *parts[i];
    p.logical = end.logical[i] - begin.logical[i];
    p.physical = end.physical[i] - begin.physical[i];
    p.wa = static_cast<double>(p.logical) / usr;
    p.alpha = p.logical == 0 ? 0.0 : static_cast<double>(p.physical) / static_cast<double>(p.logical);
    r.wa_from_components += p.alpha * p.wa;
  }
  r.wa_total = static_cast<double>(r.physical_sum()) / usr;
  r.device_physical_delta = end.device_physical - begin.device_physical;
  return r;
}

StorageOverheadReport make_overhead_report(std::uint64_t pages, std::uint32_t page_size,
                                           std::uint64_t delta_bytes,
                                           std::uint64_t delta_resident_bytes) {
  StorageOverheadReport r;
  r.pages = pages;
  r.page_size = page_size;
  r.delta_bytes = delta_bytes;
  r.delta_resident_bytes = delta_resident_bytes;
  if (pages > 0) {
    const double denom = static_cast<double>(pages) * page_size;
    r.beta = static_cast<double>(delta_bytes) / denom;
    r.beta_compressed = static_cast<double>(delta_resident_bytes) / denom;
  }
  return r;
}

}  // namespace bminus
