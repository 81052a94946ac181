#include "bminus/crash_harness.h"

#include <algorithm>
#include <random>
#include <sstream>
#include <thread>

#include "bminus/bench.h"

namespace bminus {

namespace {

constexpr std::size_t kUniverse = 1200;
constexpr std::size_t kBulkTxns = 8;
constexpr std::size_t kBulkSize = 60;
const std::string kProbeKey = "~probe";

std::map<std::string, std::string> contents(Engine& e) {
  std::map<std::string, std::string> out;
  for (auto& [k, v] : e.scan("", ~std::size_t{0})) out.emplace(std::move(k), std::move(v));
  return out;
}

void apply_txn(std::map<std::string, std::string>& m, const std::vector<CrashOp>& txn) {
  for (const auto& op : txn) {
    if (op.erase)
      m.erase(op.key);
    else
      m[op.key] = op.value;
  }
}

std::string varied_value(std::mt19937_64& rng) {
  static constexpr std::uint32_t kSizes[] = {64, 128, 192, 256};
  return make_value(kSizes[rng() % 4], rng);
}

std::vector<std::vector<CrashOp>> random_txns(std::mt19937_64& rng, const std::vector<std::string>& keys,
                                              std::size_t count) {
  std::vector<std::vector<CrashOp>> txns;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<CrashOp> ops;
    const std::size_t n = 1 + rng() % 3;
    for (std::size_t j = 0; j < n; ++j) {
      CrashOp op;
      op.key = keys[rng() % keys.size()];
      op.erase = rng() % 100 < 15;
      if (!op.erase) op.value = varied_value(rng);
      ops.push_back(std::move(op));
    }
    txns.push_back(std::move(ops));
  }
  return txns;
}

// Runs txns until the device fails; returns the number acknowledged.
std::uint64_t drive(Engine& e, const CrashWorkload& w) {
  std::uint64_t acked = 0;
  try {
    for (std::size_t i = 0; i < w.txns.size(); ++i) {
      auto t = e.begin();
      for (const auto& op : w.txns[i]) {
        if (op.erase)
          t.del(op.key);
        else
          t.put(op.key, op.value);
      }
      e.commit(t);
      acked = i + 1;
      if (w.flush_every && acked % w.flush_every == 0) e.flush_worker_pass(w.flush_batch);
      if (acked == w.checkpoint_at) e.checkpoint();
    }
  } catch (const Error&) {
  }
  return acked;
}

std::string describe_diff(const std::map<std::string, std::string>& got,
                          const std::map<std::string, std::string>& want) {
  std::size_t missing = 0, extra = 0, differ = 0;
  for (const auto& [k, v] : want) {
    auto it = got.find(k);
    if (it == got.end()) ++missing;
    else if (it->second != v) ++differ;
  }
  for (const auto& [k, v] : got)
    if (!want.count(k)) ++extra;
  std::ostringstream os;
  os << missing << " missing, " << extra << " unexpected, " << differ << " wrong values";
  return os.str();
}

// Checks the recovered engine against the allowed states, then that it
// keeps working across one more restart.
void check_recovered(SimDevice& dev, const EngineConfig& cfg,
                     const std::vector<const std::map<std::string, std::string>*>& allowed, Verdict& v) {
  std::map<std::string, std::string> got;
  try {
    auto e = Engine::open(cfg, dev);
    got = contents(*e);
    auto s = e->stats();
    v.torn_slots_detected = s.torn_slots_detected;
    v.double_valid_resolved = s.double_valid_resolved;
    if (!e->check_tree()) {
      v.detail = "tree invariants broken after recovery";
      return;
    }
    e->put(kProbeKey, "1");
  } catch (const Error& ex) {
    v.detail = std::string("recovery failed: ") + ex.what();
    return;
  }
  bool matched = false;
  for (std::size_t i = 0; i < allowed.size(); ++i) {
    if (got == *allowed[i]) {
      matched = true;
      v.in_flight_survived = i == 1;
    }
  }
  if (!matched) {
    v.detail = "contents diverge from the committed prefix: " + describe_diff(got, *allowed[0]);
    return;
  }
  try {
    auto e = Engine::open(cfg, dev);
    auto again = contents(*e);
    auto probe = again.find(kProbeKey);
    if (probe == again.end()) {
      v.detail = "write after recovery was lost";
      return;
    }
    again.erase(probe);
    if (again != got) {
      v.detail = "second restart changed contents";
      return;
    }
    e->close();
  } catch (const Error& ex) {
    v.detail = std::string("second recovery failed: ") + ex.what();
    return;
  }
  v.pass = true;
}

}  // namespace

CrashWorkload CrashWorkload::generate(std::uint64_t seed, std::size_t txns) {
  CrashWorkload w;
  w.seed = seed;
  std::mt19937_64 rng(seed);
  std::vector<std::string> keys;
  while (keys.size() < kUniverse) {
    auto k = encode_key(rng());
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(std::move(k));
  }
  const std::size_t bulk = std::min(kBulkTxns, txns);
  for (std::size_t i = 0; i < bulk; ++i) {
    std::vector<CrashOp> ops;
    for (std::size_t j = 0; j < kBulkSize; ++j)
      ops.push_back({false, keys[(i * kBulkSize + j) % keys.size()], varied_value(rng)});
    w.txns.push_back(std::move(ops));
  }
  auto rest = random_txns(rng, keys, txns - bulk);
  for (auto& t : rest) w.txns.push_back(std::move(t));
  return w;
}

std::map<std::string, std::string> CrashWorkload::state_after(std::size_t n) const {
  std::map<std::string, std::string> m;
  for (std::size_t i = 0; i < n && i < txns.size(); ++i) apply_txn(m, txns[i]);
  return m;
}

std::string CrashScenario::reproducer() const {
  std::ostringstream os;
  os << "seed=" << seed << " mode=" << mode_name(mode) << " log_mode=" << log_mode_name(log_mode)
     << " boundary=" << boundary << " write_index=" << write_index;
  if (plan.crash_after_n_block_writes) os << " cut=" << *plan.crash_after_n_block_writes;
  if (plan.partial_write_fraction) os << " tear=" << *plan.partial_write_fraction;
  if (plan.suppress_pending_trims) os << " suppress_trims=1";
  return os.str();
}

EngineConfig crash_engine_config(StoreMode mode, LogMode log_mode) {
  EngineConfig c;
  c.mode = mode;
  c.log_mode = log_mode;
  c.log_policy = FlushPolicy::kPerCommit;
  c.cache_bytes = 16 * 8192;
  c.flusher_count = 0;
  c.log_fraction = 0.03;  // 64-block ring: frequent checkpoints and wraparound
  return c;
}

DeviceConfig crash_device_config() {
  DeviceConfig d;
  d.logical_blocks = 2048;
  d.codec = "zero-run";
  return d;
}

TracedRun trace_workload(const CrashWorkload& w, StoreMode mode, LogMode log_mode) {
  SimDevice dev(crash_device_config());
  TracedRun run;
  auto e = Engine::open(crash_engine_config(mode, log_mode), dev);
  run.offset = dev.stats().block_writes;
  e->io().set_tracing(true);
  run.acked = drive(*e, w);
  e->io().set_tracing(false);
  run.trace = e->io().trace();
  if (run.acked != w.txns.size()) throw Error("fault-free traced run did not complete");
  return run;
}

std::vector<CrashScenario> enumerate_crash_points(const TracedRun& run, std::uint64_t stride,
                                                  bool boundary_extras, StoreMode mode, LogMode log_mode,
                                                  std::uint64_t seed) {
  if (run.trace.empty()) throw InvalidArgumentError("empty write trace");
  if (stride == 0) throw InvalidArgumentError("stride must be positive");
  std::uint64_t writes = 0;
  for (const auto& t : run.trace)
    if (t.op == TraceEntry::Op::kWrite) ++writes;
  std::vector<CrashScenario> out;
  auto base = [&](std::uint64_t index) {
    CrashScenario s;
    s.mode = mode;
    s.log_mode = log_mode;
    s.seed = seed;
    s.write_index = index;
    s.plan.crash_after_n_block_writes = run.offset + index;
    return s;
  };
  for (std::uint64_t i = 0; i <= writes; i += stride) out.push_back(base(i));
  if (stride > writes) out.clear();
  if (!boundary_extras) return out;
  for (const auto& t : run.trace) {
    if (t.op == TraceEntry::Op::kWrite) {
      if (t.kind != WriteKind::kSlot && t.kind != WriteKind::kModlog && t.kind != WriteKind::kLog &&
          t.kind != WriteKind::kSuperblock)
        continue;
      auto s = base(t.write_index);
      s.boundary = std::string(kind_name(t.kind));
      s.plan.partial_write_fraction = 0.5;
      out.push_back(std::move(s));
    } else if (t.kind == WriteKind::kSlot || t.kind == WriteKind::kSuperblock) {
      // the write before this trim lands, the trim does not
      auto s = base(t.write_index);
      s.boundary = "trim-gap";
      s.plan.suppress_pending_trims = true;
      out.push_back(std::move(s));
    }
  }
  return out;
}

Verdict evaluate(const CrashScenario& scenario, const CrashWorkload& w) {
  Verdict v;
  const EngineConfig cfg = crash_engine_config(scenario.mode, scenario.log_mode);
  SimDevice dev(crash_device_config());
  dev.inject_crash(scenario.plan);
  try {
    auto e = Engine::open(cfg, dev);
    v.acked = drive(*e, w);
  } catch (const Error&) {
  }
  dev.reopen();
  const auto committed = w.state_after(v.acked);
  std::vector<const std::map<std::string, std::string>*> allowed{&committed};
  std::map<std::string, std::string> in_flight;
  if (v.acked < w.txns.size()) {
    in_flight = w.state_after(v.acked + 1);
    allowed.push_back(&in_flight);
  }
  check_recovered(dev, cfg, allowed, v);
  return v;
}

Verdict evaluate_sampled(std::uint64_t seed, CrashScenario* out_scenario) {
  std::mt19937_64 rng(seed);
  CrashScenario s;
  s.seed = seed;
  s.boundary = "sampled";
  s.mode = rng() % 2 ? StoreMode::kBminus : StoreMode::kBaseline;
  s.log_mode = rng() % 2 ? LogMode::kSparse : LogMode::kPacked;
  s.write_index = rng() % 260;
  s.plan.crash_after_n_block_writes = s.write_index;
  if (rng() % 2) s.plan.partial_write_fraction = 0.05 + 0.9 * std::uniform_real_distribution<double>(0, 1)(rng);
  s.plan.suppress_pending_trims = rng() % 4 == 0;
  const unsigned threads = 2 + static_cast<unsigned>(rng() % 3);
  if (out_scenario) *out_scenario = s;

  std::vector<std::vector<std::vector<CrashOp>>> work(threads);
  for (unsigned t = 0; t < threads; ++t) {
    std::vector<std::string> keys;
    for (int i = 0; i < 150; ++i) {
      auto k = encode_key(rng());
      k[0] = static_cast<char>('A' + t);
      keys.push_back(std::move(k));
    }
    work[t] = random_txns(rng, keys, 25);
  }

  EngineConfig cfg = crash_engine_config(s.mode, s.log_mode);
  cfg.flusher_count = 1;
  cfg.dirty_target = 0.0;
  SimDevice dev(crash_device_config());
  dev.inject_crash(s.plan);
  std::vector<std::uint64_t> acked(threads, 0);
  try {
    auto e = Engine::open(cfg, dev);
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (const auto& txn : work[t]) {
            auto x = e->begin();
            for (const auto& op : txn) {
              if (op.erase)
                x.del(op.key);
              else
                x.put(op.key, op.value);
            }
            e->commit(x);
            ++acked[t];
          }
        } catch (const Error&) {
        }
      });
    }
    for (auto& th : pool) th.join();
  } catch (const Error&) {
  }
  dev.reopen();

  Verdict v;
  for (auto a : acked) v.acked += a;
  std::map<std::string, std::string> got;
  try {
    auto e = Engine::open(cfg, dev);
    got = contents(*e);
    v.torn_slots_detected = e->stats().torn_slots_detected;
    v.double_valid_resolved = e->stats().double_valid_resolved;
    if (!e->check_tree()) {
      v.detail = "tree invariants broken after recovery";
      return v;
    }
    e->close();
  } catch (const Error& ex) {
    v.detail = std::string("recovery failed: ") + ex.what();
    return v;
  }
  for (unsigned t = 0; t < threads; ++t) {
    std::map<std::string, std::string> mine;
    for (const auto& [k, val] : got)
      if (k[0] == static_cast<char>('A' + t)) mine.emplace(k, val);
    std::map<std::string, std::string> want;
    for (std::size_t i = 0; i < acked[t]; ++i) apply_txn(want, work[t][i]);
    bool ok = mine == want;
    if (!ok && acked[t] < work[t].size()) {
      apply_txn(want, work[t][acked[t]]);
      ok = mine == want;
      if (ok) v.in_flight_survived = true;
    }
    if (!ok) {
      v.detail = "thread " + std::to_string(t) + " diverges from its committed prefix";
      return v;
    }
  }
  v.pass = true;
  return v;
}

CrashSuiteReport run_crash_suite(const CrashHarnessConfig& cfg, const ProgressFn& progress) {
  CrashSuiteReport r;
  const auto w = CrashWorkload::generate(cfg.seed, cfg.txns);
  for (auto mode : cfg.modes) {
    for (auto lm : cfg.log_modes) {
      const auto traced = trace_workload(w, mode, lm);
      const auto scenarios = enumerate_crash_points(traced, cfg.stride, cfg.boundary_extras, mode, lm, cfg.seed);
      std::uint64_t fails = 0;
      for (const auto& s : scenarios) {
        const auto v = evaluate(s, w);
        ++r.scenarios;
        ++r.by_boundary[s.boundary];
        r.torn_slots_detected += v.torn_slots_detected;
        r.double_valid_resolved += v.double_valid_resolved;
        if (v.in_flight_survived) ++r.in_flight_survived;
        if (!v.pass) {
          ++r.failures;
          ++fails;
          r.failure_lines.push_back(s.reproducer() + ": " + v.detail);
        }
      }
      if (progress) {
        std::ostringstream os;
        os << mode_name(mode) << "/" << log_mode_name(lm) << ": " << scenarios.size() << " scenarios over "
           << traced.trace.size() << " trace entries, " << fails << " failures";
        progress(os.str());
      }
    }
  }
  for (std::uint64_t i = 0; i < cfg.sampled_seeds; ++i) {
    CrashScenario s;
    const auto v = evaluate_sampled(cfg.seed * 1000003ULL + i, &s);
    ++r.sampled;
    r.torn_slots_detected += v.torn_slots_detected;
    r.double_valid_resolved += v.double_valid_resolved;
    if (!v.pass) {
      ++r.sampled_failures;
      r.failure_lines.push_back(s.reproducer() + ": " + v.detail);
    }
  }
  if (progress && cfg.sampled_seeds) {
    progress(std::to_string(r.sampled) + " sampled multi-threaded seeds, " + std::to_string(r.sampled_failures) +
             " failures");
  }
  return r;
}

}  // namespace bminus
