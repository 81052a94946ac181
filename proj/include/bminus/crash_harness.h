#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "bminus/engine.h"

namespace bminus {

struct CrashOp {
  bool erase = false;
  std::string key;
  std::string value;
};

// Deterministic single-threaded workload: a few bulk-insert txns, then
// mixed put/delete txns, with flusher passes and one checkpoint along the way.
struct CrashWorkload {
  std::uint64_t seed = 1;
  std::vector<std::vector<CrashOp>> txns;
  std::size_t flush_every = 7;
  std::size_t flush_batch = 6;
  std::size_t checkpoint_at = 150;

  static CrashWorkload generate(std::uint64_t seed, std::size_t txns);
  // Expected contents after the first `n` txns.
  std::map<std::string, std::string> state_after(std::size_t n) const;
};

struct CrashScenario {
  StoreMode mode = StoreMode::kBminus;
  LogMode log_mode = LogMode::kSparse;
  std::uint64_t seed = 1;
  FaultPlan plan;
  // "stride" for enumerated cut points, otherwise the write kind targeted
  // ("slot", "modlog", "log", "superblock", "trim-gap").
  std::string boundary = "stride";
  std::uint64_t write_index = 0;

  std::string reproducer() const;
};

struct Verdict {
  bool pass = false;
  std::string detail;
  std::uint64_t acked = 0;
  bool in_flight_survived = false;
  std::uint64_t torn_slots_detected = 0;
  std::uint64_t double_valid_resolved = 0;
};

struct CrashHarnessConfig {
  std::uint64_t seed = 1;
  std::size_t txns = 200;
  std::uint64_t stride = 1;
  bool boundary_extras = true;
  std::uint64_t sampled_seeds = 500;
  std::vector<StoreMode> modes{StoreMode::kBminus, StoreMode::kBaseline};
  std::vector<LogMode> log_modes{LogMode::kSparse, LogMode::kPacked};
};

EngineConfig crash_engine_config(StoreMode mode, LogMode log_mode);
DeviceConfig crash_device_config();

struct TracedRun {
  std::vector<TraceEntry> trace;
  // Device writes issued before tracing started (formatting).
  std::uint64_t offset = 0;
  std::uint64_t acked = 0;
};

TracedRun trace_workload(const CrashWorkload& w, StoreMode mode, LogMode log_mode);

// One scenario per stride-th write index, plus torn writes at every slot,
// modlog, log and superblock write and a suppressed-trim crash at every
// stale-slot trim.
std::vector<CrashScenario> enumerate_crash_points(const TracedRun& run, std::uint64_t stride,
                                                  bool boundary_extras, StoreMode mode, LogMode log_mode,
                                                  std::uint64_t seed);

Verdict evaluate(const CrashScenario& scenario, const CrashWorkload& w);
// Multi-threaded run under a random cut; threads own disjoint keys.
Verdict evaluate_sampled(std::uint64_t seed, CrashScenario* out_scenario = nullptr);

struct CrashSuiteReport {
  std::uint64_t scenarios = 0;
  std::uint64_t failures = 0;
  std::uint64_t sampled = 0;
  std::uint64_t sampled_failures = 0;
  std::map<std::string, std::uint64_t> by_boundary;
  std::uint64_t torn_slots_detected = 0;
  std::uint64_t double_valid_resolved = 0;
  std::uint64_t in_flight_survived = 0;
  std::vector<std::string> failure_lines;

  bool passed() const { return failures == 0 && sampled_failures == 0; }
  bool covers_paper_scenarios() const { return torn_slots_detected > 0 && double_valid_resolved > 0; }
};

using ProgressFn = std::function<void(const std::string&)>;
CrashSuiteReport run_crash_suite(const CrashHarnessConfig& cfg, const ProgressFn& progress = {});

}  // namespace bminus
