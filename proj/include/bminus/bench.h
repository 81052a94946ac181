#pragma once

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "bminus/engine.h"

namespace bminus {

enum class OpMix : std::uint8_t { kWrite, kRead, kScan };

std::string_view op_mix_name(OpMix m);

struct WorkloadSpec {
  std::uint32_t record_size = 128;  // key + value
  std::uint64_t dataset_bytes = std::uint64_t{2} << 30;
  unsigned threads = 1;
  std::uint64_t ops = 100000;
  // Nonzero means run for this long instead of a fixed op count.
  double duration_s = 60.0;
  std::uint64_t warmup_ops = 0;
  OpMix mix = OpMix::kWrite;
  std::uint32_t scan_length = 100;
  std::uint64_t seed = 1;
  // Cache used while loading; 0 means large enough for the whole dataset.
  std::uint64_t populate_cache_bytes = 0;
  std::uint32_t populate_batch = 64;

  std::uint64_t record_count() const { return dataset_bytes / record_size; }
  void validate() const;
};

struct BenchConfig {
  EngineConfig engine;
  DeviceConfig device = auto_sized();  // logical_blocks == 0 picks a size from the dataset

  static DeviceConfig auto_sized() {
    DeviceConfig d;
    d.logical_blocks = 0;
    return d;
  }
  WorkloadSpec workload;
};

// Flat key=value settings. Unknown keys and bad values throw
// InvalidArgumentError. Byte sizes accept K/M/G suffixes.
void apply_setting(BenchConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::pair<std::string, std::string>> parse_settings(std::istream& in);
std::vector<std::pair<std::string, std::string>> load_settings(const std::string& path);
BenchConfig make_config(const std::vector<std::pair<std::string, std::string>>& settings);
// Comma-separated values expand into the cross product, first key slowest.
std::vector<BenchConfig> expand_matrix(const std::vector<std::pair<std::string, std::string>>& settings);
std::vector<std::pair<std::string, std::string>> describe(const BenchConfig& cfg);

// Threshold values above what a delta block can hold are clamped to the max.
EngineConfig resolved_engine_config(const BenchConfig& cfg);
DeviceConfig resolved_device_config(const BenchConfig& cfg);

// Key i of the dataset: distinct uniform 64-bit keys in insertion order,
// encoded big-endian so byte order matches numeric order.
std::vector<std::uint64_t> dataset_keys(const WorkloadSpec& w);
std::string encode_key(std::uint64_t k);
// record_size - 8 bytes: the first record_size/2 - 8 random, the rest zero.
std::string make_value(std::uint32_t record_size, std::mt19937_64& rng);

struct ExperimentResult {
  BenchConfig config;
  WAReport wa;
  StorageOverheadReport overhead;
  EngineStats stats;
  std::uint64_t ops_done = 0;
  std::uint64_t records = 0;
  double wall_seconds = 0.0;
  double ops_per_sec = 0.0;
  std::string timestamp;
};

// Loads the dataset into `engine` (fresh) and switches to the run cache.
void populate(Engine& engine, const WorkloadSpec& w, std::uint64_t run_cache_bytes);
// Measurement window on a populated engine. Quiesces the engine before
// reading counters; checkpoints afterwards for the overhead scan.
ExperimentResult run_workload(Engine& engine, const BenchConfig& cfg);
// Fresh in-memory (or file-backed) device, populate, run, close.
ExperimentResult run_experiment(const BenchConfig& cfg);

// CSV with a fixed column order; see README for definitions.
const std::vector<std::string>& csv_columns();
std::vector<std::string> csv_fields(const ExperimentResult& r);
void write_csv(std::ostream& out, const std::vector<ExperimentResult>& results);
// Aligned plain-text table of the given CSV rows (header first).
std::string format_table(const std::vector<std::vector<std::string>>& rows,
                         const std::vector<std::string>& columns);
std::vector<std::vector<std::string>> read_csv(std::istream& in);

}  // namespace bminus
