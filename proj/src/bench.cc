#include "bminus/bench.h"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>
#include <unordered_set>

namespace bminus {

std::string_view op_mix_name(OpMix m) {
  switch (m) {
    case OpMix::kWrite: return "write";
    case OpMix::kRead: return "read";
    case OpMix::kScan: return "scan";
  }
  return "?";
}

void WorkloadSpec::validate() const {
  if (record_size < 9) throw InvalidArgumentError("record_size must be at least key size + 1");
  if (record_count() == 0) throw InvalidArgumentError("dataset holds no records");
  if (threads == 0) throw InvalidArgumentError("threads must be positive");
  if (populate_batch == 0) throw InvalidArgumentError("populate_batch must be positive");
  if (scan_length == 0) throw InvalidArgumentError("scan_length must be positive");
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long n;
  try {
    n = std::stoull(v, &used);
  } catch (const std::exception&) {
    throw InvalidArgumentError(key + ": not a number: " + v);
  }
  std::uint64_t mult = 1;
  const std::string rest = v.substr(used);
  if (rest == "K" || rest == "k" || rest == "KB") mult = 1024;
  else if (rest == "M" || rest == "MB") mult = 1024 * 1024;
  else if (rest == "G" || rest == "GB") mult = std::uint64_t{1} << 30;
  else if (!rest.empty()) throw InvalidArgumentError(key + ": bad suffix: " + v);
  return n * mult;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    throw InvalidArgumentError(key + ": not a number: " + v);
  }
  if (used != v.size()) throw InvalidArgumentError(key + ": not a number: " + v);
  return d;
}

std::uint32_t parse_u32(const std::string& key, const std::string& v) {
  const auto n = parse_u64(key, v);
  if (n > 0xffffffffULL) throw InvalidArgumentError(key + ": out of range");
  return static_cast<std::uint32_t>(n);
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  if (out.empty()) out.emplace_back();
  return out;
}

std::string fmt(double d) {
  if (!std::isfinite(d)) return "nan";
  std::ostringstream os;
  os << std::setprecision(10) << d;
  return os.str();
}

}  // namespace

void apply_setting(BenchConfig& cfg, const std::string& key, const std::string& value) {
  auto& e = cfg.engine;
  auto& d = cfg.device;
  auto& w = cfg.workload;
  const std::string& v = value;
  if (key == "page_size") e.page_size = parse_u32(key, v);
  else if (key == "segment_size") e.segment_size = parse_u32(key, v);
  else if (key == "threshold") e.threshold = parse_u64(key, v);
  else if (key == "cache_bytes") e.cache_bytes = parse_u64(key, v);
  else if (key == "flushers") e.flusher_count = parse_u32(key, v);
  else if (key == "mode") {
    if (v == "bminus") e.mode = StoreMode::kBminus;
    else if (v == "baseline") e.mode = StoreMode::kBaseline;
    else throw InvalidArgumentError("mode must be bminus or baseline");
  } else if (key == "log_mode") {
    if (v == "sparse") e.log_mode = LogMode::kSparse;
    else if (v == "packed") e.log_mode = LogMode::kPacked;
    else throw InvalidArgumentError("log_mode must be sparse or packed");
  } else if (key == "log_policy") {
    if (v == "per-commit") e.log_policy = FlushPolicy::kPerCommit;
    else if (v == "timer") e.log_policy = FlushPolicy::kTimer;
    else throw InvalidArgumentError("log_policy must be per-commit or timer");
  } else if (key == "timer_ms") e.timer_interval = std::chrono::milliseconds(parse_u64(key, v));
  else if (key == "log_fraction") e.log_fraction = parse_double(key, v);
  else if (key == "dirty_target") e.dirty_target = parse_double(key, v);
  else if (key == "checkpoint_log_usage") e.checkpoint_log_usage = parse_double(key, v);
  else if (key == "log_retain_usage") e.log_retain_usage = parse_double(key, v);
  else if (key == "codec") d.codec = v;
  else if (key == "sync_latency_us") d.sync_latency = std::chrono::microseconds(parse_u64(key, v));
  else if (key == "device_blocks") d.logical_blocks = parse_u64(key, v);
  else if (key == "physical_capacity") d.physical_capacity_bytes = parse_u64(key, v);
  else if (key == "device_file") d.backing_file = v;
  else if (key == "record_size") w.record_size = parse_u32(key, v);
  else if (key == "dataset_bytes") w.dataset_bytes = parse_u64(key, v);
  else if (key == "threads") w.threads = parse_u32(key, v);
  else if (key == "ops") w.ops = parse_u64(key, v);
  else if (key == "duration_s") w.duration_s = parse_double(key, v);
  else if (key == "warmup_ops") w.warmup_ops = parse_u64(key, v);
  else if (key == "op_mix") {
    if (v == "write") w.mix = OpMix::kWrite;
    else if (v == "read") w.mix = OpMix::kRead;
    else if (v == "scan") w.mix = OpMix::kScan;
    else throw InvalidArgumentError("op_mix must be write, read or scan");
  } else if (key == "scan_length") w.scan_length = parse_u32(key, v);
  else if (key == "seed") w.seed = parse_u64(key, v);
  else if (key == "populate_cache_bytes") w.populate_cache_bytes = parse_u64(key, v);
  else if (key == "populate_batch") w.populate_batch = parse_u32(key, v);
  else throw InvalidArgumentError("unknown setting: " + key);
}

std::vector<std::pair<std::string, std::string>> parse_settings(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidArgumentError("line " + std::to_string(n) + ": expected key=value");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> load_settings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config file " + path);
  return parse_settings(in);
}

BenchConfig make_config(const std::vector<std::pair<std::string, std::string>>& settings) {
  BenchConfig cfg;
  for (const auto& [k, v] : settings) apply_setting(cfg, k, v);
  return cfg;
}

std::vector<BenchConfig> expand_matrix(const std::vector<std::pair<std::string, std::string>>& settings) {
  // later duplicates override earlier ones, keeping the first position
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  for (const auto& [k, v] : settings) {
    auto it = std::find_if(axes.begin(), axes.end(), [&](const auto& a) { return a.first == k; });
    if (it == axes.end()) axes.emplace_back(k, split_commas(v));
    else it->second = split_commas(v);
  }
  std::vector<BenchConfig> out;
  std::vector<std::size_t> idx(axes.size(), 0);
  for (;;) {
    BenchConfig cfg;
    for (std::size_t a = 0; a < axes.size(); ++a) apply_setting(cfg, axes[a].first, axes[a].second[idx[a]]);
    out.push_back(cfg);
    std::size_t a = axes.size();
    while (a > 0) {
      --a;
      if (++idx[a] < axes[a].second.size()) break;
      idx[a] = 0;
      if (a == 0) return out;
    }
    if (axes.empty()) return out;
  }
}

std::vector<std::pair<std::string, std::string>> describe(const BenchConfig& cfg) {
  const auto& e = cfg.engine;
  const auto& d = cfg.device;
  const auto& w = cfg.workload;
  return {
      {"mode", std::string(mode_name(e.mode))},
      {"log_mode", std::string(log_mode_name(e.log_mode))},
      {"log_policy", std::string(policy_name(e.log_policy))},
      {"page_size", std::to_string(e.page_size)},
      {"segment_size", std::to_string(e.segment_size)},
      {"threshold", std::to_string(e.threshold)},
      {"cache_bytes", std::to_string(e.cache_bytes)},
      {"flushers", std::to_string(e.flusher_count)},
      {"timer_ms", std::to_string(e.timer_interval.count())},
      {"codec", d.codec},
      {"sync_latency_us", std::to_string(d.sync_latency.count())},
      {"record_size", std::to_string(w.record_size)},
      {"dataset_bytes", std::to_string(w.dataset_bytes)},
      {"threads", std::to_string(w.threads)},
      {"ops", std::to_string(w.ops)},
      {"duration_s", fmt(w.duration_s)},
      {"warmup_ops", std::to_string(w.warmup_ops)},
      {"op_mix", std::string(op_mix_name(w.mix))},
      {"seed", std::to_string(w.seed)},
  };
}

EngineConfig resolved_engine_config(const BenchConfig& cfg) {
  EngineConfig e = cfg.engine;
  e.threshold = std::min(e.threshold, max_threshold(e.geometry()));
  return e;
}

constexpr std::uint64_t kMinAutoBlocks = std::uint64_t{1} << 17;

DeviceConfig resolved_device_config(const BenchConfig& cfg) {
  DeviceConfig d = cfg.device;
  if (d.logical_blocks != 0) return d;
  const auto& w = cfg.workload;
  const auto& e = cfg.engine;
  const double fp = static_cast<double>(page_layout::footprint(8, w.record_size - 8));
  const double usable = static_cast<double>(e.page_size - page_layout::kHeaderSize - page_layout::kTrailerSize);
  const double leaves = std::ceil(static_cast<double>(w.record_count()) * fp / (usable * 0.5));
  const std::uint64_t pages = static_cast<std::uint64_t>(leaves * 1.1) + 64;
  const std::uint64_t region = 2 * (e.page_size / kBlockSize) + 1;
  const double body = static_cast<double>(2 + pages * region + 2 * (pages / 509 + 1));
  d.logical_blocks = static_cast<std::uint64_t>(std::ceil(body / (1.0 - e.log_fraction))) + 256;
  // unused logical space is free; a roomy log ring keeps old deltas covered
  d.logical_blocks = std::max<std::uint64_t>(d.logical_blocks, kMinAutoBlocks);
  return d;
}

std::string encode_key(std::uint64_t k) {
  std::string s(8, '\0');
  for (int i = 0; i < 8; ++i) s[i] = static_cast<char>(k >> (56 - 8 * i));
  return s;
}

std::vector<std::uint64_t> dataset_keys(const WorkloadSpec& w) {
  const std::uint64_t n = w.record_count();
  std::vector<std::uint64_t> keys;
  keys.reserve(n);
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(n * 2);
  std::mt19937_64 rng(w.seed);
  while (keys.size() < n) {
    const std::uint64_t k = rng();
    if (seen.insert(k).second) keys.push_back(k);
  }
  return keys;
}

std::string make_value(std::uint32_t record_size, std::mt19937_64& rng) {
  std::string v(record_size - 8, '\0');
  const std::size_t random = record_size / 2 > 8 ? record_size / 2 - 8 : 0;
  for (std::size_t i = 0; i < random; i += 8) {
    const std::uint64_t x = rng();
    std::memcpy(v.data() + i, &x, std::min<std::size_t>(8, random - i));
  }
  return v;
}

void populate(Engine& engine, const WorkloadSpec& w, std::uint64_t run_cache_bytes) {
  const auto keys = dataset_keys(w);
  std::mt19937_64 rng(w.seed ^ 0x5eedULL);
  for (std::size_t i = 0; i < keys.size();) {
    auto t = engine.begin();
    for (std::size_t j = 0; j < w.populate_batch && i < keys.size(); ++j, ++i)
      t.put(encode_key(keys[i]), make_value(w.record_size, rng));
    engine.commit(t);
  }
  engine.resize_cache(run_cache_bytes);
}

namespace {

std::uint64_t thread_seed(std::uint64_t seed, unsigned t, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), t,
                    static_cast<std::uint32_t>(salt)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (std::uint64_t{out[0]} << 32) | out[1];
}

std::uint64_t drive(Engine& engine, const WorkloadSpec& w, const std::vector<std::uint64_t>& keys,
                    std::uint64_t ops, double duration_s, std::uint64_t salt) {
  std::vector<std::thread> threads;
  std::vector<std::uint64_t> done(w.threads, 0);
  std::exception_ptr error;
  std::mutex error_mu;
  const auto start = std::chrono::steady_clock::now();
  for (unsigned t = 0; t < w.threads; ++t) {
    const std::uint64_t share = ops / w.threads + (t < ops % w.threads ? 1 : 0);
    threads.emplace_back([&, t, share] {
      try {
        std::mt19937_64 rng(thread_seed(w.seed, t, salt));
        std::uniform_int_distribution<std::size_t> pick(0, keys.size() - 1);
        for (std::uint64_t i = 0;; ++i) {
          if (duration_s > 0) {
            if ((i & 63) == 0 &&
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() >= duration_s)
              break;
          } else if (i >= share) {
            break;
          }
          const std::string key = encode_key(keys[pick(rng)]);
          switch (w.mix) {
            case OpMix::kWrite: engine.put(key, make_value(w.record_size, rng)); break;
            case OpMix::kRead: engine.get(key); break;
            case OpMix::kScan: engine.scan(key, w.scan_length); break;
          }
          ++done[t];
        }
      } catch (...) {
        std::lock_guard lk(error_mu);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : threads) th.join();
  if (error) std::rethrow_exception(error);
  std::uint64_t total = 0;
  for (auto d : done) total += d;
  return total;
}

WAReport report_between(const IoCounters& a, const IoCounters& b) {
  if (b.user_bytes != a.user_bytes) return make_report(a, b);
  WAReport r;
  CategoryReport* parts[kCategories] = {&r.log, &r.pg, &r.e};
  for (std::size_t i = 0; i < kCategories; ++i) {
    parts[i]->logical = b.logical[i] - a.logical[i];
    parts[i]->physical = b.physical[i] - a.physical[i];
    parts[i]->wa = NAN;
    parts[i]->alpha = parts[i]->logical == 0
                          ? 0.0
                          : static_cast<double>(parts[i]->physical) / static_cast<double>(parts[i]->logical);
  }
  r.wa_total = NAN;
  r.wa_from_components = NAN;
  r.device_physical_delta = b.device_physical - a.device_physical;
  return r;
}

std::string now_iso() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

ExperimentResult run_workload(Engine& engine, const BenchConfig& cfg) {
  const auto& w = cfg.workload;
  w.validate();
  const auto keys = dataset_keys(w);
  ExperimentResult r;
  r.config = cfg;
  r.records = keys.size();
  r.timestamp = now_iso();
  if (w.warmup_ops > 0) drive(engine, w, keys, w.warmup_ops, 0.0, 1);
  const IoCounters begin = engine.io().snapshot();
  const auto t0 = std::chrono::steady_clock::now();
  r.ops_done = drive(engine, w, keys, w.ops, w.duration_s, 2);
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  engine.quiesce();
  const IoCounters end = engine.io().snapshot();
  r.wa = report_between(begin, end);
  r.ops_per_sec = r.wall_seconds > 0 ? static_cast<double>(r.ops_done) / r.wall_seconds : 0.0;
  engine.checkpoint();
  r.overhead = engine.beta_scan();
  r.stats = engine.stats();
  return r;
}

ExperimentResult run_experiment(const BenchConfig& cfg) {
  cfg.workload.validate();
  const EngineConfig ec = resolved_engine_config(cfg);
  SimDevice device(resolved_device_config(cfg));
  EngineConfig load = ec;
  load.cache_bytes = cfg.workload.populate_cache_bytes;
  if (load.cache_bytes == 0) {
    const std::uint64_t want = cfg.workload.dataset_bytes * 3 + (std::uint64_t{4} << 20);
    load.cache_bytes = std::max<std::uint64_t>(want, ec.cache_bytes);
  }
  auto engine = Engine::open(load, device);
  populate(*engine, cfg.workload, ec.cache_bytes);
  auto r = run_workload(*engine, cfg);
  engine->close();
  return r;
}

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = {
      "timestamp",      "mode",          "log_mode",         "log_policy",
      "page_size",      "segment_size",  "threshold",        "cache_bytes",
      "flushers",       "timer_ms",      "codec",            "sync_latency_us",
      "record_size",    "dataset_bytes", "records",          "threads",
      "ops",            "duration_s",    "warmup_ops",       "op_mix",
      "seed",           "ops_done",      "w_usr",            "w_log",
      "p_log",          "w_pg",          "p_pg",             "w_e",
      "p_e",            "alpha_log",     "alpha_pg",         "alpha_e",
      "wa_log",         "wa_pg",         "wa_e",             "phys_wa_log",
      "phys_wa_pg",     "phys_wa_e",     "wa_total",         "wa_from_components",
      "device_physical_delta", "conserved", "pages",         "height",
      "delta_flushes",  "full_flushes",  "checkpoints",      "forced_resets", "beta",
      "beta_compressed", "delta_bytes",  "delta_resident_bytes", "physical_footprint",
      "wall_seconds",   "ops_per_sec",
  };
  return cols;
}

std::vector<std::string> csv_fields(const ExperimentResult& r) {
  const auto& e = r.config.engine;
  const auto ec = resolved_engine_config(r.config);
  const auto& w = r.config.workload;
  const auto& a = r.wa;
  const double usr = static_cast<double>(a.user_bytes);
  auto phys_wa = [&](const CategoryReport& c) {
    return usr > 0 ? fmt(static_cast<double>(c.physical) / usr) : std::string("nan");
  };
  return {
      r.timestamp,
      std::string(mode_name(e.mode)),
      std::string(log_mode_name(e.log_mode)),
      std::string(policy_name(e.log_policy)),
      std::to_string(e.page_size),
      std::to_string(e.segment_size),
      std::to_string(ec.threshold),
      std::to_string(e.cache_bytes),
      std::to_string(e.flusher_count),
      std::to_string(e.timer_interval.count()),
      r.config.device.codec,
      std::to_string(r.config.device.sync_latency.count()),
      std::to_string(w.record_size),
      std::to_string(w.dataset_bytes),
      std::to_string(r.records),
      std::to_string(w.threads),
      std::to_string(w.ops),
      fmt(w.duration_s),
      std::to_string(w.warmup_ops),
      std::string(op_mix_name(w.mix)),
      std::to_string(w.seed),
      std::to_string(r.ops_done),
      std::to_string(a.user_bytes),
      std::to_string(a.log.logical),
      std::to_string(a.log.physical),
      std::to_string(a.pg.logical),
      std::to_string(a.pg.physical),
      std::to_string(a.e.logical),
      std::to_string(a.e.physical),
      fmt(a.log.alpha),
      fmt(a.pg.alpha),
      fmt(a.e.alpha),
      fmt(a.log.wa),
      fmt(a.pg.wa),
      fmt(a.e.wa),
      phys_wa(a.log),
      phys_wa(a.pg),
      phys_wa(a.e),
      fmt(a.wa_total),
      fmt(a.wa_from_components),
      std::to_string(a.device_physical_delta),
      a.conserved() ? "1" : "0",
      std::to_string(r.overhead.pages),
      std::to_string(r.stats.height),
      std::to_string(r.stats.delta_flushes),
      std::to_string(r.stats.full_flushes),
      std::to_string(r.stats.checkpoints),
      std::to_string(r.stats.forced_resets),
      fmt(r.overhead.beta),
      fmt(r.overhead.beta_compressed),
      std::to_string(r.overhead.delta_bytes),
      std::to_string(r.overhead.delta_resident_bytes),
      std::to_string(r.overhead.physical_footprint),
      fmt(r.wall_seconds),
      fmt(r.ops_per_sec),
  };
}

void write_csv(std::ostream& out, const std::vector<ExperimentResult>& results) {
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& r : results) {
    const auto f = csv_fields(r);
    for (std::size_t i = 0; i < f.size(); ++i) out << (i ? "," : "") << f[i];
    out << '\n';
  }
}

std::vector<std::vector<std::string>> read_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(cell);
    if (!line.empty() && line.back() == ',') row.emplace_back();
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_table(const std::vector<std::vector<std::string>>& rows,
                         const std::vector<std::string>& columns) {
  if (rows.empty()) return {};
  const auto& header = rows.front();
  std::vector<std::size_t> pick;
  for (const auto& c : columns) {
    auto it = std::find(header.begin(), header.end(), c);
    if (it == header.end()) throw InvalidArgumentError("no such column: " + c);
    pick.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  if (columns.empty())
    for (std::size_t i = 0; i < header.size(); ++i) pick.push_back(i);
  std::vector<std::size_t> width(pick.size(), 0);
  for (const auto& row : rows)
    for (std::size_t i = 0; i < pick.size(); ++i)
      if (pick[i] < row.size()) width[i] = std::max(width[i], row[pick[i]].size());
  std::ostringstream os;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t i = 0; i < pick.size(); ++i) {
      const std::string cell = pick[i] < rows[r].size() ? rows[r][pick[i]] : "";
      os << (i ? "  " : "") << std::setw(static_cast<int>(width[i])) << cell;
    }
    os << '\n';
    if (r == 0) {
      for (std::size_t i = 0; i < pick.size(); ++i) os << (i ? "  " : "") << std::string(width[i], '-');
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace bminus
