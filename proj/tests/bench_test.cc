#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "bminus/bench.h"

using namespace bminus;

namespace {

std::vector<std::pair<std::string, std::string>> small_run() {
  return {{"dataset_bytes", "256K"}, {"cache_bytes", "128K"}, {"ops", "600"},
          {"device_blocks", "8192"}, {"flushers", "0"},      {"codec", "zero-run"},
          {"duration_s", "0"}};
}

std::size_t lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("settings parsing") {
  std::istringstream in("# comment\npage_size = 16384\n\nthreshold=1K  # trailing\ncache_bytes=2M\n");
  const auto s = parse_settings(in);
  REQUIRE(s.size() == 3);
  const auto cfg = make_config(s);
  CHECK(cfg.engine.page_size == 16384);
  CHECK(cfg.engine.threshold == 1024);
  CHECK(cfg.engine.cache_bytes == 2u << 20);
  BenchConfig c;
  CHECK_THROWS_AS(apply_setting(c, "nope", "1"), InvalidArgumentError);
  CHECK_THROWS_AS(apply_setting(c, "threads", "many"), InvalidArgumentError);
  CHECK_THROWS_AS(apply_setting(c, "mode", "lsm"), InvalidArgumentError);
  apply_setting(c, "op_mix", "scan");
  CHECK(c.workload.mix == OpMix::kScan);
  apply_setting(c, "log_policy", "timer");
  CHECK(c.engine.log_policy == FlushPolicy::kTimer);
}

TEST_CASE("matrix expansion") {
  const auto m = expand_matrix({{"mode", "bminus,baseline"}, {"log_mode", "sparse,packed"},
                                {"threshold", "1K,2K,4K"}, {"ops", "10"}});
  REQUIRE(m.size() == 12);
  CHECK(m[0].engine.mode == StoreMode::kBminus);
  CHECK(m[0].engine.threshold == 1024);
  CHECK(m[1].engine.threshold == 2048);
  CHECK(m[3].engine.log_mode == LogMode::kPacked);
  CHECK(m[6].engine.mode == StoreMode::kBaseline);
  CHECK(expand_matrix({}).size() == 1);
  CHECK(expand_matrix({{"threads", "1,2"}, {"threads", "4"}}).size() == 1);
}

TEST_CASE("threshold clamp and device sizing") {
  BenchConfig c;
  c.engine.threshold = 4096;
  CHECK(resolved_engine_config(c).threshold == 4056);
  const auto d = resolved_device_config(c);
  CHECK(d.logical_blocks >= (std::uint64_t{1} << 17));
  c.device.logical_blocks = 1000;
  CHECK(resolved_device_config(c).logical_blocks == 1000);
}

TEST_CASE("dataset generation") {
  WorkloadSpec w;
  w.dataset_bytes = 1 << 20;
  CHECK(w.record_count() == 8192);
  const auto keys = dataset_keys(w);
  CHECK(keys.size() == 8192);
  CHECK(std::set<std::uint64_t>(keys.begin(), keys.end()).size() == 8192);
  CHECK(dataset_keys(w) == keys);
  CHECK(encode_key(0x0102030405060708ULL) == std::string("\x01\x02\x03\x04\x05\x06\x07\x08", 8));
  CHECK(encode_key(1) < encode_key(256));
  std::mt19937_64 rng(1);
  const auto v = make_value(128, rng);
  CHECK(v.size() == 120);
  for (std::size_t i = 56; i < v.size(); ++i) REQUIRE(v[i] == '\0');
  w.record_size = 8;
  CHECK_THROWS_AS(w.validate(), InvalidArgumentError);
}

TEST_CASE("populate is deterministic") {
  auto s = small_run();
  const auto cfg = make_config(s);
  std::vector<std::pair<std::string, std::string>> first;
  for (int round = 0; round < 2; ++round) {
    SimDevice dev(resolved_device_config(cfg));
    auto load = resolved_engine_config(cfg);
    load.cache_bytes = 4u << 20;
    auto e = Engine::open(load, dev);
    populate(*e, cfg.workload, cfg.engine.cache_bytes);
    const auto all = e->scan("", ~std::size_t{0});
    CHECK(all.size() == cfg.workload.record_count());
    const auto keys = dataset_keys(cfg.workload);
    std::set<std::string> want;
    for (auto k : keys) want.insert(encode_key(k));
    std::set<std::string> got;
    for (const auto& kv : all) got.insert(kv.first);
    CHECK(got == want);
    if (round == 0) first = all;
    else CHECK(all == first);
    e->close();
  }
}

TEST_CASE("write-only run accounting") {
  auto r = run_experiment(make_config(small_run()));
  CHECK(r.ops_done == 600);
  CHECK(r.wa.user_bytes == 600 * 128);
  CHECK(r.wa.conserved());
  CHECK(r.wa.wa_total == doctest::Approx(r.wa.wa_from_components).epsilon(1e-9));
  CHECK(r.wa.e.logical == 0);
}

TEST_CASE("read-only run writes no user data") {
  auto s = small_run();
  s.emplace_back("op_mix", "read");
  const auto r = run_experiment(make_config(s));
  CHECK(r.wa.user_bytes == 0);
  CHECK(r.wa.conserved());
  CHECK(std::isnan(r.wa.wa_total));
}

TEST_CASE("csv output") {
  auto s = small_run();
  const auto r = run_experiment(make_config(s));
  std::ostringstream one;
  write_csv(one, {r});
  CHECK(lines(one.str()) == 2);
  std::ostringstream many;
  write_csv(many, std::vector<ExperimentResult>(12, r));
  CHECK(lines(many.str()) == 13);
  std::istringstream in(one.str());
  const auto rows = read_csv(in);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == csv_columns());
  CHECK(rows[1].size() == csv_columns().size());
  const auto table = format_table(rows, {"mode", "wa_total"});
  CHECK(table.find("bminus") != std::string::npos);
  CHECK(lines(table) == 3);
}

TEST_CASE("same seed, same numbers") {
  const auto a = run_experiment(make_config(small_run()));
  const auto b = run_experiment(make_config(small_run()));
  CHECK(a.wa.user_bytes == b.wa.user_bytes);
  CHECK(a.wa.wa_total == doctest::Approx(b.wa.wa_total).epsilon(0.05));
  auto fa = csv_fields(a), fb = csv_fields(b);
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] == "timestamp" || cols[i] == "wall_seconds" || cols[i] == "ops_per_sec") continue;
    CAPTURE(cols[i]);
    CHECK(fa[i] == fb[i]);
  }
}
