#include <doctest.h>

#include <thread>

#include "bminus/device.h"
#include "bminus/metrics.h"

using namespace bminus;

TEST_CASE("WA arithmetic") {
  IoCounters a, b;
  b.user_bytes = 100;
  b.logical = {200, 400, 0};
  b.physical = {50, 100, 0};
  b.device_physical = 150;
  const auto r = make_report(a, b);
  CHECK(r.wa_total == doctest::Approx(1.5));
  CHECK(r.log.wa == doctest::Approx(2.0));
  CHECK(r.log.alpha == doctest::Approx(0.25));
  CHECK(r.pg.alpha == doctest::Approx(0.25));
  CHECK(r.e.alpha == 0.0);
  CHECK(r.wa_from_components == doctest::Approx(1.5));
  CHECK(r.conserved());
  CHECK(r.logical_wa() == doctest::Approx(6.0));
  CHECK_THROWS_AS(make_report(a, a), InvalidArgumentError);
}

TEST_CASE("storage overhead arithmetic") {
  CHECK(make_overhead_report(4, 8192, 0, 0).beta == 0.0);
  const auto r = make_overhead_report(2, 8192, 1024, 300);
  CHECK(r.beta == doctest::Approx(0.0625));
  CHECK(r.beta_compressed == doctest::Approx(300.0 / 16384));
  CHECK(make_overhead_report(0, 8192, 0, 0).beta == 0.0);
}

TEST_CASE("accountant credits the device's own numbers") {
  SimDevice dev([] {
    DeviceConfig c;
    c.logical_blocks = 64;
    return c;
  }());
  IoAccountant io(dev);
  const Bytes zero(kBlockSize, 0);
  const auto p = io.write(0, zero, {WriteCategory::kLog, WriteKind::kLog});
  const auto s = io.snapshot();
  CHECK(s.logical[0] == 4096);
  CHECK(s.physical[0] == p);
  CHECK(s.device_physical == p);
  CHECK_THROWS_AS(io.write(1, zero, {WriteCategory::kNone, WriteKind::kOther}), InvalidArgumentError);
  io.record_write({WriteCategory::kLog, WriteKind::kLog}, 4096, 600);
  CHECK(io.snapshot().logical[0] == 8192);
  CHECK(io.snapshot().physical[0] == p + 600);
}

TEST_CASE("concurrent records sum") {
  SimDevice dev([] {
    DeviceConfig c;
    c.logical_blocks = 64;
    return c;
  }());
  IoAccountant io(dev);
  std::vector<std::thread> ts;
  for (int t = 0; t < 4; ++t)
    ts.emplace_back([&] {
      for (int i = 0; i < 10000; ++i) io.record_write({WriteCategory::kPage, WriteKind::kSlot}, 2, 1);
    });
  for (auto& t : ts) t.join();
  CHECK(io.snapshot().logical[1] == 80000);
  CHECK(io.snapshot().physical[1] == 40000);
}
