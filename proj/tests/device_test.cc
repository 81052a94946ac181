#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "bminus/codec.h"
#include "bminus/device.h"
#include "support.h"

using namespace bminus;
using testing::block_of;
using testing::lcg_bytes;

namespace {

// zlib level 1 over the exact patterns below, computed outside this code base.
constexpr std::size_t kZeroBlockPhysical = 41;
constexpr std::size_t kHalfRandomPhysical = 2121;
constexpr std::size_t kRandomPhysical = 4107;

DeviceConfig small(std::string codec = "deflate") {
  DeviceConfig c;
  c.logical_blocks = 64;
  c.codec = codec;
  return c;
}

Bytes half_random() {
  Bytes b = lcg_bytes(1, 2048);
  b.resize(kBlockSize, 0);
  return b;
}

}  // namespace

TEST_CASE("codec oracles") {
  DeflateCodec d;
  CHECK(d.compressed_size(block_of(0)) == kZeroBlockPhysical);
  CHECK(d.compressed_size(half_random()) == kHalfRandomPhysical);
  CHECK(d.compressed_size(lcg_bytes(2, kBlockSize)) == kRandomPhysical);
  CHECK(kRandomPhysical <= kBlockSize + d.max_overhead());

  ZeroRunCodec z;
  CHECK(z.compressed_size(block_of(0)) == 4 + 3);
  Bytes lit(kBlockSize, 0);
  lit[0] = 1;
  CHECK(z.compressed_size(lit) == 4 + 3 + 3);
  CHECK(z.compressed_size(lcg_bytes(9, kBlockSize)) <= kBlockSize + z.max_overhead());
  CHECK_THROWS_AS(make_codec("lz77"), InvalidArgumentError);
  CHECK(make_codec("deflate:6")->name() == "deflate");
}

TEST_CASE("physical accounting per write") {
  SimDevice dev(small());
  CHECK(dev.stats().physical_bytes_written == 0);
  CHECK(dev.write_block(0, block_of(0)) == kZeroBlockPhysical);
  const auto rnd = lcg_bytes(2, kBlockSize);
  const auto p = dev.write_block(1, rnd);
  CHECK(p >= kBlockSize);
  CHECK(p <= kBlockSize + dev.codec().max_overhead());
  const auto h = dev.write_block(2, half_random());
  CHECK(static_cast<double>(h) == doctest::Approx(2048).epsilon(0.10));
  const auto s = dev.stats();
  CHECK(s.logical_bytes_written == 3 * kBlockSize);
  CHECK(s.physical_bytes_written == kZeroBlockPhysical + p + h);
  CHECK(s.physical_bytes_resident == kZeroBlockPhysical + p + h);
  CHECK(s.block_writes == 3);
}

TEST_CASE("ten zero blocks") {
  SimDevice dev(small());
  for (Lba i = 0; i < 10; ++i) dev.write_block(i, block_of(0));
  CHECK(dev.stats().logical_bytes_written == 40960);
  CHECK(dev.stats().physical_bytes_written <= 10 * kZeroBlockPhysical);
}

TEST_CASE("read, write, trim round trips") {
  SimDevice dev(small());
  Bytes out(kBlockSize, 7);
  dev.read_block(5, out);
  CHECK(is_all_zero(out));
  const auto x = lcg_bytes(3, kBlockSize);
  dev.write_block(5, x);
  dev.read_block(5, out);
  CHECK(out == x);
  dev.trim(5);
  dev.read_block(5, out);
  CHECK(is_all_zero(out));
  CHECK_THROWS_AS(dev.write_block(64, x), OutOfRangeError);
  CHECK_THROWS_AS(dev.write_block(0, Bytes(100)), InvalidArgumentError);
}

TEST_CASE("trim bookkeeping") {
  SimDevice dev(small());
  dev.trim(3);
  CHECK(dev.stats().trims_issued == 1);
  CHECK(dev.stats().physical_bytes_resident == 0);
  const auto a = dev.write_block(3, half_random());
  CHECK(dev.resident_bytes(3) == a);
  dev.trim(3);
  CHECK(dev.stats().physical_bytes_resident == 0);
  const auto b = dev.write_block(3, block_of(0));
  CHECK(dev.stats().physical_bytes_resident == b);
  CHECK(b == kZeroBlockPhysical);
}

TEST_CASE("multi-block reads") {
  SimDevice dev(small());
  dev.write_block(10, block_of(1));
  dev.write_block(12, block_of(3));
  Bytes out(3 * kBlockSize);
  dev.read_blocks(10, out);
  CHECK(out[0] == 1);
  CHECK(out[kBlockSize] == 0);
  CHECK(out[2 * kBlockSize] == 3);
  CHECK(dev.stats().read_requests == 1);
}

TEST_CASE("thin provisioning") {
  DeviceConfig c = small();
  c.logical_blocks = 256;
  c.physical_capacity_bytes = 128 * kBlockSize;
  SimDevice dev(c);
  for (Lba i = 0; i < 256; ++i) dev.write_block(i, block_of(0));
  CHECK(dev.stats().logical_bytes_written > c.physical_capacity_bytes);
  SimDevice full([&] {
    auto d = c;
    d.physical_capacity_bytes = 2 * kBlockSize;
    return d;
  }());
  full.write_block(0, lcg_bytes(4, kBlockSize));
  CHECK_THROWS_AS(full.write_block(1, lcg_bytes(5, kBlockSize)), DeviceFullError);
}

TEST_CASE("crash after zero writes keeps nothing") {
  SimDevice dev(small());
  FaultPlan plan;
  plan.crash_after_n_block_writes = 0;
  dev.inject_crash(plan);
  CHECK_THROWS_AS(dev.write_block(0, block_of(9)), DeviceCrashedError);
  CHECK(dev.crashed());
  CHECK_THROWS_AS(dev.write_block(1, block_of(9)), DeviceCrashedError);
  dev.reopen();
  Bytes out(kBlockSize);
  dev.read_block(0, out);
  CHECK(is_all_zero(out));
}

TEST_CASE("torn write keeps a new prefix and an old suffix") {
  SimDevice dev(small());
  dev.write_block(0, block_of(0xAA));
  FaultPlan plan;
  plan.crash_after_n_block_writes = 1;
  plan.partial_write_fraction = 0.5;
  dev.inject_crash(plan);
  dev.write_block(1, block_of(1));
  CHECK_THROWS_AS(dev.write_block(0, block_of(0xBB)), DeviceCrashedError);
  dev.reopen();
  Bytes out(kBlockSize);
  dev.read_block(0, out);
  CHECK(out[0] == 0xBB);
  CHECK(out[2047] == 0xBB);
  CHECK(out[2048] == 0xAA);
  CHECK(out[4095] == 0xAA);
  dev.read_block(1, out);
  CHECK(out[0] == 1);
}

TEST_CASE("suppressed trims after the cut") {
  SimDevice dev(small());
  dev.write_block(0, block_of(1));
  FaultPlan plan;
  plan.crash_after_n_block_writes = 0;
  plan.suppress_pending_trims = true;
  dev.inject_crash(plan);
  dev.trim(0);
  dev.reopen();
  Bytes out(kBlockSize);
  dev.read_block(0, out);
  CHECK(out[0] == 1);
}

TEST_CASE("file-backed image survives reopen") {
  const auto path = (std::filesystem::temp_directory_path() / "bminus_device_test.img").string();
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".stats");
  const auto x = lcg_bytes(6, kBlockSize);
  std::size_t phys = 0;
  {
    DeviceConfig c = small();
    c.backing_file = path;
    SimDevice dev(c);
    phys = dev.write_block(7, x);
    dev.write_block(8, block_of(0));
    dev.trim(8);
    dev.save_stats();
  }
  {
    DeviceConfig c;
    c.logical_blocks = 0;
    c.backing_file = path;
    SimDevice dev(c);
    CHECK(dev.logical_blocks() == 64);
    Bytes out(kBlockSize);
    dev.read_block(7, out);
    CHECK(out == x);
    dev.read_block(8, out);
    CHECK(is_all_zero(out));
    CHECK(dev.stats().physical_bytes_resident == phys);
    CHECK(dev.stats().physical_bytes_written == phys + kZeroBlockPhysical);
  }
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".stats");
}
