#include <doctest.h>

#include <map>
#include <random>

#include "bminus/page.h"
#include "support.h"

using namespace bminus;

namespace {

const PageGeometry kGeo{8192, 128};

std::string key8(std::uint64_t k) {
  std::string s(8, '\0');
  for (int i = 7; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = static_cast<char>(k & 0xff);
    k >>= 8;
  }
  return s;
}

}  // namespace

TEST_CASE("fresh page") {
  auto p = PageImage::fresh(kGeo, 3, 0);
  CHECK(p.record_count() == 0);
  CHECK(p.page_id() == 3);
  CHECK(p.is_leaf());
  const auto bytes = p.serialize();
  CHECK(verify_checksum(bytes));
  CHECK(is_valid_page_image(bytes));
  CHECK(PageImage::deserialize(kGeo, bytes).record_count() == 0);
}

TEST_CASE("round trip with one record") {
  auto p = PageImage::fresh(kGeo, 1, 0);
  PageEditor(p, nullptr).insert(0, "k", "value");
  PageEditor(p, nullptr).seal();
  const auto q = PageImage::deserialize(kGeo, p.serialize());
  CHECK(q == p);
  CHECK(q.key_at(0) == "k");
  CHECK(q.value_at(0) == "value");
}

TEST_CASE("flipped byte fails the checksum") {
  auto p = PageImage::fresh(kGeo, 1, 0);
  PageEditor(p, nullptr).insert(0, "k", "v");
  auto bytes = p.serialize();
  bytes[5000] ^= 0x01;
  CHECK_FALSE(verify_checksum(bytes));
  CHECK_THROWS_AS(PageImage::deserialize(kGeo, bytes), CorruptionError);
}

TEST_CASE("torn image fails the checksum") {
  auto old_page = PageImage::fresh(kGeo, 1, 0);
  auto new_page = PageImage::fresh(kGeo, 1, 0);
  PageEditor(new_page, nullptr).insert(0, "a", std::string(3000, 'x'));
  PageEditor(new_page, nullptr).set_lsn(9);
  const auto a = old_page.serialize();
  const auto b = new_page.serialize();
  for (std::size_t cut : {std::size_t{2048}, std::size_t{4096}, std::size_t{6144}}) {
    Bytes torn(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(cut));
    torn.insert(torn.end(), a.begin() + static_cast<std::ptrdiff_t>(cut), a.end());
    CHECK_FALSE(is_valid_page_image(torn));
  }
}

TEST_CASE("capacity for 128-byte records") {
  // 64B header + 16B trailer; each record costs 4 + 8 + 120 + 2 bytes
  const std::uint32_t per = page_layout::footprint(8, 120);
  CHECK(per == 134);
  const std::uint32_t capacity = page_layout::usable_bytes(8192) / per;
  CHECK(capacity == 60);
  auto p = PageImage::fresh(kGeo, 1, 0);
  PageEditor ed(p, nullptr);
  const std::string v(120, 'v');
  for (std::uint32_t i = 0; i < capacity; ++i) REQUIRE(ed.insert(i, key8(i), v));
  ed.seal();
  CHECK(is_valid_page_image(p.serialize()));
  CHECK_FALSE(ed.insert(capacity, key8(capacity), v));
  CHECK(p.record_count() == capacity);
}

TEST_CASE("segment tracking") {
  SegmentTracker t(kGeo);
  t.mark_dirty(0, 10);
  CHECK(t.bits().test(0));
  CHECK(t.bits().count() == 1);
  t.mark_dirty(120, 20);
  CHECK(t.bits().test(0));
  CHECK(t.bits().test(1));
  const auto once = t.bits();
  t.mark_dirty(120, 20);
  CHECK(t.bits() == once);
  CHECK(t.delta_size() == 256);
}

TEST_CASE("delta size") {
  SegmentBits f(64);
  CHECK(delta_size(f, kGeo) == 0);
  f.set(0);
  f.set(3);
  f.set(63);
  CHECK(delta_size(f, kGeo) == 384);
  f.set_all();
  CHECK(delta_size(f, kGeo) == 8192);
  // short final segment
  const PageGeometry odd{8192, 3000};
  SegmentBits g(odd.segment_count());
  g.set(2);
  CHECK(delta_size(g, odd) == 8192 - 6000);
}

TEST_CASE("extract and apply") {
  std::mt19937_64 rng(5);
  const Bytes mem = testing::lcg_bytes(11, 8192);
  SUBCASE("empty f") {
    SegmentTracker t(kGeo);
    const auto d = extract_delta(mem, t);
    CHECK(d.segments.empty());
    const Bytes base(8192, 1);
    CHECK(apply_delta(base, d, kGeo) == base);
  }
  SUBCASE("one segment") {
    SegmentTracker t(kGeo);
    t.mark_dirty(5 * 128 + 3, 1);
    const auto d = extract_delta(mem, t);
    CHECK(d.segments == Bytes(mem.begin() + 640, mem.begin() + 768));
  }
  SUBCASE("every segment") {
    SegmentTracker t(kGeo);
    t.mark_all();
    const auto d = extract_delta(mem, t);
    CHECK(apply_delta(Bytes(8192, 0), d, kGeo) == mem);
    CHECK(apply_delta(Bytes(8192, 0xff), d, kGeo) == mem);
  }
}

TEST_CASE("editor marks only changed segments") {
  auto p = PageImage::fresh(kGeo, 1, 0);
  PageEditor(p, nullptr).insert(0, "a", std::string(100, 'x'));
  SegmentTracker t(kGeo);
  const auto before = p;
  PageEditor(p, &t).update(0, std::string(100, 'y'));
  CHECK(t.bits().count() >= 1);
  // every byte that differs lies in a marked segment
  for (std::uint32_t i = 0; i < 8192; ++i)
    if (p.bytes()[i] != before.bytes()[i]) CHECK(t.bits().test(i / 128));
  SegmentTracker u(kGeo);
  PageEditor(p, &u).update(0, std::string(100, 'y'));
  CHECK(u.bits().none());
}

TEST_CASE("random edits keep a consistent page") {
  std::mt19937_64 rng(17);
  auto p = PageImage::fresh(kGeo, 1, 0);
  std::map<std::string, std::string> model;
  for (int step = 0; step < 5000; ++step) {
    const std::string k = key8(rng() % 200);
    PageEditor ed(p, nullptr);
    const auto slot = p.lower_bound(k);
    const bool present = slot < p.record_count() && p.key_at(slot) == k;
    if (rng() % 3 == 0) {
      if (present) {
        ed.erase(slot);
        model.erase(k);
      }
    } else {
      const std::string v(rng() % 150, static_cast<char>('a' + rng() % 26));
      const bool ok = present ? ed.update(slot, v) : ed.insert(slot, k, v);
      if (ok) model[k] = v;
    }
    REQUIRE(p.check_structure());
  }
  REQUIRE(p.record_count() == model.size());
  std::size_t i = 0;
  for (const auto& [k, v] : model) {
    CHECK(p.key_at(i) == k);
    CHECK(p.value_at(i) == v);
    ++i;
  }
}
