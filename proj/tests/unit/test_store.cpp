#include <doctest.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <fstream>
#include <map>
#include <thread>

#include "expect.hpp"
#include "temp_dir.hpp"
#include "wallet/random.hpp"
#include "wallet/store/series_store.hpp"

using namespace wallet;
using namespace wallet::store;
using testing::errc_of;
using testing::TempDir;

namespace {

const SeriesKey kKey{"dev-1", "soil_moisture"};

Timestamp at(std::int64_t micros) { return from_micros(micros); }

// Last-write-wins replay of an insertion log, filtered and sorted.
std::vector<SeriesPoint> brute_force(const std::vector<SeriesPoint>& log, Timestamp from, Timestamp to) {
  std::vector<SeriesPoint> out;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto& p = log[i];
    if (p.timestamp < from || !(p.timestamp < to)) continue;
    bool superseded = false;
    for (std::size_t j = i + 1; j < log.size(); ++j)
      if (log[j].timestamp == p.timestamp) superseded = true;
    if (!superseded) out.push_back(p);
  }
  std::sort(out.begin(), out.end(), [](auto& a, auto& b) { return a.timestamp < b.timestamp; });
  return out;
}

bool bit_equal(const std::vector<SeriesPoint>& a, const std::vector<SeriesPoint>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].timestamp != b[i].timestamp ||
        std::bit_cast<std::uint64_t>(a[i].value) != std::bit_cast<std::uint64_t>(b[i].value))
      return false;
  return true;
}

double random_double(Rng& rng) {
  for (;;) {
    double d = std::bit_cast<double>(rng.next());
    if (std::isfinite(d)) return d;
  }
}

}  // namespace

TEST_CASE("append and query basics") {
  TempDir dir;
  SeriesStore s(dir.path());

  SUBCASE("empty store") {
    CHECK(s.query(kKey, at(0), at(1000)).empty());
    CHECK_FALSE(s.latest(kKey).has_value());
  }
  SUBCASE("round trip") {
    s.append(kKey, {at(100), 1.5});
    auto q = s.query(kKey, at(100), at(101));
    REQUIRE(q.size() == 1);
    CHECK(q[0] == SeriesPoint{at(100), 1.5});
  }
  SUBCASE("last write wins") {
    s.append(kKey, {at(100), 1.0});
    s.append(kKey, {at(100), 2.0});
    auto q = s.query_all(kKey);
    REQUIRE(q.size() == 1);
    CHECK(q[0].value == 2.0);
  }
  SUBCASE("out of order") {
    s.append(kKey, {at(300), 3.0});
    s.append(kKey, {at(200), 2.0});
    auto q = s.query_all(kKey);
    REQUIRE(q.size() == 2);
    CHECK(q[0].timestamp == at(200));
    CHECK(q[1].timestamp == at(300));
  }
  SUBCASE("half-open range") {
    for (int t : {1, 2, 3}) s.append(kKey, {at(t), double(t)});
    CHECK(s.query(kKey, at(1), at(3)).size() == 2);
    CHECK(s.query(kKey, at(2), at(2)).empty());
    CHECK(errc_of([&] { s.query(kKey, at(3), at(2)); }) == Errc::invalid_range);
  }
  SUBCASE("latest") {
    for (int t : {1, 2, 3}) s.append(kKey, {at(t), double(t)});
    CHECK(s.latest(kKey)->timestamp == at(3));
    s.append(kKey, {at(3), 9.0});
    CHECK(s.latest(kKey)->value == 9.0);
  }
  SUBCASE("rejects bad input") {
    CHECK(errc_of([&] { s.append(kKey, {at(1), std::nan("")}); }) == Errc::invalid_field);
    CHECK(errc_of([&] { s.append({"dev", "Bad-Metric"}, {at(1), 1.0}); }).has_value());
    CHECK(errc_of([&] { s.append({"", "m"}, {at(1), 1.0}); }).has_value());
  }
  SUBCASE("closed") {
    s.close();
    CHECK(errc_of([&] { s.append(kKey, {at(1), 1.0}); }) == Errc::store_closed);
    CHECK(errc_of([&] { s.query_all(kKey); }) == Errc::store_closed);
    CHECK(errc_of([&] { s.latest(kKey); }) == Errc::store_closed);
  }
  SUBCASE("keys and metrics") {
    s.append({"a", "x"}, {at(1), 1.0});
    s.append({"a", "y"}, {at(1), 1.0});
    s.append({"b", "x"}, {at(1), 1.0});
    CHECK(s.keys().size() == 3);
    CHECK(s.metrics("a") == std::vector<std::string>{"x", "y"});
  }
}

TEST_CASE("query matches brute-force filter") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    TempDir dir;
    StoreOptions opt;
    opt.compact_after = 1 + rng.index(64);
    opt.max_segments = 1 + rng.index(4);
    SeriesStore s(dir.path(), opt);
    std::vector<SeriesPoint> log;
    const std::size_t n = rng.index(300);
    const std::int64_t span = 1 + static_cast<std::int64_t>(rng.index(500));
    for (std::size_t i = 0; i < n; ++i) {
      SeriesPoint p{at(static_cast<std::int64_t>(rng.index(span))), rng.normal()};
      log.push_back(p);
      s.append(kKey, p);
    }
    for (int q = 0; q < 5; ++q) {
      auto a = static_cast<std::int64_t>(rng.index(span + 2)) - 1;
      auto b = static_cast<std::int64_t>(rng.index(span + 2)) - 1;
      if (a > b) std::swap(a, b);
      CHECK(bit_equal(s.query(kKey, at(a), at(b)), brute_force(log, at(a), at(b))));
    }
    s.close();
    SeriesStore reopened(dir.path(), opt);
    CHECK(bit_equal(reopened.query_all(kKey), brute_force(log, Timestamp::min(), Timestamp::max())));
  }
}

TEST_CASE("1000-point set with random sub-range") {
  TempDir dir;
  SeriesStore s(dir.path());
  Rng rng(11);
  std::vector<SeriesPoint> log;
  for (int i = 0; i < 1000; ++i) {
    SeriesPoint p{at(static_cast<std::int64_t>(rng.index(1'000'000))), rng.uniform(0, 1000)};
    log.push_back(p);
    s.append(kKey, p);
  }
  auto a = static_cast<std::int64_t>(rng.index(500'000));
  auto b = a + static_cast<std::int64_t>(rng.index(500'000));
  CHECK(bit_equal(s.query(kKey, at(a), at(b)), brute_force(log, at(a), at(b))));
}

TEST_CASE("23592 points survive reopen bit-exact") {
  TempDir dir;
  Rng rng(3);
  std::vector<SeriesPoint> pts;
  const Timestamp start = parse_rfc3339("2020-02-15T10:00:00Z");
  for (int i = 0; i < 23592; ++i) pts.push_back({start + minutes(10) * i, random_double(rng)});
  {
    SeriesStore s(dir.path());
    for (const auto& p : pts) s.append(kKey, p);
  }
  SeriesStore s(dir.path());
  auto q = s.query_all(kKey);
  CHECK(q.size() == 23592);
  CHECK(std::is_sorted(q.begin(), q.end(), [](auto& a, auto& b) { return a.timestamp < b.timestamp; }));
  CHECK(bit_equal(q, pts));
}

TEST_CASE("csv export and import") {
  TempDir dir;
  SeriesStore s(dir.path());

  SUBCASE("single point") {
    s.append(kKey, {parse_rfc3339("2020-02-15T10:00:00Z"), 312.0});
    auto text = s.export_csv(kKey, Timestamp::min(), Timestamp::max());
    CHECK(text == "timestamp,value\n2020-02-15T10:00:00Z,312\n");
    CHECK(bit_equal(parse_series_csv(text), s.query_all(kKey)));
  }
  SUBCASE("empty") { CHECK(s.export_csv(kKey, Timestamp::min(), Timestamp::max()) == "timestamp,value\n"); }
  SUBCASE("random doubles bit-exact") {
    Rng rng(5);
    std::vector<SeriesPoint> pts;
    for (int i = 0; i < 1000; ++i)
      pts.push_back({from_micros(1'580'000'000'000'000 + i * 1'234'567), random_double(rng)});
    s.append(kKey, pts);
    auto text = s.export_csv(kKey, Timestamp::min(), Timestamp::max());
    SeriesKey other{"dev-2", "soil_moisture"};
    CHECK(s.import_csv(other, text) == 1000);
    CHECK(bit_equal(s.query_all(other), pts));
  }
  SUBCASE("named value column") {
    auto n = s.import_csv({"weather", "air_pressure"},
                          "timestamp,air_pressure\n2020-02-15T10:00:00Z,1013.2\n2020-02-15T10:10:00Z,1013.1\n",
                          "air_pressure");
    CHECK(n == 2);
    CHECK(errc_of([&] { s.import_csv(kKey, "time,value\n"); }) == Errc::invalid_field);
    CHECK(errc_of([&] { s.import_csv(kKey, "timestamp,value\nnope,1\n"); }) == Errc::bad_timestamp);
  }
}

TEST_CASE("segment codec") {
  std::vector<SeriesPoint> pts{{at(1), 1.0}, {at(2), -2.5}, {at(5), 1e300}};
  auto bytes = encode_segment(kKey, pts);
  SeriesKey key;
  CHECK(bit_equal(decode_segment(bytes, &key), pts));
  CHECK(key == kKey);

  SUBCASE("every single-bit flip is detected") {
    for (std::size_t byte = 0; byte < bytes.size(); ++byte)
      for (int bit = 0; bit < 8; ++bit) {
        auto bad = bytes;
        bad[byte] = static_cast<char>(bad[byte] ^ (1 << bit));
        CHECK(errc_of([&] { decode_segment(bad); }) == Errc::corruption);
      }
  }
  SUBCASE("truncation is detected") {
    for (std::size_t n = 0; n < bytes.size(); ++n)
      CHECK(errc_of([&] { decode_segment(std::string_view(bytes).substr(0, n)); }) == Errc::corruption);
  }
  SUBCASE("unsorted payload is rejected") {
    std::vector<SeriesPoint> unsorted{{at(2), 1.0}, {at(1), 1.0}};
    CHECK(errc_of([&] { decode_segment(encode_segment(kKey, unsorted)); }) == Errc::corruption);
  }
}

TEST_CASE("on-disk damage") {
  TempDir dir;
  const auto key_dir = dir.path() / kKey.device_id / kKey.metric;
  StoreOptions opt;
  opt.compact_after = 10;

  SUBCASE("flipped segment byte fails the open") {
    {
      SeriesStore s(dir.path(), opt);
      for (int i = 0; i < 10; ++i) s.append(kKey, {at(i), double(i)});
    }
    REQUIRE(std::filesystem::exists(key_dir / "0001.seg"));
    {
      std::fstream f(key_dir / "0001.seg", std::ios::in | std::ios::out | std::ios::binary);
      f.seekg(40);
      char c;
      f.get(c);
      f.seekp(40);
      f.put(static_cast<char>(c ^ 0x10));
    }
    CHECK(errc_of([&] { SeriesStore s(dir.path(), opt); }) == Errc::corruption);
  }
  SUBCASE("torn WAL tail is dropped") {
    {
      SeriesStore s(dir.path(), opt);
      for (int i = 0; i < 5; ++i) s.append(kKey, {at(i), double(i)});
    }
    const auto wal = key_dir / "wal.log";
    std::filesystem::resize_file(wal, std::filesystem::file_size(wal) - 7);
    SeriesStore s(dir.path(), opt);
    CHECK(s.size(kKey) == 4);
    CHECK(std::filesystem::file_size(wal) == 4 * 20);
    s.append(kKey, {at(9), 9.0});
    s.close();
    SeriesStore again(dir.path(), opt);
    CHECK(again.size(kKey) == 5);
  }
  SUBCASE("damaged final WAL record is dropped, earlier damage is fatal") {
    {
      SeriesStore s(dir.path(), opt);
      for (int i = 0; i < 5; ++i) s.append(kKey, {at(i), double(i)});
    }
    const auto wal = key_dir / "wal.log";
    auto flip = [&](std::streamoff off) {
      std::fstream f(wal, std::ios::in | std::ios::out | std::ios::binary);
      f.seekg(off);
      char c;
      f.get(c);
      f.seekp(off);
      f.put(static_cast<char>(c ^ 1));
    };
    flip(4 * 20 + 3);
    {
      SeriesStore s(dir.path(), opt);
      CHECK(s.size(kKey) == 4);
    }
    flip(1 * 20 + 3);
    CHECK(errc_of([&] { SeriesStore s(dir.path(), opt); }) == Errc::corruption);
  }
  SUBCASE("leftover temp segment is ignored") {
    {
      SeriesStore s(dir.path(), opt);
      for (int i = 0; i < 3; ++i) s.append(kKey, {at(i), double(i)});
    }
    std::ofstream(key_dir / "0002.seg.tmp") << "partial";
    SeriesStore s(dir.path(), opt);
    CHECK(s.size(kKey) == 3);
    CHECK_FALSE(std::filesystem::exists(key_dir / "0002.seg.tmp"));
  }
}

TEST_CASE("segment merge keeps the newest value") {
  TempDir dir;
  StoreOptions opt;
  opt.compact_after = 4;
  opt.max_segments = 3;
  std::vector<SeriesPoint> log;
  Rng rng(2);
  {
    SeriesStore s(dir.path(), opt);
    for (int i = 0; i < 200; ++i) {
      SeriesPoint p{at(static_cast<std::int64_t>(rng.index(40))), double(i)};
      log.push_back(p);
      s.append(kKey, p);
    }
  }
  std::size_t segs = 0;
  for (auto& e : std::filesystem::directory_iterator(dir.path() / kKey.device_id / kKey.metric))
    segs += e.path().extension() == ".seg";
  CHECK(segs <= 3);
  SeriesStore s(dir.path(), opt);
  CHECK(bit_equal(s.query_all(kKey), brute_force(log, Timestamp::min(), Timestamp::max())));
}

TEST_CASE("crash recovery keeps every acknowledged point") {
  for (std::size_t compact_after : {std::size_t{7}, std::size_t{4096}}) {
    TempDir dir;
    StoreOptions opt;
    opt.compact_after = compact_after;
    opt.max_segments = 3;
    int ack[2];
    REQUIRE(::pipe(ack) == 0);
    pid_t pid = ::fork();
    REQUIRE(pid >= 0);
    if (pid == 0) {
      ::close(ack[0]);
      SeriesStore s(dir.path(), opt);
      for (std::uint32_t i = 0;; ++i) {
        s.append(kKey, {at(i), i * 0.5});
        if (::write(ack[1], &i, sizeof i) != sizeof i) ::_exit(1);
      }
    }
    ::close(ack[1]);
    std::uint32_t last = 0;
    std::uint32_t acked = 0;
    while (acked < 3000 && ::read(ack[0], &last, sizeof last) == sizeof last) ++acked;
    ::kill(pid, SIGKILL);
    int status = 0;
    ::waitpid(pid, &status, 0);
    while (::read(ack[0], &last, sizeof last) == sizeof last) ++acked;
    ::close(ack[0]);
    REQUIRE(acked >= 3000);

    SeriesStore s(dir.path(), opt);
    auto q = s.query_all(kKey);
    REQUIRE(q.size() >= acked);
    for (std::uint32_t i = 0; i < acked; ++i) {
      REQUIRE(q[i].timestamp == at(i));
      REQUIRE(q[i].value == i * 0.5);
    }
  }
}

TEST_CASE("concurrent writers and readers") {
  TempDir dir;
  StoreOptions opt;
  opt.compact_after = 50;
  SeriesStore s(dir.path(), opt);
  constexpr int kPoints = 2000;
  std::vector<std::thread> threads;
  for (int w = 0; w < 3; ++w)
    threads.emplace_back([&, w] {
      SeriesKey key{"dev-" + std::to_string(w), "soil_moisture"};
      for (int i = 0; i < kPoints; ++i) s.append(key, {at(i), double(i)});
    });
  std::atomic<bool> ok{true};
  for (int r = 0; r < 2; ++r)
    threads.emplace_back([&] {
      for (int round = 0; round < 200; ++round) {
        auto q = s.query_all({"dev-0", "soil_moisture"});
        for (std::size_t i = 0; i < q.size(); ++i)
          if (q[i].timestamp != at(static_cast<std::int64_t>(i))) ok = false;
      }
    });
  for (auto& t : threads) t.join();
  CHECK(ok);
  for (int w = 0; w < 3; ++w) CHECK(s.size({"dev-" + std::to_string(w), "soil_moisture"}) == kPoints);
}
