#include <doctest.h>

#include <fstream>
#include <mutex>
#include <thread>

#include "expect.hpp"
#include "temp_dir.hpp"
#include "wallet/ingest/listener.hpp"
#include "wallet/mqtt/broker.hpp"
#include "wallet/mqtt/client.hpp"
#include "wallet/random.hpp"

using namespace wallet;
using namespace wallet::ingest;
using namespace std::chrono_literals;
using testing::errc_of;
using testing::TempDir;

namespace {

const std::string kExample =
    R"({"app_id":"w","dev_id":"soil-01","port":1,"payload_fields":{"soil_moisture":312.0},)"
    R"("metadata":{"time":"2020-02-15T10:00:00Z","gateways":[{"gtw_id":"g1","rssi":-97,"snr":7.5}]}})";

UplinkMessage message(std::vector<Gateway> gws) {
  UplinkMessage m;
  m.dev_id = "d";
  m.payload_fields["soil_moisture"] = 1;
  m.received_at = parse_rfc3339("2020-02-15T10:00:00Z");
  m.gateways = std::move(gws);
  return m;
}

// First maximum by a plain scan.
std::optional<LinkMetrics> strongest(const std::vector<Gateway>& gws) {
  std::optional<LinkMetrics> best;
  int best_rssi = 0;
  for (std::size_t i = 0; i < gws.size(); ++i)
    if (i == 0 || gws[i].rssi > best_rssi) {
      best_rssi = gws[i].rssi;
      best = LinkMetrics{double(gws[i].rssi), gws[i].snr};
    }
  return best;
}

UplinkMessage random_message(Rng& rng) {
  UplinkMessage m;
  m.app_id = rng.index(2) ? "wallet" : "";
  m.dev_id = "dev-" + std::to_string(rng.index(100));
  m.port = static_cast<int>(rng.index(256));
  const char* names[] = {"soil_moisture", "air_temperature", "air_humidity", "battery"};
  for (std::size_t k = 0, n = 1 + rng.index(4); k < n; ++k) m.payload_fields[names[k]] = rng.normal() * 1e3;
  m.received_at = from_micros(1'500'000'000'000'000 + static_cast<std::int64_t>(rng.index(1'000'000'000'000)));
  for (std::size_t g = 0, n = rng.index(4); g < n; ++g)
    m.gateways.push_back({"g" + std::to_string(g), -static_cast<int>(rng.index(201)), rng.uniform(-30, 30)});
  return m;
}

std::string line_for(int i) {
  auto m = message({{"g1", -90, 1.0}});
  m.dev_id = "dev-" + std::to_string(i % 3);
  m.payload_fields["soil_moisture"] = i;
  m.received_at += minutes(10) * i;
  return to_json_line(m);
}

struct Collector {
  std::mutex mu;
  std::vector<SensorReading> got;
  ReadingSink sink() {
    return [this](const SensorReading& r) {
      std::lock_guard lock(mu);
      got.push_back(r);
    };
  }
  std::size_t size() {
    std::lock_guard lock(mu);
    return got.size();
  }
};

template <typename Pred>
bool eventually(Pred pred, std::chrono::milliseconds limit = 5000ms) {
  auto deadline = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(5ms);
  }
  return pred();
}

}  // namespace

TEST_CASE("parse_uplink") {
  SUBCASE("example message") {
    auto m = parse_uplink(kExample);
    CHECK(m.app_id == "w");
    CHECK(m.dev_id == "soil-01");
    CHECK(m.port == 1);
    CHECK(m.payload_fields.at("soil_moisture") == 312.0);
    CHECK(m.received_at == parse_rfc3339("2020-02-15T10:00:00Z"));
    REQUIRE(m.gateways.size() == 1);
    CHECK(m.gateways[0] == Gateway{"g1", -97, 7.5});
  }
  SUBCASE("empty gateways") {
    std::string raw = kExample;
    raw.replace(raw.find("[{"), raw.find("}]") + 2 - raw.find("[{"), "[]");
    CHECK(parse_uplink(raw).gateways.empty());
  }
  SUBCASE("missing fields in check order") {
    auto missing = [](std::string_view raw) -> std::string {
      try {
        parse_uplink(raw);
      } catch (const Error& e) {
        return std::string(to_string(e.code())) + ":" + e.detail();
      }
      return "ok";
    };
    CHECK(missing(R"({"dev_id":"x"})") == "MissingField:payload_fields");
    CHECK(missing(R"({})") == "MissingField:dev_id");
    CHECK(missing(R"({"dev_id":"x","payload_fields":{"a":1}})") == "MissingField:metadata");
    CHECK(missing(R"({"dev_id":"x","payload_fields":{"a":1},"metadata":{}})") == "MissingField:time");
  }
  SUBCASE("rejections") {
    CHECK(errc_of([] { parse_uplink("{not json"); }) == Errc::malformed_json);
    CHECK(errc_of([] { parse_uplink("[1,2]"); }) == Errc::malformed_json);
    CHECK(errc_of([] { parse_uplink(R"({"dev_id":"x","payload_fields":{"a":1},"metadata":{"time":"yesterday"}})"); }) ==
          Errc::bad_timestamp);
    CHECK(errc_of([] { parse_uplink(R"({"dev_id":"x","payload_fields":{"a":"1"},"metadata":{"time":"2020-02-15T10:00:00Z"}})"); }) ==
          Errc::invalid_field);
    CHECK(errc_of([] { parse_uplink(R"({"dev_id":"x","payload_fields":{},"metadata":{"time":"2020-02-15T10:00:00Z"}})"); }) ==
          Errc::invalid_field);
    CHECK(errc_of([] {
            parse_uplink(R"({"dev_id":"x","payload_fields":{"a":1},"metadata":{"time":"2020-02-15T10:00:00Z",)"
                         R"("gateways":[{"gtw_id":"g","rssi":12,"snr":1}]}})");
          }) == Errc::invalid_field);
  }
  SUBCASE("unknown fields ignored") {
    auto j = nlohmann::json::parse(kExample);
    j["counter"] = 5;
    j["metadata"]["frequency"] = 868.1;
    CHECK(parse_uplink(j.dump()) == parse_uplink(kExample));
  }
}

TEST_CASE("serialize round trip") {
  Rng rng(17);
  for (int i = 0; i < 2000; ++i) {
    auto m = random_message(rng);
    auto once = parse_uplink(to_json(m).dump());
    CHECK(once == m);
    CHECK(parse_uplink(to_json(once).dump()) == once);
  }
}

TEST_CASE("to_reading link selection") {
  auto r = to_reading(message({{"g1", -97, 7.5}, {"g2", -90, 3.0}}));
  REQUIRE(r.link);
  CHECK(*r.link == LinkMetrics{-90, 3.0});
  CHECK_FALSE(to_reading(message({})).link);
  CHECK(*to_reading(message({{"g1", -90, 1.0}, {"g2", -90, 2.0}})).link == LinkMetrics{-90, 1.0});

  Rng rng(4);
  for (int i = 0; i < 2000; ++i) {
    auto m = random_message(rng);
    for (auto& g : m.gateways) g.rssi = -90 - static_cast<int>(rng.index(3));  // plenty of ties
    CHECK(to_reading(m).link == strongest(m.gateways));
    CHECK(to_reading(m) == to_reading(m));
  }
}

TEST_CASE("reading to store points") {
  auto r = to_reading(parse_uplink(kExample));
  auto pts = to_points(r);
  REQUIRE(pts.size() == 3);
  CHECK(pts[0].first == SeriesKey{"soil-01", "soil_moisture"});
  CHECK(pts[1].first.metric == "rssi");
  CHECK(pts[1].second.value == -97);
  CHECK(pts[2].second.value == 7.5);
}

TEST_CASE("replay listener") {
  TempDir dir;
  SUBCASE("three valid, one malformed") {
    {
      std::ofstream f(dir / "up.ndjson");
      f << line_for(0) << line_for(1) << "{\"dev_id\":\"x\"}\n" << line_for(2);
    }
    Collector c;
    Listener l(ReplaySource{dir / "up.ndjson"}, c.sink());
    l.wait();
    CHECK(c.size() == 3);
    CHECK(l.counters().malformed == 1);
    CHECK(l.counters().delivered == 3);
    CHECK(c.got[2].metrics.at("soil_moisture") == 2);
  }
  SUBCASE("23592 lines in order") {
    {
      std::ofstream f(dir / "big.ndjson");
      for (int i = 0; i < 23592; ++i) f << line_for(i);
    }
    Collector c;
    Listener l(ReplaySource{dir / "big.ndjson"}, c.sink());
    l.wait();
    REQUIRE(c.size() == 23592);
    bool ordered = true;
    for (int i = 0; i < 23592; ++i) ordered &= c.got[i].metrics.at("soil_moisture") == i;
    CHECK(ordered);
  }
  SUBCASE("sink failures are counted") {
    {
      std::ofstream f(dir / "up.ndjson");
      f << line_for(0) << line_for(1);
    }
    int calls = 0;
    Listener l(ReplaySource{dir / "up.ndjson"}, [&](const SensorReading&) {
      if (++calls == 1) throw std::runtime_error("boom");
    });
    l.wait();
    CHECK(l.counters().sink_errors == 1);
    CHECK(l.counters().delivered == 1);
  }
  SUBCASE("missing file") {
    CHECK(errc_of([&] { Listener l(ReplaySource{dir / "nope"}, [](const SensorReading&) {}); }) ==
          Errc::source_unavailable);
  }
}

TEST_CASE("tcp listener") {
  Collector c;
  Listener l(TcpSource{"127.0.0.1", 0}, c.sink());
  REQUIRE(l.port() != 0);

  SUBCASE("single line") {
    auto fd = net::connect_tcp("127.0.0.1", l.port());
    net::write_all(fd, line_for(0));
    CHECK(eventually([&] { return c.size() == 1; }));
  }
  SUBCASE("split writes, CRLF and several connections") {
    auto a = net::connect_tcp("127.0.0.1", l.port());
    auto b = net::connect_tcp("127.0.0.1", l.port());
    std::string first = line_for(1);
    net::write_all(a, first.substr(0, 10));
    net::write_all(b, line_for(2));
    std::this_thread::sleep_for(20ms);
    net::write_all(a, first.substr(10, first.size() - 11) + "\r\n");
    net::write_all(a, "garbage\n");
    CHECK(eventually([&] { return c.size() == 2; }));
    CHECK(eventually([&] { return l.counters().malformed == 1; }));
  }
  SUBCASE("unterminated final line counts on close") {
    {
      auto fd = net::connect_tcp("127.0.0.1", l.port());
      auto line = line_for(3);
      net::write_all(fd, line.substr(0, line.size() - 1));
    }
    CHECK(eventually([&] { return c.size() == 1; }));
  }
  SUBCASE("nothing is delivered after stop") {
    auto fd = net::connect_tcp("127.0.0.1", l.port());
    net::write_all(fd, line_for(0));
    CHECK(eventually([&] { return c.size() == 1; }));
    l.stop();
    std::size_t before = c.size();
    try {
      net::write_all(fd, line_for(1));
    } catch (const Error&) {
    }
    std::this_thread::sleep_for(100ms);
    CHECK(c.size() == before);
  }
}

TEST_CASE("tcp port in use") {
  auto busy = net::listen_tcp("127.0.0.1", 0);
  CHECK(errc_of([&] { Listener l(TcpSource{"127.0.0.1", net::local_port(busy)}, [](const SensorReading&) {}); }) ==
        Errc::source_unavailable);
}

TEST_CASE("mqtt listener") {
  mqtt::Broker broker;
  Collector c;
  Listener l(MqttSource{"mqtt://127.0.0.1:" + std::to_string(broker.port())}, c.sink());
  mqtt::Client pub("127.0.0.1", broker.port(), "sim");
  for (int i = 0; i < 50; ++i) pub.publish("wallet/devices/dev-" + std::to_string(i % 3) + "/up", line_for(i));
  pub.publish("wallet/devices/dev-0/down", line_for(99));
  pub.publish("wallet/devices/dev-0/up", "{");
  CHECK(eventually([&] { return c.size() == 50 && l.counters().malformed == 1; }));
  for (int i = 0; i < 50; ++i) CHECK(c.got[i].metrics.at("soil_moisture") == i);

  net::Fd placeholder = net::listen_tcp("127.0.0.1", 0);
  auto port = net::local_port(placeholder);
  placeholder.reset();
  CHECK(errc_of([&] { Listener bad(MqttSource{"mqtt://127.0.0.1:" + std::to_string(port)}, c.sink()); }) ==
        Errc::source_unavailable);
}
