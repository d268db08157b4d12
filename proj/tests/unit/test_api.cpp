#include <doctest.h>

#include <thread>

#include "expect.hpp"
#include "temp_dir.hpp"
#include "wallet/api/server.hpp"
#include "wallet/base64.hpp"
#include "wallet/fileio.hpp"
#include "wallet/mqtt/broker.hpp"
#include "wallet/mqtt/client.hpp"
#include "wallet/random.hpp"
#include "wallet/sim/device.hpp"

// after Eigen: <resolv.h> defines _res
#include <httplib.h>

using namespace wallet;
using namespace wallet::api;
using nlohmann::json;
using testing::errc_of;
using testing::TempDir;

namespace {

const Timestamp t0 = parse_rfc3339("2020-02-15T00:00:00Z");

const std::map<Role, std::string> kTokens{
    {Role::viewer, "tok-viewer-5b1c"}, {Role::controller, "tok-ctrl-91aa"}, {Role::admin, "tok-admin-0f3e"}};

Config test_config(const std::filesystem::path& dir) {
  Config c;
  c.data_dir = dir;
  c.async_notifications = false;
  c.users = {{"vera", "Vera", Role::viewer, kTokens.at(Role::viewer)},
             {"carl", "Carl", Role::controller, kTokens.at(Role::controller)},
             {"ada", "Ada", Role::admin, kTokens.at(Role::admin)},
             {"vic", "Vic", Role::viewer, "tok-viewer2-77de"}};
  c.training.ffnn.hidden = {8, 4};
  c.training.ffnn.epochs = 2;
  c.training.lstm.units = 3;
  c.training.lstm.dense_units = 4;
  c.training.lstm.epochs = 2;
  return c;
}

struct Api {
  TempDir dir;
  Wallet wallet{test_config(dir.path())};
  HttpServer server{wallet, "127.0.0.1", 0};
  httplib::Client client{"127.0.0.1", server.port()};

  Api() { server.start(); }

  httplib::Headers auth(const std::string& token) {
    return token.empty() ? httplib::Headers{} : httplib::Headers{{"Authorization", "Bearer " + token}};
  }
  httplib::Result call(const std::string& method, const std::string& path, const std::string& token,
                       const json& body = json::object()) {
    auto h = auth(token);
    if (method == "GET") return client.Get(path, h);
    if (method == "POST") return client.Post(path, h, body.dump(), "application/json");
    if (method == "PATCH") return client.Patch(path, h, body.dump(), "application/json");
    return client.Delete(path, h);
  }
  json get(const std::string& path, Role r = Role::viewer) {
    auto res = call("GET", path, kTokens.at(r));
    REQUIRE(res);
    INFO(path << " -> " << res->body);
    REQUIRE(res->status == 200);
    return json::parse(res->body);
  }
  void register_soil() {
    auto res = call("POST", "/api/sensors", kTokens.at(Role::admin),
                    {{"device_id", "soil-01"}, {"type", "soil"}, {"metrics", {"soil_moisture", "rssi", "snr"}}});
    REQUIRE(res->status == 201);
  }
  /// Simulated soil and weather uplinks plus the pressure feed.
  void load_trace(std::size_t rows) {
    sim::SimScenario s;
    s.duration = minutes(10) * static_cast<std::int64_t>(rows);
    auto trace = sim::generate_trace(s);
    for (const auto& u : sim::scenario_uplinks(s, trace)) wallet.ingest(ingest::to_reading(u));
    wallet.import_series("weather-01", "air_pressure", sim::pressure_csv(trace));
  }
};

ingest::SensorReading reading(Timestamp t, double moisture, std::string device = "soil-01") {
  ingest::SensorReading r;
  r.device_id = std::move(device);
  r.timestamp = t;
  r.metrics["soil_moisture"] = moisture;
  return r;
}

struct Hook {
  httplib::Server server;
  int port = 0;
  std::thread thread;
  std::mutex m;
  std::vector<json> bodies;

  Hook() {
    server.Post("/hook", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lk(m);
      bodies.push_back(json::parse(req.body));
      res.status = 200;
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~Hook() {
    server.stop();
    thread.join();
  }
  std::size_t count() {
    std::lock_guard lk(m);
    return bodies.size();
  }
};

std::string concrete(std::string path) {
  auto sub = [&](const std::string& key, const std::string& value) {
    if (auto p = path.find(key); p != std::string::npos) path.replace(p, key.size(), value);
  };
  if (path.starts_with("/api/rules/")) sub("{id}", "r1");
  if (path.starts_with("/api/downlinks/") || path.starts_with("/api/models/train/")) sub("{id}", "1");
  sub("{id}", "soil-01");
  sub("{version}", "v0001");
  return path;
}

}  // namespace

TEST_CASE("authorization matrix is total and enforced") {
  Api api;
  api.register_soil();
  std::vector<std::string> bodies;
  for (const auto& p : endpoint_policies()) {
    const auto path = concrete(p.path);
    auto anon = api.call(p.method, path, "");
    REQUIRE(anon);
    bodies.push_back(anon->body);
    if (p.is_public) {
      CHECK(anon->status == 200);
    } else {
      CAPTURE(path);
      CHECK(anon->status == 401);
      CHECK(json::parse(anon->body)["error"]["code"] == "Unauthorized");
      auto forged = api.call(p.method, path, "not-a-token");
      CHECK(forged->status == 401);
    }
    for (const auto& [role, token] : kTokens) {
      CAPTURE(p.method);
      CAPTURE(path);
      CAPTURE(to_string(role));
      auto res = api.call(p.method, path, token);
      REQUIRE(res);
      bodies.push_back(res->body);
      if (allowed(p, role)) {
        CHECK(res->status != 401);
        CHECK(res->status != 403);
      } else {
        CHECK(res->status == 403);
        auto err = json::parse(res->body);
        CHECK(err["error"]["code"] == "Forbidden");
        CHECK(err["error"]["message"].is_string());
      }
    }
  }
  CHECK(endpoint_policies().size() == 21);
  api.wallet.wait_for_training();
  for (const auto& b : bodies)
    for (const auto& [role, token] : kTokens) CHECK(b.find(token) == std::string::npos);

  auto res = api.call("GET", "/api/nothing", kTokens.at(Role::admin));
  CHECK(res->status == 404);
  CHECK(json::parse(res->body)["error"]["code"] == "NotFound");
  CHECK(api.call("GET", "/ui/", "")->status == 200);
}

TEST_CASE("sensor registration") {
  Api api;
  json d{{"device_id", "soil-01"}, {"type", "soil"}, {"metrics", {{{"name", "soil_moisture"}}}}, {"location", "plot A"}};
  auto res = api.call("POST", "/api/sensors", kTokens.at(Role::admin), d);
  REQUIRE(res->status == 201);
  auto echoed = json::parse(res->body);
  CHECK(echoed["device_id"] == "soil-01");
  CHECK(echoed["location"] == "plot A");
  CHECK(echoed["registered_by"] == "ada");
  CHECK(echoed["metrics"][0]["unit"] == "counts");
  CHECK(api.call("POST", "/api/sensors", kTokens.at(Role::viewer), d)->status == 403);
  CHECK(api.call("POST", "/api/sensors", kTokens.at(Role::controller), d)->status == 403);
  res = api.call("POST", "/api/sensors", kTokens.at(Role::admin), d);
  CHECK(res->status == 409);
  CHECK(json::parse(res->body)["error"]["code"] == "Conflict");
  d["device_id"] = "x";
  d["metrics"] = json::array();
  CHECK(api.call("POST", "/api/sensors", kTokens.at(Role::admin), d)->status == 422);
  res = api.client.Post("/api/sensors", api.auth(kTokens.at(Role::admin)), "{oops", "application/json");
  CHECK(res->status == 400);
  CHECK(json::parse(res->body)["error"]["code"] == "MalformedJson");

  api.wallet.ingest(reading(t0, 5, "stray-9"));
  auto list = api.get("/api/sensors")["sensors"];
  REQUIRE(list.size() == 2);
  CHECK(list[0]["registered"] == true);
  CHECK(list[1]["device_id"] == "stray-9");
  CHECK(list[1]["registered"] == false);
  CHECK(api.get("/api/sensors/stray-9")["registered"] == false);
  CHECK(api.call("GET", "/api/sensors/none", kTokens.at(Role::viewer))->status == 404);
  CHECK(api.get("/api/me", Role::controller) == json{{"id", "carl"}, {"name", "Carl"}, {"role", "controller"}});
  CHECK(api.get("/api/meta")["cadence_seconds"] == 600);
}

TEST_CASE("readings pagination") {
  Api api;
  api.register_soil();
  for (int i = 0; i < 3; ++i) api.wallet.ingest(reading(t0 + minutes(10 * i), 100 + i));

  auto all = api.get("/api/sensors/soil-01/readings?metric=soil_moisture");
  CHECK(all["readings"].size() == 3);
  CHECK(all["next_page_token"].is_null());
  CHECK(all["readings"][0] == json{{"timestamp", "2020-02-15T00:00:00Z"}, {"value", 100.0}});

  auto p1 = api.get("/api/sensors/soil-01/readings?metric=soil_moisture&limit=2");
  REQUIRE(p1["readings"].size() == 2);
  REQUIRE(p1["next_page_token"].is_string());
  auto p2 = api.get("/api/sensors/soil-01/readings?metric=soil_moisture&limit=2&page_token=" +
                    p1["next_page_token"].get<std::string>());
  REQUIRE(p2["readings"].size() == 1);
  CHECK(p2["readings"][0]["value"] == 102.0);
  CHECK(p2["next_page_token"].is_null());

  auto bad = api.call("GET", "/api/sensors/soil-01/readings?metric=soil_moisture&from=2020-02-16T00:00:00Z&to=2020-02-15T00:00:00Z",
                      kTokens.at(Role::viewer));
  CHECK(bad->status == 400);
  CHECK(json::parse(bad->body)["error"]["code"] == "InvalidRange");
  CHECK(api.call("GET", "/api/sensors/none/readings?metric=soil_moisture", kTokens.at(Role::viewer))->status == 404);
  CHECK(api.call("GET", "/api/sensors/soil-01/readings?metric=soil_moisture&page_token=zz", kTokens.at(Role::viewer))
            ->status == 422);
  CHECK(api.call("GET", "/api/sensors/soil-01/readings?metric=soil_moisture&from=yesterday", kTokens.at(Role::viewer))
            ->status == 400);
}

TEST_CASE("paginated union equals the unpaginated query") {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    TempDir dir;
    Wallet w(test_config(dir.path()));
    std::map<Timestamp, double> truth;
    auto n = 1 + rng.index(80);
    for (std::size_t i = 0; i < n; ++i) {
      auto t = t0 + minutes(static_cast<std::int64_t>(rng.index(500)));
      double v = rng.normal();
      truth[t] = v;
      w.ingest(reading(t, v));
    }
    auto from = t0 + minutes(static_cast<std::int64_t>(rng.index(250)));
    auto to = from + minutes(static_cast<std::int64_t>(rng.index(300)));
    auto limit = 1 + rng.index(10);
    std::vector<SeriesPoint> paged;
    std::optional<std::string> token;
    do {
      auto page = w.readings("soil-01", "soil_moisture", from, to, limit, token);
      CHECK(page.points.size() <= limit);
      paged.insert(paged.end(), page.points.begin(), page.points.end());
      token = page.next_token;
    } while (token);
    std::vector<SeriesPoint> expected;
    for (const auto& [t, v] : truth)
      if (t >= from && t < to) expected.push_back({t, v});
    CHECK(paged == expected);
  }
}

TEST_CASE("downlink commands") {
  Api api;
  api.register_soil();
  auto& queue = dynamic_cast<QueueTransport&>(api.wallet.downlinks().transport());

  auto res = api.call("POST", "/api/sensors/soil-01/downlink", kTokens.at(Role::controller),
                      {{"kind", "set_wakeup_period"}, {"period_minutes", 20}});
  REQUIRE(res->status == 202);
  auto cmd = json::parse(res->body);
  CHECK(cmd["state"] == "pending");
  CHECK(cmd["payload"] == "AQAU");
  CHECK(cmd["kind"] == "set_wakeup_period");

  api.wallet.downlinks().worker_pass(now_utc());
  auto id = std::to_string(cmd["id"].get<int>());
  CHECK(api.get("/api/downlinks/" + id)["state"] == "sent");
  auto delivered = queue.take("soil-01");
  REQUIRE(delivered.size() == 1);
  CHECK(decode_set_wakeup_period(delivered[0].payload) == std::chrono::minutes(20));
  api.wallet.ingest(reading(t0, 1));
  CHECK(api.get("/api/downlinks/" + id)["state"] == "acked");
  CHECK(api.get("/api/sensors/soil-01/downlink")["downlinks"].size() == 1);

  // the payload a client builds for set_wakeup_period(20) is accepted as such
  res = api.call("POST", "/api/sensors/soil-01/downlink", kTokens.at(Role::admin),
                 {{"kind", "set_wakeup_period"}, {"payload", "AQAU"}});
  CHECK(res->status == 202);
  res = api.call("POST", "/api/sensors/soil-01/downlink", kTokens.at(Role::admin), {{"payload", "AgAAAAU="}});
  CHECK(json::parse(res->body)["kind"] == "time_sync");
  res = api.call("POST", "/api/sensors/soil-01/downlink", kTokens.at(Role::admin),
                 {{"kind", "time_sync"}, {"offset_seconds", -5}});
  CHECK(base64_decode(json::parse(res->body)["payload"].get<std::string>()) == encode_time_sync(std::chrono::seconds(-5)));

  CHECK(api.call("POST", "/api/sensors/soil-01/downlink", kTokens.at(Role::viewer),
                 {{"kind", "set_wakeup_period"}, {"period_minutes", 20}})
            ->status == 403);
  Bytes big(60, 0xAB);
  res = api.call("POST", "/api/sensors/soil-01/downlink", kTokens.at(Role::controller),
                 {{"kind", "raw"}, {"payload", base64_encode(big)}});
  CHECK(res->status == 413);
  CHECK(json::parse(res->body)["error"]["code"] == "PayloadTooLarge");
  CHECK(api.call("POST", "/api/sensors/unknown/downlink", kTokens.at(Role::controller),
                 {{"kind", "set_wakeup_period"}, {"period_minutes", 20}})
            ->status == 404);
  CHECK(api.call("POST", "/api/sensors/soil-01/downlink", kTokens.at(Role::controller),
                 {{"kind", "set_wakeup_period"}, {"period_minutes", 0}})
            ->status == 422);
  CHECK(api.call("POST", "/api/sensors/soil-01/downlink", kTokens.at(Role::controller),
                 {{"kind", "time_sync"}, {"payload", "AQAU"}})
            ->status == 422);
  CHECK(api.call("POST", "/api/sensors/soil-01/downlink", kTokens.at(Role::controller), {{"kind", "reboot"}})->status ==
        422);
}

TEST_CASE("downlink state machine never skips or reverses") {
  struct Flaky : DownlinkTransport {
    Rng rng{5};
    std::string name() const override { return "flaky"; }
    void send(const DownlinkCommand&) override {
      if (rng.uniform01() < 0.3) throw std::runtime_error("radio busy");
    }
  };
  auto order = [](DownlinkState s) { return s == DownlinkState::pending ? 0 : s == DownlinkState::sent ? 1 : 2; };
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    DownlinkManager m(std::make_shared<Flaky>(), {.ack_timeout = minutes(30)});
    Timestamp now = t0;
    std::map<std::uint64_t, DownlinkState> last;
    for (int step = 0; step < 200; ++step) {
      now += minutes(static_cast<std::int64_t>(rng.index(20)));
      const std::string dev = "d" + std::to_string(rng.index(3));
      switch (rng.index(5)) {
        case 0: m.enqueue(dev, 1, {1, 0, 10}, DownlinkKind::set_wakeup_period, now); break;
        case 1: m.worker_pass(now); break;
        case 2: m.on_uplink(dev, now); break;
        case 3:
        case 4: {
          auto all = m.list();
          if (all.empty()) break;
          auto id = all[rng.index(all.size())].id;
          auto before = m.get(id)->state;
          auto err = errc_of([&] {
            if (rng.uniform01() < 0.5) m.ack(id, now);
            else m.fail(id, "operator", now);
          });
          if (err) CHECK(*err == Errc::invalid_transition);
          else CHECK(before == DownlinkState::sent);
          break;
        }
      }
      for (const auto& c : m.list()) {
        auto it = last.find(c.id);
        if (it != last.end() && it->second != c.state) {
          CHECK(valid_transition(it->second, c.state));
          CHECK(order(c.state) == order(it->second) + 1);
        }
        if (c.state != DownlinkState::pending) CHECK(c.sent_at);
        last[c.id] = c.state;
      }
    }
  }
  CHECK(valid_transition(DownlinkState::pending, DownlinkState::sent));
  CHECK_FALSE(valid_transition(DownlinkState::pending, DownlinkState::acked));
  CHECK_FALSE(valid_transition(DownlinkState::acked, DownlinkState::failed));
  CHECK_FALSE(valid_transition(DownlinkState::sent, DownlinkState::pending));
}

TEST_CASE("downlinks time out and persist") {
  TempDir dir;
  auto file = dir / "downlinks.json";
  {
    DownlinkManager m(std::make_shared<QueueTransport>(), {.ack_timeout = minutes(30), .state_file = file});
    m.enqueue("d", 2, {9, 9}, DownlinkKind::raw, t0);
    m.enqueue("d", 1, {1, 0, 5}, DownlinkKind::set_wakeup_period, t0);
    CHECK(m.worker_pass(t0) == 2);
    CHECK(m.worker_pass(t0 + minutes(29)) == 0);
    m.ack(2, t0 + minutes(29));
    CHECK(m.worker_pass(t0 + minutes(30)) == 1);
    CHECK(m.get(1)->state == DownlinkState::failed);
    CHECK(errc_of([&] { m.ack(7, t0); }) == Errc::not_found);
    CHECK(errc_of([&] { m.enqueue("d", 0, {1}, DownlinkKind::raw, t0); }) == Errc::validation_error);
  }
  DownlinkManager again(std::make_shared<QueueTransport>(), {.state_file = file});
  REQUIRE(again.list().size() == 2);
  CHECK(again.get(1)->state == DownlinkState::failed);
  CHECK(again.get(2)->state == DownlinkState::acked);
  CHECK(again.get(2)->port == 1);
  CHECK(again.enqueue("d", 1, {1}, DownlinkKind::raw, t0).id == 3);
}

TEST_CASE("downlink over mqtt") {
  mqtt::Broker broker;
  mqtt::Client device("127.0.0.1", broker.port(), "device");
  device.subscribe("wallet/devices/soil-01/down");
  DownlinkManager m(std::make_shared<MqttTransport>("mqtt://127.0.0.1:" + std::to_string(broker.port()), "wallet"));
  m.enqueue("soil-01", 3, encode_set_wakeup_period(std::chrono::minutes(20)), DownlinkKind::set_wakeup_period, t0);
  CHECK(m.worker_pass(t0) == 1);
  auto msg = device.poll(std::chrono::seconds(2));
  REQUIRE(msg);
  CHECK(msg->topic == "wallet/devices/soil-01/down");
  CHECK(json::parse(msg->payload) == json{{"port", 3}, {"confirmed", false}, {"payload_raw", "AQAU"}});

  DownlinkManager dead(std::make_shared<MqttTransport>("mqtt://127.0.0.1:1", "wallet"));
  dead.enqueue("soil-01", 1, {1}, DownlinkKind::raw, t0);
  CHECK(dead.worker_pass(t0) == 0);
  CHECK(dead.get(1)->state == DownlinkState::pending);
  CHECK_FALSE(dead.get(1)->error.empty());
}

TEST_CASE("forecast and training endpoints") {
  Api api;
  api.register_soil();
  api.load_trace(300);

  auto res = api.call("GET", "/api/sensors/soil-01/forecast?steps=1", kTokens.at(Role::viewer));
  CHECK(res->status == 409);
  CHECK(json::parse(res->body)["error"]["code"] == "NoModel");
  CHECK(api.call("POST", "/api/models/train", kTokens.at(Role::controller))->status == 403);

  res = api.call("POST", "/api/models/train", kTokens.at(Role::admin), {{"seed", 3}});
  REQUIRE(res->status == 202);
  auto job = json::parse(res->body);
  CHECK(job["state"] == "running");
  api.wallet.wait_for_training();
  job = api.get("/api/models/train/" + std::to_string(job["id"].get<int>()));
  INFO(job.dump());
  REQUIRE(job["state"] == "succeeded");
  CHECK(job["version"] == "v0001");
  CHECK(job["epochs_done"] == 4);

  auto models = api.get("/api/models");
  CHECK(models["current"] == "v0001");
  CHECK(models["versions"][0]["metrics"]["training"]["seed"] == 3);
  CHECK(api.get("/api/models/v0001/history?model=lstm")["epochs"].size() == 2);
  CHECK(api.call("GET", "/api/models/v0009/history", kTokens.at(Role::viewer))->status == 404);

  auto one = api.get("/api/sensors/soil-01/forecast?steps=1")["forecast"];
  REQUIRE(one.size() == 1);
  for (auto key : {"timestamp", "ffnn", "lstm", "ensemble", "model_version", "stale"}) CHECK(one[0].contains(key));
  auto six = api.get("/api/sensors/soil-01/forecast?steps=6")["forecast"];
  REQUIRE(six.size() == 6);
  for (std::size_t i = 1; i < 6; ++i)
    CHECK(parse_rfc3339(six[i]["timestamp"].get<std::string>()) -
              parse_rfc3339(six[i - 1]["timestamp"].get<std::string>()) ==
          minutes(10));
  CHECK(api.call("GET", "/api/sensors/soil-01/forecast?steps=0", kTokens.at(Role::viewer))->status == 422);
  CHECK(api.call("GET", "/api/sensors/soil-01/forecast?steps=abc", kTokens.at(Role::viewer))->status == 422);

  auto overlay = api.get("/api/sensors/soil-01/predictions?from=2020-02-15T10:00:00Z&to=2020-02-15T12:00:00Z");
  CHECK(overlay["rows"].size() == 12 - 5);

  // synchronous training through the service is deterministic
  auto v2 = api.wallet.train({.seed = 3});
  CHECK(v2 == "v0002");
  CHECK(read_file(api.dir / "models/v0001/ffnn.model") == read_file(api.dir / "models/v0002/ffnn.model"));
  CHECK(read_file(api.dir / "models/v0001/lstm.model") == read_file(api.dir / "models/v0002/lstm.model"));

  CHECK(errc_of([&] { api.wallet.train({.device_id = "nobody"}); }) == Errc::not_found);
}

TEST_CASE("rules through the api") {
  Hook hook;
  TempDir dir;
  auto cfg = test_config(dir.path());
  cfg.sinks.push_back({.type = "webhook", .name = "webhook", .url = "http://127.0.0.1:" + std::to_string(hook.port) + "/hook"});
  Wallet wallet(cfg);
  HttpServer server(wallet, "127.0.0.1", 0);
  server.start();
  httplib::Client client("127.0.0.1", server.port());
  auto post = [&](Role r, const json& body) {
    return client.Post("/api/rules", {{"Authorization", "Bearer " + kTokens.at(r)}}, body.dump(), "application/json");
  };
  wallet.ingest(reading(t0, 1));

  auto res = post(Role::viewer, {{"device_id", "soil-01"}, {"metric", "soil_moisture"}, {"operator", ">"}, {"threshold", 40}});
  REQUIRE(res->status == 201);
  auto rule = json::parse(res->body);
  CHECK(rule["owner"] == "vera");
  CHECK(rule["kind"] == "instant");

  wallet.ingest(reading(t0 + minutes(10), 39));
  CHECK(hook.count() == 0);
  wallet.ingest(reading(t0 + minutes(20), 42));
  REQUIRE(hook.count() == 1);
  CHECK(hook.bodies[0] == json{{"rule_id", rule["id"]}, {"device_id", "soil-01"}, {"metric", "soil_moisture"},
                               {"value", 42.0}, {"threshold", 40.0}, {"fired_at", "2020-02-15T00:20:00Z"}});

  auto notes = client.Get("/api/notifications", {{"Authorization", "Bearer " + kTokens.at(Role::viewer)}});
  auto nj = json::parse(notes->body)["notifications"];
  REQUIRE(nj.size() == 1);
  CHECK(nj[0]["delivery"]["webhook"]["state"] == "delivered");
  notes = client.Get("/api/notifications", {{"Authorization", "Bearer tok-viewer2-77de"}});
  CHECK(json::parse(notes->body)["notifications"].empty());
  notes = client.Get("/api/rules", {{"Authorization", "Bearer tok-viewer2-77de"}});
  CHECK(json::parse(notes->body)["rules"].empty());

  const std::string path = "/api/rules/" + rule["id"].get<std::string>();
  CHECK(client.Delete(path, {{"Authorization", "Bearer tok-viewer2-77de"}})->status == 403);
  CHECK(client.Patch(path, {{"Authorization", "Bearer " + kTokens.at(Role::viewer)}}, R"({"enabled":false})",
                     "application/json")
            ->status == 200);
  wallet.ingest(reading(t0 + minutes(30), 50));
  CHECK(hook.count() == 1);
  CHECK(client.Patch(path, {{"Authorization", "Bearer " + kTokens.at(Role::admin)}}, R"({"enabled":true})",
                     "application/json")
            ->status == 200);
  wallet.ingest(reading(t0 + minutes(40), 50));
  CHECK(hook.count() == 2);
  CHECK(client.Delete(path, {{"Authorization", "Bearer " + kTokens.at(Role::viewer)}})->status == 204);
  wallet.ingest(reading(t0 + minutes(50), 50));
  CHECK(hook.count() == 2);
  CHECK(client.Delete(path, {{"Authorization", "Bearer " + kTokens.at(Role::viewer)}})->status == 404);

  res = post(Role::admin, {{"device_id", "soil-01"}, {"metric", "soil_moisture"}, {"kind", "cumulative"},
                           {"operator", ">"}, {"threshold", 40}, {"period_seconds", 0}});
  CHECK(res->status == 422);
  CHECK(json::parse(res->body)["error"]["code"] == "ValidationError");
  res = post(Role::admin, {{"device_id", "ghost"}, {"metric", "soil_moisture"}, {"operator", ">"}, {"threshold", 1}});
  CHECK(res->status == 404);
  res = post(Role::admin, {{"device_id", "soil-01"}, {"metric", "soil_moisture"}, {"kind", "cumulative"},
                           {"operator", "greater"}, {"threshold", 100}, {"period_seconds", 1800}});
  CHECK(res->status == 201);
  wallet.ingest(reading(t0 + minutes(60), 50));
  CHECK(hook.count() == 3);  // 50 + 50 + 50 over the last half hour
}

TEST_CASE("state survives a restart") {
  TempDir dir;
  {
    Wallet w(test_config(dir.path()));
    w.register_sensor(*w.users().find("ada"), sensor_from_json({{"device_id", "soil-01"}, {"metrics", {"rssi"}}}));
    w.create_rule(*w.users().find("carl"),
                  {{"device_id", "soil-01"}, {"metric", "rssi"}, {"operator", "<"}, {"threshold", -100}});
    w.enqueue_downlink("soil-01", {{"kind", "time_sync"}, {"offset_seconds", 3}});
    w.ingest(reading(t0, 5));
  }
  Wallet w(test_config(dir.path()));
  REQUIRE(w.sensors().size() == 1);
  CHECK(w.sensors()[0].registered_by == "ada");
  REQUIRE(w.rule_engine().rules().size() == 1);
  CHECK(w.rule_engine().rules()[0].owner == "carl");
  CHECK(w.downlinks().list().size() == 1);
  CHECK(w.store().size({"soil-01", "soil_moisture"}) == 1);
  CHECK(w.known_device("soil-01"));
}

TEST_CASE("configuration") {
  json j = R"({
    "data_dir": "d",
    "server": {"host": "0.0.0.0", "port": 9000},
    "ingest": [{"type": "tcp", "port": 7601}, {"type": "mqtt", "url": "mqtt://broker:1883"}, {"type": "replay", "path": "a.ndjson"}],
    "sinks": [{"type": "log"}, {"type": "webhook", "url": "http://h/x", "retries": 2, "backoff_ms": 250}],
    "training": {"seed": 4, "ensemble_weight": 0.7, "split": {"train": 0.8, "val": 0.1, "test": 0.1},
                 "ffnn": {"epochs": 10}, "lstm": {"lookback": 4, "alignment": "next"}},
    "forecast": {"weather_device": "wx"},
    "downlink": {"transport": "mqtt", "app_id": "farm"},
    "users": [{"id": "u", "role": "admin", "token": "t"}]
  })"_json;
  auto c = config_from_json(j, "/etc/wallet");
  CHECK(c.data_dir == "/etc/wallet/d");
  CHECK(c.server.port == 9000);
  REQUIRE(c.ingest.size() == 3);
  CHECK(std::get<ingest::TcpSource>(c.ingest[0]).port == 7601);
  CHECK(std::get<ingest::ReplaySource>(c.ingest[2]).path == "/etc/wallet/a.ndjson");
  CHECK(c.sinks[1].webhook.initial_backoff == std::chrono::milliseconds(250));
  CHECK(c.training.seed == 4);
  CHECK(c.training.ffnn.epochs == 10);
  CHECK(c.training.lstm.alignment == features::WindowTarget::next);
  CHECK(c.forecast.pressure_device == "wx");
  CHECK(c.downlink.app_id == "farm");
  CHECK(c.users[0].role == Role::admin);
  CHECK(train_config_from_json(to_json(c.training)).lstm.lookback == 4);

  CHECK(errc_of([&] { config_from_json({{"server", {{"port", "x"}}}}); }) == Errc::validation_error);
  CHECK(errc_of([&] { config_from_json({{"ingest", {{{"type", "carrier-pigeon"}}}}}); }) == Errc::validation_error);
  CHECK(errc_of([&] { config_from_json({{"training", {{"ensemble_weight", 2}}}}); }) == Errc::validation_error);
  CHECK(errc_of([&] { config_from_json({{"users", {{{"id", "a"}, {"role", "root"}, {"token", "t"}}}}}); }) ==
        Errc::validation_error);
  CHECK(errc_of([&] {
          UserDirectory({{"a", "", Role::admin, "t"}, {"b", "", Role::viewer, "t"}});
        }) == Errc::validation_error);
}
