#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <future>
#include <sstream>

#include <json.hpp>

#include "temp_dir.hpp"
#include "wallet/api/config.hpp"
#include "wallet/fileio.hpp"
#include "wallet/ingest/listener.hpp"
#include "wallet/mqtt/broker.hpp"
#include "wallet/mqtt/client.hpp"
#include "wallet/sim/device.hpp"
#include "wallet/base64.hpp"
#include "wallet/downlink.hpp"

using namespace wallet;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

int run(const std::string& cmd) {
  int rc = std::system((cmd + " 2>>" + (fs::temp_directory_path() / "wallet-cli-test.log").string()).c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

const std::string kWallet = WALLET_BIN;
const std::string kSim = WALLET_SIM_BIN;

}  // namespace

TEST_CASE("pipeline is deterministic under a fixed seed") {
  testing::TempDir tmp;
  auto pipeline = [&](const std::string& dir, int seed) {
    return run(kWallet + " --log-level warn pipeline --out " + q(tmp / dir) + " --seed " + std::to_string(seed) +
               " --rows 700 --epochs 4 --steps 5 >/dev/null");
  };
  REQUIRE(pipeline("a", 11) == 0);
  REQUIRE(pipeline("b", 11) == 0);
  REQUIRE(pipeline("c", 12) == 0);

  auto report = json::parse(read_file(tmp / "a/report.json"));
  const std::string v = report.at("model_version");
  const fs::path models = fs::path("data/models") / v;
  for (auto f : {"ffnn.model", "lstm.model", "norm.json", "metrics.json", "ffnn.history.csv", "lstm.history.csv"}) {
    CAPTURE(f);
    CHECK(read_file(tmp / "a" / models / f) == read_file(tmp / "b" / models / f));
  }
  CHECK(read_file(tmp / "a/report.json") == read_file(tmp / "b/report.json"));
  CHECK(read_file(tmp / "a" / models / "ffnn.model") != read_file(tmp / "c" / models / "ffnn.model"));

  CHECK(report["rows"] == 700);
  CHECK(report["ingest"]["delivered"] == report["uplinks"]);
  CHECK(report["ingest"]["malformed"] == 0);
  CHECK(report["forecast"].size() == 5);
  CHECK(report["forecast"][0]["stale"] == false);
  CHECK(report["rule"]["device_id"] == "soil-01");
  CHECK(report["notifications"]["count"].get<int>() > 0);
  CHECK(report["metrics"]["test"]["points"].get<int>() > 0);

  SUBCASE("refuses a non-empty output directory") { CHECK(pipeline("a", 11) != 0); }

  SUBCASE("train, evaluate and predict on the pipeline's data") {
    auto cfg = tmp / "wallet.json";
    write_file_atomic(cfg, json{{"data_dir", (tmp / "a/data").string()}}.dump());
    auto out = tmp / "out.json";
    REQUIRE(run(kWallet + " train -c " + q(cfg) + " --epochs 2 --seed 5 >" + q(out)) == 0);
    auto trained = json::parse(read_file(out));
    CHECK(trained["version"] != v);
    CHECK(trained["metrics"]["training"]["seed"] == 5);

    REQUIRE(run(kWallet + " evaluate -c " + q(cfg) + " --model " + v + " --device soil-01 >" + q(out)) == 0);
    auto ev = json::parse(read_file(out));
    CHECK(ev["version"] == v);
    CHECK(ev["ffnn"]["mae"].get<double>() > 0);
    CHECK(ev["persistence"]["points"].get<int>() > 0);

    REQUIRE(run(kWallet + " predict -c " + q(cfg) + " --device soil-01 --steps 3 >" + q(out)) == 0);
    auto pr = json::parse(read_file(out));
    REQUIRE(pr.size() == 3);
    CHECK(pr[0]["model_version"] == trained["version"]);

    CHECK(run(kWallet + " evaluate -c " + q(cfg) + " --model v9999 >/dev/null") != 0);
  }
}

TEST_CASE("wallet-sim ndjson matches the library's uplink stream") {
  testing::TempDir tmp;
  REQUIRE(run(kSim + " --seed 4 --rows 30 --file " + q(tmp / "u.ndjson") + " --pressure-csv " + q(tmp / "p.csv")) ==
          0);
  sim::SimScenario s;
  s.seed = 4;
  s.duration = s.cadence * 30;
  auto trace = sim::generate_trace(s);
  std::string expected;
  for (const auto& m : sim::scenario_uplinks(s, trace)) expected += ingest::to_json_line(m);
  CHECK(read_file(tmp / "u.ndjson") == expected);
  CHECK(read_file(tmp / "p.csv") == sim::pressure_csv(trace));

  REQUIRE(run(kSim + " --seed 4 --print-scenario >" + q(tmp / "s.json")) == 0);
  CHECK(sim::to_json(sim::scenario_from_json(json::parse(read_file(tmp / "s.json")))) ==
        json::parse(read_file(tmp / "s.json")));

  CHECK(run(kSim + " --out carrier-pigeon >/dev/null") != 0);
}

TEST_CASE("wallet-sim streams over tcp") {
  std::atomic<int> got{0};
  ingest::Listener listener(ingest::TcpSource{"127.0.0.1", 0}, [&](const ingest::SensorReading&) { ++got; });
  REQUIRE(run(kSim + " --out tcp --port " + std::to_string(listener.port()) + " --rows 25") == 0);
  for (int i = 0; i < 100 && got < 50; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(20));
  CHECK(got == 50);
  CHECK(listener.counters().malformed == 0);
}

TEST_CASE("wallet-sim over mqtt applies downlinks") {
  mqtt::Broker broker;
  const std::string url = "mqtt://127.0.0.1:" + std::to_string(broker.port());
  mqtt::Client app("127.0.0.1", broker.port(), "app");
  app.subscribe("wallet/devices/soil-01/up");

  // 40 ticks at 20 msg/s is about four seconds of wall time.
  auto sim = std::async(std::launch::async, [&] {
    return run(kSim + " --out mqtt --url " + url + " --rows 40 --rate 20 --downlink-wait-ms 10");
  });

  std::vector<Timestamp> times;
  bool sent = false;
  while (auto msg = app.poll(std::chrono::seconds(3))) {
    times.push_back(ingest::parse_uplink(msg->payload).received_at);
    if (!sent && times.size() == 3) {
      auto payload = encode_set_wakeup_period(std::chrono::minutes(30));
      app.publish("wallet/devices/soil-01/down",
                  json{{"port", 1}, {"confirmed", false}, {"payload_raw", base64_encode(payload)}}.dump());
      sent = true;
    }
  }
  REQUIRE(sim.get() == 0);
  REQUIRE(times.size() >= 5);
  // Ten-minute spacing before the command, thirty after it took effect.
  CHECK(times[1] - times[0] == minutes(10));
  CHECK(times.back() - times[times.size() - 2] == minutes(30));
  CHECK(times.size() < 40);
}

TEST_CASE("example configuration parses") {
  auto cfg = api::load_config(fs::path(WALLET_SOURCE_DIR) / "config/wallet.example.json");
  CHECK(cfg.ingest.size() == 2);
  CHECK(cfg.sinks.size() == 2);
  CHECK(cfg.users.size() == 3);
  CHECK(cfg.training.ffnn.epochs == 500);
  CHECK(cfg.data_dir == fs::path(WALLET_SOURCE_DIR) / "config/../data");
}
