// Streams a simulated soil sensor and weather station as TTN-style uplinks.

#include <algorithm>
#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "wallet/base64.hpp"
#include "wallet/error.hpp"
#include "wallet/fileio.hpp"
#include "wallet/mqtt/client.hpp"
#include "wallet/net/socket.hpp"
#include "wallet/sim/device.hpp"

using namespace wallet;

namespace {

std::atomic<bool> interrupted{false};

struct Options {
  std::string scenario;
  std::string out = "ndjson";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> rows;
  std::string file;
  std::string host = "127.0.0.1";
  std::uint16_t port = 7600;
  std::string url = "mqtt://127.0.0.1:1883";
  double rate = 0;
  int downlink_wait_ms = 0;
  std::string pressure_csv;
  std::string trace_csv;
  bool print_scenario = false;
};

class Emitter {
 public:
  virtual ~Emitter() = default;
  virtual void emit(const ingest::UplinkMessage& m) = 0;
  /// Downlinks that arrived since the last call, as (device, port, payload).
  virtual std::vector<std::tuple<std::string, int, Bytes>> downlinks(std::chrono::milliseconds) { return {}; }
};

class StreamEmitter : public Emitter {
 public:
  explicit StreamEmitter(std::ostream& os) : os_(os) {}
  void emit(const ingest::UplinkMessage& m) override { os_ << ingest::to_json_line(m); }

 private:
  std::ostream& os_;
};

class TcpEmitter : public Emitter {
 public:
  TcpEmitter(const std::string& host, std::uint16_t port) : fd_(net::connect_tcp(host, port, std::chrono::seconds(5))) {}
  void emit(const ingest::UplinkMessage& m) override { net::write_all(fd_, ingest::to_json_line(m)); }

 private:
  net::Fd fd_;
};

class MqttEmitter : public Emitter {
 public:
  MqttEmitter(const std::string& url, const std::string& app_id) {
    auto ep = net::parse_endpoint(url, 1883);
    client_ = std::make_unique<mqtt::Client>(ep.host, ep.port, "wallet-sim");
    client_->subscribe(app_id + "/devices/+/down");
  }
  void emit(const ingest::UplinkMessage& m) override {
    client_->publish(m.app_id + "/devices/" + m.dev_id + "/up", ingest::to_json_line(m));
  }
  std::vector<std::tuple<std::string, int, Bytes>> downlinks(std::chrono::milliseconds wait) override {
    std::vector<std::tuple<std::string, int, Bytes>> out;
    while (auto msg = client_->poll(out.empty() ? wait : std::chrono::milliseconds(0))) {
      // <app>/devices/<dev>/down
      auto first = msg->topic.find("/devices/");
      auto last = msg->topic.rfind("/down");
      if (first == std::string::npos || last == std::string::npos || last <= first + 9) continue;
      auto device = msg->topic.substr(first + 9, last - first - 9);
      try {
        auto j = nlohmann::json::parse(msg->payload);
        out.emplace_back(device, j.value("port", 1), base64_decode(j.at("payload_raw").get<std::string>()));
      } catch (const std::exception& e) {
        spdlog::warn("ignoring malformed downlink on {}: {}", msg->topic, e.what());
      }
    }
    return out;
  }

 private:
  std::unique_ptr<mqtt::Client> client_;
};

int run(const Options& o) {
  sim::SimScenario s;
  if (!o.scenario.empty()) s = sim::scenario_from_json(nlohmann::json::parse(read_file(o.scenario)));
  if (o.seed) s.seed = *o.seed;
  if (o.rows) s.duration = s.cadence * static_cast<std::int64_t>(*o.rows);
  sim::validate(s);
  if (o.print_scenario) {
    std::cout << sim::to_json(s).dump(2) << '\n';
    return 0;
  }

  auto trace = std::make_shared<const std::vector<sim::TraceRow>>(sim::generate_trace(s));
  if (!o.pressure_csv.empty()) write_file_atomic(o.pressure_csv, sim::pressure_csv(*trace));
  if (!o.trace_csv.empty()) write_file_atomic(o.trace_csv, features::to_csv(sim::to_feature_rows(*trace)));

  std::ofstream file;
  std::unique_ptr<Emitter> emitter;
  if (o.out == "ndjson") {
    if (!o.file.empty()) {
      file.open(o.file, std::ios::binary | std::ios::trunc);
      if (!file) throw Error(Errc::io_failure, o.file);
    }
    emitter = std::make_unique<StreamEmitter>(o.file.empty() ? std::cout : file);
  } else if (o.out == "tcp") {
    emitter = std::make_unique<TcpEmitter>(o.host, o.port);
  } else {
    emitter = std::make_unique<MqttEmitter>(o.url, s.app_id);
  }

  std::vector<ingest::UplinkMessage> batch;
  auto collect = [&](const ingest::UplinkMessage& m) { batch.push_back(m); };
  sim::SimDevice soil(s, trace, collect, sim::DeviceRole::soil);
  sim::SimDevice weather(s, trace, collect, sim::DeviceRole::weather);

  const auto interval = o.rate > 0 ? std::chrono::duration<double>(1.0 / o.rate) : std::chrono::duration<double>(0);
  auto next_send = std::chrono::steady_clock::now();
  std::size_t sent = 0;
  for (std::size_t k = 1; k <= trace->size() && !interrupted; ++k) {
    const Timestamp tick = s.start + s.cadence * static_cast<std::int64_t>(k);
    batch.clear();
    soil.advance_to(tick);
    weather.advance_to(tick);
    std::stable_sort(batch.begin(), batch.end(),
                     [](const auto& a, const auto& b) { return a.received_at < b.received_at; });
    for (const auto& m : batch) {
      if (interval.count() > 0) {
        std::this_thread::sleep_until(next_send);
        next_send += std::chrono::duration_cast<std::chrono::steady_clock::duration>(interval);
      }
      emitter->emit(m);
      ++sent;
    }
    for (auto& [device, port, payload] : emitter->downlinks(std::chrono::milliseconds(o.downlink_wait_ms))) {
      auto* target = device == s.device_id ? &soil : device == s.weather_device_id ? &weather : nullptr;
      if (!target) continue;
      try {
        target->apply_downlink(classify_payload(payload), payload);
        spdlog::info("{} applied downlink on port {} ({} bytes)", device, port, payload.size());
      } catch (const Error& e) {
        spdlog::warn("{} rejected downlink: {}", device, e.what());
      }
    }
  }
  if (file.is_open()) file.flush();
  spdlog::info("sent {} uplinks", sent);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulated soil moisture sensor and weather station"};
  Options o;
  app.add_option("--scenario", o.scenario, "Scenario JSON file (defaults when omitted)")->check(CLI::ExistingFile);
  app.add_option("--out", o.out, "Output transport")->check(CLI::IsMember({"ndjson", "tcp", "mqtt"}));
  app.add_option("--seed", o.seed, "Override the scenario seed");
  app.add_option("--rows", o.rows, "Override the duration as a number of cadence ticks");
  app.add_option("--file", o.file, "ndjson output file (stdout when omitted)");
  app.add_option("--host", o.host, "tcp: ingest host");
  app.add_option("--port", o.port, "tcp: ingest port");
  app.add_option("--url", o.url, "mqtt: broker URL");
  app.add_option("--rate", o.rate, "Uplinks per second (0 = as fast as possible)");
  app.add_option("--downlink-wait-ms", o.downlink_wait_ms, "mqtt: wait for downlinks after each tick");
  app.add_option("--pressure-csv", o.pressure_csv, "Also write the pressure feed as CSV");
  app.add_option("--trace-csv", o.trace_csv, "Also write the ground-truth feature rows as CSV");
  app.add_flag("--print-scenario", o.print_scenario, "Print the effective scenario and exit");
  CLI11_PARSE(app, argc, argv);

  spdlog::set_default_logger(spdlog::stderr_color_mt("wallet-sim"));
  std::signal(SIGINT, [](int) { interrupted = true; });
  std::signal(SIGTERM, [](int) { interrupted = true; });
  std::signal(SIGPIPE, SIG_IGN);
  try {
    return run(o);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
