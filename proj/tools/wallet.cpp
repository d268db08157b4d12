// wallet: server, training and maintenance commands.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "wallet/api/config.hpp"
#include "wallet/api/service.hpp"
#include "wallet/error.hpp"
#include "wallet/fileio.hpp"
#include "wallet/forecast/forecaster.hpp"
#include "wallet/ingest/listener.hpp"
#include "wallet/sim/device.hpp"
#include "wallet/sim/scenario.hpp"
#include "wallet/api/server.hpp"  // after Eigen users: httplib pulls in <resolv.h>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace wallet;

namespace {

std::atomic<bool> interrupted{false};

void on_signal(int) { interrupted = true; }

api::Config config_or_default(const std::string& path) {
  if (path.empty()) return api::Config{};
  return api::load_config(path);
}

std::optional<Timestamp> opt_time(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_rfc3339(s);
}

// --- serve ------------------------------------------------------------------

int cmd_serve(const std::string& config_path, std::optional<std::uint16_t> port) {
  auto cfg = config_or_default(config_path);
  if (port) cfg.server.port = *port;
  api::Wallet wallet(cfg);
  wallet.start();
  api::HttpServer server(wallet, cfg.server.host, cfg.server.port);
  server.start();
  spdlog::info("listening on http://{}:{}", cfg.server.host, server.port());
  for (std::size_t i = 0; auto p : wallet.listener_ports()) {
    if (p) spdlog::info("ingest source {} on tcp port {}", i, p);
    ++i;
  }
  while (!interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(200));
  spdlog::info("shutting down");
  server.stop();
  wallet.stop();
  return 0;
}

// --- ingest / import --------------------------------------------------------

int cmd_ingest(const std::string& config_path, const std::string& file) {
  api::Wallet wallet(config_or_default(config_path));
  ingest::Listener listener(ingest::ReplaySource{file}, [&](const ingest::SensorReading& r) { wallet.ingest(r); });
  listener.wait();
  wallet.rule_engine().flush();
  auto c = listener.counters();
  std::cout << json{{"received", c.received}, {"delivered", c.delivered}, {"malformed", c.malformed},
                    {"sink_errors", c.sink_errors}}
                   .dump()
            << '\n';
  return c.sink_errors ? 1 : 0;
}

int cmd_import(const std::string& config_path, const std::string& device, const std::string& metric,
               const std::string& csv) {
  api::Wallet wallet(config_or_default(config_path));
  auto n = wallet.import_series(device, metric, read_file(csv));
  std::cout << json{{"device_id", device}, {"metric", metric}, {"imported", n}}.dump() << '\n';
  return 0;
}

// --- train / evaluate / predict ---------------------------------------------

struct TrainArgs {
  std::string config;
  std::string from = "store";  // store | path to a feature CSV
  std::string device;
  std::string since, until;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, ffnn_epochs, lstm_epochs;
};

api::TrainRequest train_request(const TrainArgs& a) {
  api::TrainRequest req;
  req.device_id = a.device;
  req.from = opt_time(a.since);
  req.to = opt_time(a.until);
  req.seed = a.seed;
  req.ffnn_epochs = a.ffnn_epochs ? a.ffnn_epochs : a.epochs;
  req.lstm_epochs = a.lstm_epochs ? a.lstm_epochs : a.epochs;
  return req;
}

void print_progress(std::string_view model, const forecast::EpochRecord& e) {
  if (e.epoch == 1 || e.epoch % 50 == 0)
    spdlog::info("{} epoch {:>4}  train_msle {:.6g}  val_msle {:.6g}  val_mae {:.4f}", model, e.epoch, e.train_msle,
                 e.val_msle, e.val_mae);
}

int cmd_train(const TrainArgs& a) {
  api::Wallet wallet(config_or_default(a.config));
  auto req = train_request(a);
  std::string version;
  if (a.from == "store") {
    version = wallet.train(req, "cli", print_progress);
  } else {
    auto rows = features::rows_from_csv(read_file(a.from));
    auto cfg = wallet.train_config(req);
    auto result = forecast::train(rows, cfg, print_progress);
    version = wallet.registry().publish(
        result, {{"source", fs::path(a.from).filename().string()}, {"rows", rows.size()},
                 {"requested_by", "cli"}, {"training", api::to_json(cfg)}});
  }
  std::cout << json{{"version", version}, {"metrics", wallet.registry().metrics(version)}}.dump(2) << '\n';
  return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& version, const std::string& rows_csv,
                 const std::string& device, const std::string& since, const std::string& until) {
  api::Wallet wallet(config_or_default(config_path));
  auto v = version.empty() ? wallet.registry().current_version() : std::optional<std::string>(version);
  if (!v) throw Error(Errc::no_model);
  auto model = wallet.registry().load(*v);
  json out{{"version", *v}};
  if (rows_csv.empty() && device.empty()) {
    // Stored test metrics from training time.
    out["metrics"] = wallet.registry().metrics(*v);
  } else {
    std::vector<features::FeatureRow> rows;
    if (!rows_csv.empty()) {
      rows = features::rows_from_csv(read_file(rows_csv));
    } else {
      rows = wallet.feature_rows(device, opt_time(since).value_or(Timestamp::min()),
                                 opt_time(until).value_or(Timestamp::max()), true);
    }
    out["rows"] = rows.size();
    for (auto p : {forecast::Predictor::ffnn, forecast::Predictor::lstm, forecast::Predictor::ensemble}) {
      auto e = forecast::evaluate(*model, rows, model->norm, p);
      out[std::string(forecast::to_string(p))] = {{"mae", e.mae_raw}, {"msle_normalized", e.msle_normalized},
                                                  {"points", e.residuals.size()}};
    }
    auto pe = forecast::evaluate_persistence(rows, model->cadence, &model->norm);
    out["persistence"] = {{"mae", pe.mae_raw}, {"points", pe.residuals.size()}};
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_predict(const std::string& config_path, const std::string& device, int steps) {
  api::Wallet wallet(config_or_default(config_path));
  auto dev = device.empty() ? wallet.config().forecast.device_id : device;
  json out = json::array();
  for (const auto& r : wallet.forecast(dev, steps)) out.push_back(forecast::to_json(r));
  std::cout << out.dump(2) << '\n';
  return 0;
}

// --- pipeline ---------------------------------------------------------------

struct PipelineArgs {
  std::string out;
  std::string scenario;
  std::uint64_t seed = 1;
  std::optional<std::size_t> rows;
  std::optional<std::size_t> epochs;
  int steps = 6;
  double rule_threshold = -120;
};

/// Simulator to forecast in one process, all on simulated time, so the
/// artefacts depend on the seed only.
int cmd_pipeline(const PipelineArgs& a) {
  const fs::path out = a.out;
  if (fs::exists(out) && !fs::is_empty(out))
    throw Error(Errc::validation_error, "output directory is not empty: " + out.string());
  fs::create_directories(out);

  sim::SimScenario s;
  if (!a.scenario.empty()) s = sim::scenario_from_json(json::parse(read_file(a.scenario)));
  s.seed = a.seed;
  if (a.rows) s.duration = s.cadence * static_cast<std::int64_t>(*a.rows);
  sim::validate(s);
  write_file_atomic(out / "scenario.json", sim::to_json(s).dump(2) + "\n");

  // 1. simulate
  auto trace = sim::generate_trace(s);
  auto uplinks = sim::scenario_uplinks(s, trace);
  {
    std::string ndjson;
    for (const auto& m : uplinks) ndjson += ingest::to_json_line(m);
    write_file_atomic(out / "uplinks.ndjson", ndjson);
  }
  write_file_atomic(out / "pressure.csv", sim::pressure_csv(trace));
  spdlog::info("simulated {} rows, {} uplinks", trace.size(), uplinks.size());

  // 2. wallet with a fresh data directory and synchronous notifications
  api::Config cfg;
  cfg.data_dir = out / "data";
  cfg.async_notifications = false;
  cfg.sinks = {api::SinkConfig{}};
  cfg.training.seed = a.seed;
  cfg.forecast.device_id = s.device_id;
  cfg.forecast.weather_device = s.weather_device_id;
  cfg.forecast.pressure_device = s.weather_device_id;
  cfg.downlink.app_id = s.app_id;
  api::Wallet wallet(cfg);

  const api::User admin{"pipeline", "pipeline", api::Role::admin, ""};
  wallet.register_sensor(admin, api::sensor_from_json({{"device_id", s.device_id},
                                                       {"type", "soil"},
                                                       {"metrics", {{{"name", "soil_moisture"}, {"unit", "counts"}}}}}));
  wallet.register_sensor(
      admin, api::sensor_from_json({{"device_id", s.weather_device_id},
                                    {"type", "weather"},
                                    {"metrics",
                                     {{{"name", "air_temperature"}, {"unit", "degC"}},
                                      {{"name", "air_humidity"}, {"unit", "%RH"}},
                                      {{"name", "air_pressure"}, {"unit", "hPa"}}}}}));
  auto rule = wallet.create_rule(admin, {{"device_id", s.device_id},
                                         {"metric", "rssi"},
                                         {"kind", "instant"},
                                         {"operator", "<"},
                                         {"threshold", a.rule_threshold},
                                         {"cooldown_seconds", 6 * 3600}});
  auto imported = wallet.import_series(s.weather_device_id, "air_pressure", read_file(out / "pressure.csv"));

  // 3. ingest through the replay listener
  ingest::ListenerCounters counters;
  {
    ingest::Listener listener(ingest::ReplaySource{out / "uplinks.ndjson"},
                              [&](const ingest::SensorReading& r) { wallet.ingest(r); });
    listener.wait();
    counters = listener.counters();
  }
  wallet.rule_engine().flush();
  if (counters.delivered != uplinks.size())
    throw Error(Errc::io_failure, "ingested " + std::to_string(counters.delivered) + " of " +
                                      std::to_string(uplinks.size()) + " uplinks");

  // 4. train and publish
  api::TrainRequest req;
  req.device_id = s.device_id;
  req.seed = a.seed;
  req.ffnn_epochs = a.epochs;
  req.lstm_epochs = a.epochs;
  auto version = wallet.train(req, admin.id, print_progress);

  // 5. forecast from the last ingested row
  auto last = wallet.store().latest({s.device_id, "rssi"});
  auto fc = wallet.forecast(s.device_id, a.steps, last ? std::optional<Timestamp>(last->timestamp) : std::nullopt);

  json report;
  report["seed"] = a.seed;
  report["rows"] = trace.size();
  report["uplinks"] = uplinks.size();
  report["pressure_points"] = imported;
  report["ingest"] = {{"received", counters.received}, {"delivered", counters.delivered},
                      {"malformed", counters.malformed}, {"sink_errors", counters.sink_errors}};
  report["model_version"] = version;
  report["metrics"] = wallet.registry().metrics(version);
  report["forecast"] = json::array();
  for (const auto& r : fc) report["forecast"].push_back(forecast::to_json(r));
  report["rule"] = rules::to_json(rule);
  auto notes = wallet.notifications(admin, {.rule_id = rule.id, .limit = 100000});
  report["notifications"] = {{"count", notes.size()}, {"items", json::array()}};
  for (auto it = notes.rbegin(); it != notes.rend(); ++it) {
    auto n = rules::to_json(*it);
    report["notifications"]["items"].push_back(
        {{"id", n["id"]}, {"fired_at", n["fired_at"]}, {"value", n["value"]}, {"message", n["message"]}});
  }
  write_file_atomic(out / "report.json", report.dump(2) + "\n");

  std::cout << json{{"report", (out / "report.json").string()},
                    {"models", (cfg.data_dir / "models" / version).string()},
                    {"ffnn_mae", report["metrics"]["test"]["ffnn_mae"]},
                    {"lstm_mae", report["metrics"]["test"]["lstm_mae"]},
                    {"notifications", notes.size()}}
                   .dump(2)
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sensor wallet: ingest, store, rules and forecasting"};
  app.require_subcommand(1);
  std::string level = "info";
  app.add_option("--log-level", level, "trace|debug|info|warn|error")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error"}));

  std::string config;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config, "Configuration file")->check(CLI::ExistingFile);
  };

  auto* serve = app.add_subcommand("serve", "Run the HTTP API and ingest listeners");
  add_config(serve);
  std::optional<std::uint16_t> port;
  serve->add_option("--port", port, "Override server.port");

  auto* ingest_cmd = app.add_subcommand("ingest", "Replay an ndjson uplink file into the store");
  add_config(ingest_cmd);
  std::string file;
  ingest_cmd->add_option("file", file, "ndjson file")->required()->check(CLI::ExistingFile);

  auto* import_cmd = app.add_subcommand("import", "Import a timestamp,<metric> CSV series");
  add_config(import_cmd);
  std::string device, metric = "air_pressure", csv;
  import_cmd->add_option("--device", device)->required();
  import_cmd->add_option("--metric", metric);
  import_cmd->add_option("csv", csv)->required()->check(CLI::ExistingFile);

  auto* train = app.add_subcommand("train", "Train both models and publish a new version");
  TrainArgs ta;
  train->add_option("-c,--config", ta.config)->check(CLI::ExistingFile);
  train->add_option("--from", ta.from, "'store' or a feature CSV");
  train->add_option("--device", ta.device);
  train->add_option("--since", ta.since, "RFC 3339, store only");
  train->add_option("--until", ta.until, "RFC 3339, store only");
  train->add_option("--seed", ta.seed);
  train->add_option("--epochs", ta.epochs, "Both models");
  train->add_option("--ffnn-epochs", ta.ffnn_epochs);
  train->add_option("--lstm-epochs", ta.lstm_epochs);

  auto* evaluate = app.add_subcommand("evaluate", "Report a model version's errors");
  add_config(evaluate);
  std::string version, rows_csv, since, until;
  evaluate->add_option("--model", version, "Version (default: current)");
  evaluate->add_option("--rows", rows_csv, "Feature CSV to evaluate on")->check(CLI::ExistingFile);
  evaluate->add_option("--device", device, "Evaluate on stored rows of this device");
  evaluate->add_option("--since", since);
  evaluate->add_option("--until", until);

  auto* predict = app.add_subcommand("predict", "Forecast the next steps for a device");
  add_config(predict);
  int steps = 6;
  predict->add_option("--device", device);
  predict->add_option("--steps", steps)->check(CLI::Range(1, 10000));

  auto* pipeline = app.add_subcommand("pipeline", "Simulate, ingest, train, publish and forecast in one run");
  PipelineArgs pa;
  pipeline->add_option("--out", pa.out, "Empty or missing output directory")->required();
  pipeline->add_option("--scenario", pa.scenario)->check(CLI::ExistingFile);
  pipeline->add_option("--seed", pa.seed);
  pipeline->add_option("--rows", pa.rows, "Simulated cadence ticks");
  pipeline->add_option("--epochs", pa.epochs, "Both models (default: training config)");
  pipeline->add_option("--steps", pa.steps)->check(CLI::Range(1, 144));
  pipeline->add_option("--rule-threshold", pa.rule_threshold, "rssi alert threshold on the soil device");

  CLI11_PARSE(app, argc, argv);

  spdlog::set_default_logger(spdlog::stderr_color_mt("wallet"));
  spdlog::set_level(spdlog::level::from_str(level));
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::signal(SIGPIPE, SIG_IGN);

  try {
    if (*serve) return cmd_serve(config, port);
    if (*ingest_cmd) return cmd_ingest(config, file);
    if (*import_cmd) return cmd_import(config, device, metric, csv);
    if (*train) return cmd_train(ta);
    if (*evaluate) return cmd_evaluate(config, version, rows_csv, device, since, until);
    if (*predict) return cmd_predict(config, device, steps);
    if (*pipeline) return cmd_pipeline(pa);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
