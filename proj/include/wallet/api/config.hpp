#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "wallet/api/auth.hpp"
#include "wallet/forecast/forecaster.hpp"
#include "wallet/ingest/listener.hpp"
#include "wallet/rules/engine.hpp"
#include "wallet/store/series_store.hpp"

namespace wallet::api {

struct SinkConfig {
  std::string type = "log";  // log | webhook
  std::string name;          // defaults to the type
  std::string url;
  rules::WebhookOptions webhook;
};

struct ForecastConfig {
  std::string device_id = "soil-01";  // default training device
  std::string weather_device = "weather-01";
  std::string pressure_device = "weather-01";
  Duration tolerance = minutes(5);
  Duration history = minutes(120);  // lookback pulled from the store per forecast
  int max_steps = 144;
};

struct DownlinkConfig {
  std::string transport = "queue";  // queue | mqtt
  std::string mqtt_url = "mqtt://127.0.0.1:1883";
  std::string app_id = "wallet";
  Duration ack_timeout = std::chrono::hours(1);
  Duration worker_interval = std::chrono::seconds(1);
};

struct ServerConfig {
  std::string host = "127.0.0.1";
  std::uint16_t port = 8080;
  std::filesystem::path ui_dir;  // static dashboard bundle, optional
};

struct Config {
  std::filesystem::path data_dir = "data";
  ServerConfig server;
  std::vector<ingest::Source> ingest;
  std::vector<SinkConfig> sinks;
  forecast::TrainConfig training;
  ForecastConfig forecast;
  DownlinkConfig downlink;
  store::StoreOptions store;
  std::vector<User> users;
  bool async_notifications = true;
};

/// Unknown keys are ignored; malformed values throw ValidationError naming
/// the key. Relative `data_dir` and `ui_dir` resolve against `base`.
Config config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
Config load_config(const std::filesystem::path& path);

/// Training section only (`seed`, `ensemble_weight`, `split`, `ffnn`, `lstm`).
forecast::TrainConfig train_config_from_json(const nlohmann::json& j, forecast::TrainConfig base = {});
nlohmann::json to_json(const forecast::TrainConfig& cfg);

}  // namespace wallet::api
