#include "wallet/api/config.hpp"

#include "wallet/error.hpp"
#include "wallet/fileio.hpp"

namespace wallet::api {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& key) { throw Error(Errc::validation_error, key); }

template <class T>
void get(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j[key].get<T>();
  } catch (const json::exception&) {
    bad(where + key);
  }
}

void get_duration(const json& j, const char* key, Duration& out, const std::string& where, Duration unit) {
  if (!j.contains(key)) return;
  if (!j[key].is_number()) bad(where + key);
  out = std::chrono::duration_cast<Duration>(j[key].get<double>() * std::chrono::duration<double, Duration::period>(unit));
}

std::string_view to_string(nn::Activation a) { return a == nn::Activation::elu ? "elu" : "linear"; }

nn::Activation parse_activation(const std::string& s, const std::string& key) {
  if (s == "elu") return nn::Activation::elu;
  if (s == "linear") return nn::Activation::linear;
  bad(key);
}

}  // namespace

forecast::TrainConfig train_config_from_json(const json& j, forecast::TrainConfig cfg) {
  if (!j.is_object()) bad("training");
  get(j, "seed", cfg.seed, "training.");
  get(j, "ensemble_weight", cfg.ensemble_weight, "training.");
  get(j, "best_val_checkpoint", cfg.best_val_checkpoint, "training.");
  get_duration(j, "cadence_minutes", cfg.cadence, "training.", minutes(1));
  if (j.contains("split")) {
    const auto& s = j["split"];
    get(s, "train", cfg.split.train, "training.split.");
    get(s, "val", cfg.split.val, "training.split.");
    get(s, "test", cfg.split.test, "training.split.");
  }
  std::string act;
  if (j.contains("ffnn")) {
    const auto& f = j["ffnn"];
    get(f, "hidden", cfg.ffnn.hidden, "training.ffnn.");
    get(f, "epochs", cfg.ffnn.epochs, "training.ffnn.");
    get(f, "batch_size", cfg.ffnn.batch, "training.ffnn.");
    get(f, "learning_rate", cfg.ffnn.learning_rate, "training.ffnn.");
    if (f.contains("activation")) {
      get(f, "activation", act, "training.ffnn.");
      cfg.ffnn.activation = parse_activation(act, "training.ffnn.activation");
    }
  }
  if (j.contains("lstm")) {
    const auto& l = j["lstm"];
    get(l, "units", cfg.lstm.units, "training.lstm.");
    get(l, "dense_units", cfg.lstm.dense_units, "training.lstm.");
    get(l, "lookback", cfg.lstm.lookback, "training.lstm.");
    get(l, "epochs", cfg.lstm.epochs, "training.lstm.");
    get(l, "batch_size", cfg.lstm.batch, "training.lstm.");
    get(l, "learning_rate", cfg.lstm.learning_rate, "training.lstm.");
    get(l, "forget_bias", cfg.lstm.forget_bias, "training.lstm.");
    if (l.contains("activation")) {
      get(l, "activation", act, "training.lstm.");
      cfg.lstm.dense_activation = parse_activation(act, "training.lstm.activation");
    }
    if (l.contains("alignment")) {
      get(l, "alignment", act, "training.lstm.");
      if (act == "current") cfg.lstm.alignment = features::WindowTarget::current;
      else if (act == "next") cfg.lstm.alignment = features::WindowTarget::next;
      else bad("training.lstm.alignment");
    }
  }
  forecast::validate(cfg);
  return cfg;
}

json to_json(const forecast::TrainConfig& cfg) {
  return {{"seed", cfg.seed},
          {"ensemble_weight", cfg.ensemble_weight},
          {"best_val_checkpoint", cfg.best_val_checkpoint},
          {"cadence_minutes", std::chrono::duration_cast<std::chrono::minutes>(cfg.cadence).count()},
          {"split", {{"train", cfg.split.train}, {"val", cfg.split.val}, {"test", cfg.split.test}}},
          {"ffnn",
           {{"hidden", cfg.ffnn.hidden},
            {"activation", to_string(cfg.ffnn.activation)},
            {"epochs", cfg.ffnn.epochs},
            {"batch_size", cfg.ffnn.batch},
            {"learning_rate", cfg.ffnn.learning_rate}}},
          {"lstm",
           {{"units", cfg.lstm.units},
            {"dense_units", cfg.lstm.dense_units},
            {"activation", to_string(cfg.lstm.dense_activation)},
            {"lookback", cfg.lstm.lookback},
            {"epochs", cfg.lstm.epochs},
            {"batch_size", cfg.lstm.batch},
            {"learning_rate", cfg.lstm.learning_rate},
            {"forget_bias", cfg.lstm.forget_bias},
            {"alignment", cfg.lstm.alignment == features::WindowTarget::current ? "current" : "next"}}}};
}

Config config_from_json(const json& j, const std::filesystem::path& base) {
  if (!j.is_object()) bad("config");
  Config c;
  std::string s;
  auto resolve = [&](const std::filesystem::path& p) { return p.is_absolute() || base.empty() ? p : base / p; };
  if (j.contains("data_dir")) {
    get(j, "data_dir", s, "");
    c.data_dir = resolve(s);
  } else {
    c.data_dir = resolve(c.data_dir);
  }
  if (j.contains("server")) {
    const auto& v = j["server"];
    get(v, "host", c.server.host, "server.");
    get(v, "port", c.server.port, "server.");
    if (v.contains("ui_dir")) {
      get(v, "ui_dir", s, "server.");
      c.server.ui_dir = resolve(s);
    }
  }
  if (j.contains("ingest")) {
    if (!j["ingest"].is_array()) bad("ingest");
    for (const auto& e : j["ingest"]) {
      std::string type;
      get(e, "type", type, "ingest.");
      if (type == "replay") {
        ingest::ReplaySource r;
        get(e, "path", s, "ingest.");
        r.path = resolve(s);
        c.ingest.emplace_back(r);
      } else if (type == "tcp") {
        ingest::TcpSource t;
        get(e, "host", t.host, "ingest.");
        get(e, "port", t.port, "ingest.");
        c.ingest.emplace_back(t);
      } else if (type == "mqtt") {
        ingest::MqttSource m;
        get(e, "url", m.url, "ingest.");
        get(e, "topic", m.topic, "ingest.");
        get(e, "client_id", m.client_id, "ingest.");
        c.ingest.emplace_back(m);
      } else {
        bad("ingest.type");
      }
    }
  }
  if (j.contains("sinks")) {
    if (!j["sinks"].is_array()) bad("sinks");
    for (const auto& e : j["sinks"]) {
      SinkConfig sc;
      get(e, "type", sc.type, "sinks.");
      if (sc.type != "log" && sc.type != "webhook") bad("sinks.type");
      get(e, "name", sc.name, "sinks.");
      if (sc.name.empty()) sc.name = sc.type;
      get(e, "url", sc.url, "sinks.");
      get(e, "retries", sc.webhook.retries, "sinks.");
      get_duration(e, "backoff_ms", sc.webhook.initial_backoff, "sinks.", std::chrono::milliseconds(1));
      get_duration(e, "timeout_ms", sc.webhook.timeout, "sinks.", std::chrono::milliseconds(1));
      if (sc.type == "webhook" && sc.url.empty()) bad("sinks.url");
      c.sinks.push_back(sc);
    }
  }
  if (j.contains("training")) c.training = train_config_from_json(j["training"]);
  if (j.contains("forecast")) {
    const auto& f = j["forecast"];
    get(f, "device_id", c.forecast.device_id, "forecast.");
    get(f, "weather_device", c.forecast.weather_device, "forecast.");
    c.forecast.pressure_device = c.forecast.weather_device;
    get(f, "pressure_device", c.forecast.pressure_device, "forecast.");
    get_duration(f, "tolerance_minutes", c.forecast.tolerance, "forecast.", minutes(1));
    get_duration(f, "history_minutes", c.forecast.history, "forecast.", minutes(1));
    get(f, "max_steps", c.forecast.max_steps, "forecast.");
  }
  if (j.contains("downlink")) {
    const auto& d = j["downlink"];
    get(d, "transport", c.downlink.transport, "downlink.");
    if (c.downlink.transport != "queue" && c.downlink.transport != "mqtt") bad("downlink.transport");
    get(d, "mqtt_url", c.downlink.mqtt_url, "downlink.");
    get(d, "app_id", c.downlink.app_id, "downlink.");
    get_duration(d, "ack_timeout_seconds", c.downlink.ack_timeout, "downlink.", seconds(1));
    get_duration(d, "worker_interval_ms", c.downlink.worker_interval, "downlink.", std::chrono::milliseconds(1));
  }
  if (j.contains("store")) {
    get(j["store"], "compact_after", c.store.compact_after, "store.");
    get(j["store"], "max_segments", c.store.max_segments, "store.");
    get(j["store"], "fsync", c.store.fsync, "store.");
  }
  get(j, "async_notifications", c.async_notifications, "");
  if (j.contains("users")) c.users = users_from_json(j["users"]);
  return c;
}

Config load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(Errc::malformed_json, path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

}  // namespace wallet::api
