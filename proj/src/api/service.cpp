#include "wallet/api/service.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

#include "wallet/base64.hpp"
#include "wallet/error.hpp"
#include "wallet/fileio.hpp"

namespace wallet::api {

namespace {

using nlohmann::json;

const std::map<std::string, std::string, std::less<>> kUnits{
    {"rssi", "dBm"},          {"snr", "dB"},        {"air_temperature", "°C"},
    {"air_humidity", "%RH"},  {"air_pressure", "hPa"}, {"soil_moisture", "counts"}};

std::string encode_token(Timestamp t) {
  auto s = std::to_string(to_micros(t));
  return base64_encode({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

Timestamp decode_token(const std::string& token) {
  try {
    auto bytes = base64_decode(token);
    std::string s(bytes.begin(), bytes.end());
    std::size_t used = 0;
    long long v = std::stoll(s, &used);
    if (used != s.size()) throw Error(Errc::validation_error, "page_token");
    return from_micros(v);
  } catch (const std::exception&) {
    throw Error(Errc::validation_error, "page_token");
  }
}

SensorDescriptor sensor_from_stored(const json& j) {
  auto s = sensor_from_json(j);
  s.registered_by = j.value("registered_by", "");
  s.created_at = parse_rfc3339(j.at("created_at").get<std::string>());
  return s;
}

}  // namespace

json to_json(const SensorDescriptor& s) {
  json metrics = json::array();
  for (const auto& m : s.metrics) metrics.push_back({{"name", m.name}, {"unit", m.unit}});
  return {{"device_id", s.device_id},         {"type", s.type},
          {"metrics", metrics},               {"location", s.location},
          {"registered_by", s.registered_by}, {"created_at", format_rfc3339(s.created_at)},
          {"registered", true}};
}

SensorDescriptor sensor_from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::validation_error, "sensor");
  SensorDescriptor s;
  auto str = [&](const char* key, std::string& out, bool required) {
    if (!j.contains(key)) {
      if (required) throw Error(Errc::validation_error, key);
      return;
    }
    if (!j[key].is_string()) throw Error(Errc::validation_error, key);
    out = j[key].get<std::string>();
  };
  str("device_id", s.device_id, true);
  str("type", s.type, false);
  str("location", s.location, false);
  if (!valid_device_id(s.device_id)) throw Error(Errc::validation_error, "device_id");
  if (!j.contains("metrics") || !j["metrics"].is_array() || j["metrics"].empty())
    throw Error(Errc::validation_error, "metrics");
  for (const auto& m : j["metrics"]) {
    MetricInfo info;
    if (m.is_string()) {
      info.name = m.get<std::string>();
    } else if (m.is_object() && m.contains("name") && m["name"].is_string()) {
      info.name = m["name"].get<std::string>();
      if (m.contains("unit")) {
        if (!m["unit"].is_string()) throw Error(Errc::validation_error, "metrics.unit");
        info.unit = m["unit"].get<std::string>();
      }
    } else {
      throw Error(Errc::validation_error, "metrics");
    }
    if (!valid_metric_name(info.name)) throw Error(Errc::validation_error, "metrics.name");
    if (info.unit.empty())
      if (auto it = kUnits.find(info.name); it != kUnits.end()) info.unit = it->second;
    s.metrics.push_back(std::move(info));
  }
  return s;
}

TrainRequest train_request_from_json(const json& j) {
  TrainRequest r;
  if (j.is_null()) return r;
  if (!j.is_object()) throw Error(Errc::validation_error, "body");
  try {
    r.device_id = j.value("device_id", "");
    if (j.contains("from")) r.from = parse_rfc3339(j["from"].get<std::string>());
    if (j.contains("to")) r.to = parse_rfc3339(j["to"].get<std::string>());
    if (j.contains("seed")) r.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("ffnn_epochs")) r.ffnn_epochs = j["ffnn_epochs"].get<std::size_t>();
    if (j.contains("lstm_epochs")) r.lstm_epochs = j["lstm_epochs"].get<std::size_t>();
  } catch (const json::exception& e) {
    throw Error(Errc::validation_error, e.what());
  }
  return r;
}

std::string_view to_string(JobState s) {
  switch (s) {
    case JobState::running: return "running";
    case JobState::succeeded: return "succeeded";
    case JobState::failed: return "failed";
  }
  return "?";
}

json to_json(const TrainJob& j) {
  json out{{"id", j.id},
           {"state", to_string(j.state)},
           {"device_id", j.device_id},
           {"requested_by", j.requested_by},
           {"started_at", format_rfc3339(j.started_at)},
           {"finished_at", j.finished_at ? json(format_rfc3339(*j.finished_at)) : json(nullptr)},
           {"epochs_done", j.epochs_done},
           {"epochs_total", j.epochs_total}};
  if (!j.version.empty()) out["version"] = j.version;
  if (!j.error.empty()) out["error"] = j.error;
  return out;
}

Wallet::Wallet(Config config, std::shared_ptr<DownlinkTransport> transport)
    : config_(std::move(config)),
      users_(config_.users),
      registry_((std::filesystem::create_directories(config_.data_dir), config_.data_dir / "models")) {
  store_ = std::make_unique<store::SeriesStore>(config_.data_dir / "store", config_.store);
  rules::EngineOptions eo;
  eo.async_dispatch = config_.async_notifications;
  engine_ = std::make_unique<rules::RuleEngine>(store_.get(), eo);
  for (const auto& s : config_.sinks) {
    if (s.type == "webhook")
      engine_->add_sink(std::make_shared<rules::WebhookSink>(s.url, s.webhook, s.name));
    else
      engine_->add_sink(std::make_shared<rules::LogSink>());
  }
  if (!transport) {
    if (config_.downlink.transport == "mqtt")
      transport = std::make_shared<MqttTransport>(config_.downlink.mqtt_url, config_.downlink.app_id);
    else
      transport = std::make_shared<QueueTransport>();
  }
  DownlinkOptions dopt;
  dopt.ack_timeout = config_.downlink.ack_timeout;
  dopt.worker_interval = config_.downlink.worker_interval;
  dopt.state_file = config_.data_dir / "downlinks.json";
  downlinks_ = std::make_unique<DownlinkManager>(std::move(transport), dopt);

  if (auto p = config_.data_dir / "sensors.json"; std::filesystem::exists(p)) {
    const auto doc = json::parse(read_file(p));
    for (const auto& e : doc.at("sensors")) {
      auto s = sensor_from_stored(e);
      sensors_[s.device_id] = std::move(s);
    }
  }
  if (auto p = config_.data_dir / "rules.json"; std::filesystem::exists(p)) {
    std::vector<rules::Rule> rs;
    const auto doc = json::parse(read_file(p));
    for (const auto& e : doc.at("rules")) {
      auto r = rules::rule_from_json(e);
      if (r.id.empty()) throw Error(Errc::corruption, "rules.json: rule without id");
      rs.push_back(std::move(r));
    }
    engine_->replace_rules(std::move(rs));
  }
  for (const auto& k : store_->keys()) seen_devices_.insert(k.device_id);
}

Wallet::~Wallet() {
  stop();
  wait_for_training();
}

void Wallet::start() {
  downlinks_->start();
  for (const auto& src : config_.ingest)
    listeners_.push_back(std::make_unique<ingest::Listener>(src, [this](const ingest::SensorReading& r) { ingest(r); }));
}

void Wallet::stop() {
  for (auto& l : listeners_) l->stop();
  listeners_.clear();
  downlinks_->stop();
}

std::vector<ingest::ListenerCounters> Wallet::listener_counters() const {
  std::vector<ingest::ListenerCounters> out;
  for (const auto& l : listeners_) out.push_back(l->counters());
  return out;
}

std::vector<std::uint16_t> Wallet::listener_ports() const {
  std::vector<std::uint16_t> out;
  for (const auto& l : listeners_) out.push_back(l->port());
  return out;
}

std::vector<rules::Notification> Wallet::ingest(const ingest::SensorReading& reading) {
  for (const auto& [key, point] : ingest::to_points(reading)) store_->append(key, point);
  bool fresh;
  {
    std::shared_lock lk(sensors_mutex_);
    fresh = !seen_devices_.contains(reading.device_id);
  }
  if (fresh) {
    std::unique_lock lk(sensors_mutex_);
    seen_devices_.insert(reading.device_id);
    if (!sensors_.contains(reading.device_id)) spdlog::info("readings from unregistered device {}", reading.device_id);
  }
  downlinks_->on_uplink(reading.device_id, now_utc());
  return engine_->on_reading(reading);
}

std::size_t Wallet::import_series(const std::string& device_id, const std::string& metric, std::string_view csv) {
  auto n = store_->import_csv({device_id, metric}, csv, metric);
  std::unique_lock lk(sensors_mutex_);
  seen_devices_.insert(device_id);
  return n;
}

void Wallet::save_sensors_locked() const {
  json doc{{"sensors", json::array()}};
  for (const auto& [id, s] : sensors_) doc["sensors"].push_back(to_json(s));
  write_file_atomic(config_.data_dir / "sensors.json", doc.dump(1));
}

SensorDescriptor Wallet::register_sensor(const User& by, SensorDescriptor s) {
  std::unique_lock lk(sensors_mutex_);
  if (sensors_.contains(s.device_id)) throw Error(Errc::conflict, s.device_id);
  s.registered_by = by.id;
  s.created_at = now_utc();
  sensors_[s.device_id] = s;
  save_sensors_locked();
  return s;
}

std::vector<SensorDescriptor> Wallet::sensors() const {
  std::shared_lock lk(sensors_mutex_);
  std::vector<SensorDescriptor> out;
  for (const auto& [id, s] : sensors_) out.push_back(s);
  return out;
}

std::optional<SensorDescriptor> Wallet::sensor(const std::string& device_id) const {
  std::shared_lock lk(sensors_mutex_);
  auto it = sensors_.find(device_id);
  if (it == sensors_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> Wallet::unregistered_devices() const {
  std::shared_lock lk(sensors_mutex_);
  std::vector<std::string> out;
  for (const auto& d : seen_devices_)
    if (!sensors_.contains(d)) out.push_back(d);
  return out;
}

bool Wallet::known_device(const std::string& device_id) const {
  std::shared_lock lk(sensors_mutex_);
  return sensors_.contains(device_id) || seen_devices_.contains(device_id);
}

ReadingPage Wallet::readings(const std::string& device_id, const std::string& metric, Timestamp from, Timestamp to,
                             std::size_t limit, const std::optional<std::string>& token) const {
  if (!known_device(device_id)) throw Error(Errc::not_found, device_id);
  if (!valid_metric_name(metric)) throw Error(Errc::validation_error, "metric");
  if (limit == 0 || limit > 10000) throw Error(Errc::validation_error, "limit");
  if (from > to) throw Error(Errc::invalid_range, "from > to");
  Timestamp start = from;
  if (token) {
    start = decode_token(*token);
    if (start < from || start > to) throw Error(Errc::validation_error, "page_token");
  }
  ReadingPage page;
  page.points = store_->query({device_id, metric}, start, to);
  if (page.points.size() > limit) {
    page.next_token = encode_token(page.points[limit].timestamp);
    page.points.resize(limit);
  }
  return page;
}

DownlinkCommand Wallet::enqueue_downlink(const std::string& device_id, const json& body) {
  if (!sensor(device_id)) throw Error(Errc::not_found, device_id);
  if (!body.is_object()) throw Error(Errc::validation_error, "body");
  std::optional<DownlinkKind> kind;
  if (body.contains("kind")) {
    if (!body["kind"].is_string()) throw Error(Errc::validation_error, "kind");
    kind = parse_downlink_kind(body["kind"].get<std::string>());
  }
  int port = 1;
  if (body.contains("port")) {
    if (!body["port"].is_number_integer()) throw Error(Errc::validation_error, "port");
    port = body["port"].get<int>();
  }
  auto integer = [&](const char* key) {
    if (!body.contains(key) || !body[key].is_number_integer()) throw Error(Errc::validation_error, key);
    return body[key].get<std::int64_t>();
  };

  Bytes payload;
  if (body.contains("payload")) {
    if (!body["payload"].is_string()) throw Error(Errc::validation_error, "payload");
    try {
      payload = base64_decode(body["payload"].get<std::string>());
    } catch (const Error&) {
      throw Error(Errc::validation_error, "payload");
    }
    if (payload.size() > kMaxDownlinkPayload)
      throw Error(Errc::payload_too_large, std::to_string(payload.size()) + " bytes");
    auto implied = classify_payload(payload);
    try {
      if (implied == DownlinkKind::set_wakeup_period) decode_set_wakeup_period(payload);
      if (implied == DownlinkKind::time_sync) decode_time_sync(payload);
    } catch (const Error&) {
      implied = DownlinkKind::raw;
    }
    if (kind && *kind != implied) throw Error(Errc::validation_error, "kind does not match payload");
    kind = implied;
  } else {
    if (!kind) throw Error(Errc::validation_error, "kind");
    switch (*kind) {
      case DownlinkKind::set_wakeup_period: {
        auto m = integer("period_minutes");
        if (m < 1 || m > 0xFFFF) throw Error(Errc::validation_error, "period_minutes");
        payload = encode_set_wakeup_period(std::chrono::minutes(m));
        break;
      }
      case DownlinkKind::time_sync: {
        auto s = integer("offset_seconds");
        if (s < INT32_MIN || s > INT32_MAX) throw Error(Errc::validation_error, "offset_seconds");
        payload = encode_time_sync(std::chrono::seconds(s));
        break;
      }
      case DownlinkKind::raw: throw Error(Errc::validation_error, "payload");
    }
  }
  return downlinks_->enqueue(device_id, port, std::move(payload), *kind, now_utc());
}

std::vector<features::FeatureRow> Wallet::feature_rows(const std::string& device_id, Timestamp from, Timestamp to,
                                                       bool with_target) const {
  if (!known_device(device_id)) throw Error(Errc::not_found, device_id);
  if (from > to) throw Error(Errc::invalid_range, "from > to");
  const auto tol = config_.forecast.tolerance;
  const Timestamp lo = from == Timestamp::min() ? from : from - tol;
  const Timestamp hi = to == Timestamp::max() ? to : to + tol;
  std::map<std::string, std::vector<SeriesPoint>, std::less<>> sources;
  auto pull = [&](const std::string& dev, std::string_view metric) {
    sources[std::string(metric)] = store_->query({dev, std::string(metric)}, lo, hi);
  };
  pull(device_id, "rssi");
  pull(device_id, "snr");
  pull(config_.forecast.weather_device, "air_temperature");
  pull(config_.forecast.weather_device, "air_humidity");
  pull(config_.forecast.pressure_device, "air_pressure");
  if (with_target) {
    pull(device_id, features::kTargetName);
  } else {
    auto& t = sources[std::string(features::kTargetName)];
    for (const auto& p : sources["rssi"]) t.push_back({p.timestamp, 0});
  }
  auto rows = features::align(sources, config_.training.cadence, tol);
  std::erase_if(rows, [&](const features::FeatureRow& r) { return r.timestamp < from || r.timestamp >= to; });
  return rows;
}

std::vector<forecast::ForecastResult> Wallet::forecast(const std::string& device_id, int steps,
                                                         std::optional<Timestamp> now) const {
  if (steps < 1 || steps > config_.forecast.max_steps) throw Error(Errc::validation_error, "steps");
  if (!known_device(device_id)) throw Error(Errc::not_found, device_id);
  auto model = registry_.current();
  if (!model) throw Error(Errc::no_model);
  auto latest = store_->latest({device_id, "rssi"});
  if (!latest) throw Error(Errc::insufficient_history, "no signal readings");
  auto span = std::max<Duration>(config_.forecast.history,
                                 model->cadence * static_cast<std::int64_t>(model->warmup() + 2));
  auto rows = feature_rows(device_id, latest->timestamp - span, latest->timestamp + Duration{1}, false);
  return forecast::forecast_horizon(*model, rows, static_cast<std::size_t>(steps), now.value_or(now_utc()));
}

json Wallet::predictions(const std::string& device_id, Timestamp from, Timestamp to) const {
  auto model = registry_.current();
  if (!model) throw Error(Errc::no_model);
  auto rows = feature_rows(device_id, from, to, true);
  auto rp = forecast::predict_rows(*model, rows);
  json out{{"device_id", device_id}, {"model_version", model->version}, {"rows", json::array()}};
  for (std::size_t i = 0; i < rp.index.size(); ++i) {
    const auto& r = rows[rp.index[i]];
    out["rows"].push_back({{"timestamp", format_rfc3339(r.timestamp)},
                           {"actual", r.target},
                           {"ffnn", rp.ffnn[i]},
                           {"lstm", rp.lstm[i]},
                           {"ensemble", forecast::ensemble(model->ensemble_weight, rp.ffnn[i], rp.lstm[i])}});
  }
  return out;
}

forecast::TrainConfig Wallet::train_config(const TrainRequest& req) const {
  auto cfg = config_.training;
  if (req.seed) cfg.seed = *req.seed;
  if (req.ffnn_epochs) cfg.ffnn.epochs = *req.ffnn_epochs;
  if (req.lstm_epochs) cfg.lstm.epochs = *req.lstm_epochs;
  forecast::validate(cfg);
  return cfg;
}

std::string Wallet::train(const TrainRequest& req, const std::string& requested_by, forecast::ProgressFn progress) {
  auto cfg = train_config(req);
  const std::string device = req.device_id.empty() ? config_.forecast.device_id : req.device_id;
  auto rows = feature_rows(device, req.from.value_or(Timestamp::min()), req.to.value_or(Timestamp::max()), true);
  spdlog::info("training on {} rows of {} (seed {})", rows.size(), device, cfg.seed);
  auto result = forecast::train(rows, cfg, progress);
  json info{{"device_id", device},
            {"rows", rows.size()},
            {"requested_by", requested_by},
            {"training", to_json(cfg)}};
  if (!rows.empty()) {
    info["from"] = format_rfc3339(rows.front().timestamp);
    info["to"] = format_rfc3339(rows.back().timestamp);
  }
  auto version = registry_.publish(result, info);
  spdlog::info("published {} (ffnn MAE {:.4f}, lstm MAE {:.4f})", version, result.test.ffnn_mae, result.test.lstm_mae);
  return version;
}

TrainJob Wallet::start_training(const TrainRequest& req, const User& by) {
  auto cfg = train_config(req);
  const std::string device = req.device_id.empty() ? config_.forecast.device_id : req.device_id;
  if (!known_device(device)) throw Error(Errc::not_found, device);
  std::lock_guard lk(jobs_mutex_);
  if (job_running_) throw Error(Errc::conflict, "a training job is already running");
  if (job_thread_.joinable()) job_thread_.join();
  TrainJob job;
  job.id = next_job_++;
  job.device_id = device;
  job.requested_by = by.id;
  job.started_at = now_utc();
  job.epochs_total = cfg.ffnn.epochs + cfg.lstm.epochs;
  jobs_[job.id] = job;
  job_running_ = true;
  job_thread_ = std::thread([this, req, id = job.id, user = by.id] {
    std::string version, error;
    try {
      version = train(req, user, [&](std::string_view, const forecast::EpochRecord&) {
        std::lock_guard jl(jobs_mutex_);
        ++jobs_[id].epochs_done;
      });
    } catch (const std::exception& e) {
      error = e.what();
      spdlog::error("training job {} failed: {}", id, error);
    }
    std::lock_guard jl(jobs_mutex_);
    auto& j = jobs_[id];
    j.state = error.empty() ? JobState::succeeded : JobState::failed;
    j.version = version;
    j.error = error;
    j.finished_at = now_utc();
    job_running_ = false;
  });
  return job;
}

std::optional<TrainJob> Wallet::training_job(std::uint64_t id) const {
  std::lock_guard lk(jobs_mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

void Wallet::wait_for_training() {
  std::thread t;
  {
    std::lock_guard lk(jobs_mutex_);
    t = std::move(job_thread_);
  }
  if (t.joinable()) t.join();
}

json Wallet::models() const {
  json out{{"current", nullptr}, {"versions", json::array()}};
  if (auto v = registry_.current_version()) out["current"] = *v;
  for (const auto& v : registry_.versions()) out["versions"].push_back({{"version", v}, {"metrics", registry_.metrics(v)}});
  return out;
}

void Wallet::save_rules() const {
  json doc{{"rules", json::array()}};
  for (const auto& r : engine_->rules()) doc["rules"].push_back(rules::to_json(r));
  write_file_atomic(config_.data_dir / "rules.json", doc.dump(1));
}

rules::Rule Wallet::create_rule(const User& by, const json& body) {
  auto rule = rules::rule_from_json(body);
  if (!known_device(rule.device_id)) throw Error(Errc::not_found, rule.device_id);
  rule.id.clear();
  rule.owner = by.id;
  std::lock_guard lk(rules_file_mutex_);
  rule = engine_->add_rule(rule);
  save_rules();
  return rule;
}

std::vector<rules::Rule> Wallet::list_rules(const User& by) const {
  auto all = engine_->rules();
  if (by.role != Role::admin) std::erase_if(all, [&](const rules::Rule& r) { return r.owner != by.id; });
  return all;
}

const rules::Rule& Wallet::owned_rule(const User& by, const std::string& id, rules::Rule& out) const {
  auto r = engine_->rule(id);
  if (!r) throw Error(Errc::not_found, id);
  if (by.role != Role::admin && r->owner != by.id) throw Error(Errc::forbidden, "rule " + id);
  out = *r;
  return out;
}

void Wallet::delete_rule(const User& by, const std::string& id) {
  std::lock_guard lk(rules_file_mutex_);
  rules::Rule r;
  owned_rule(by, id, r);
  engine_->remove_rule(id);
  save_rules();
}

rules::Rule Wallet::set_rule_enabled(const User& by, const std::string& id, bool enabled) {
  std::lock_guard lk(rules_file_mutex_);
  rules::Rule r;
  owned_rule(by, id, r);
  engine_->set_enabled(id, enabled);
  save_rules();
  r.enabled = enabled;
  return r;
}

std::vector<rules::Notification> Wallet::notifications(const User& by, rules::NotificationQuery q) const {
  if (by.role == Role::admin) return engine_->notifications(q);
  std::set<std::string> own;
  for (const auto& r : list_rules(by)) own.insert(r.id);
  auto limit = q.limit;
  q.limit = SIZE_MAX;
  auto all = engine_->notifications(q);
  std::vector<rules::Notification> out;
  for (auto& n : all) {
    if (out.size() >= limit) break;
    if (own.contains(n.rule_id)) out.push_back(std::move(n));
  }
  return out;
}

json Wallet::meta() const {
  json metrics = json::array();
  auto unit = [](std::string_view name) { return kUnits.find(name)->second; };
  for (auto name : features::kFeatureNames) metrics.push_back({{"name", std::string(name)}, {"unit", unit(name)}});
  metrics.push_back(
      {{"name", std::string(features::kTargetName)}, {"unit", unit(features::kTargetName)}, {"target", true}});
  return {{"name", "wallet"},
          {"cadence_seconds", std::chrono::duration_cast<std::chrono::seconds>(config_.training.cadence).count()},
          {"metrics", metrics},
          {"roles", {"viewer", "controller", "admin"}},
          {"forecast", {{"device_id", config_.forecast.device_id}, {"max_steps", config_.forecast.max_steps}}},
          {"downlink",
           {{"kinds", {"set_wakeup_period", "time_sync", "raw"}},
            {"max_payload_bytes", kMaxDownlinkPayload},
            {"transport", config_.downlink.transport}}}};
}

}  // namespace wallet::api
