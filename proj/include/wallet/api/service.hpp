#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "wallet/api/auth.hpp"
#include "wallet/api/config.hpp"
#include "wallet/api/downlinks.hpp"
#include "wallet/forecast/registry.hpp"
#include "wallet/ingest/listener.hpp"
#include "wallet/rules/engine.hpp"
#include "wallet/store/series_store.hpp"

namespace wallet::api {

struct MetricInfo {
  std::string name;
  std::string unit;

  bool operator==(const MetricInfo&) const = default;
};

struct SensorDescriptor {
  std::string device_id;
  std::string type;
  std::vector<MetricInfo> metrics;
  std::string location;
  std::string registered_by;
  Timestamp created_at;

  bool operator==(const SensorDescriptor&) const = default;
};

nlohmann::json to_json(const SensorDescriptor& s);
/// Client fields only (`device_id`, `type`, `metrics`, `location`); throws
/// ValidationError.
SensorDescriptor sensor_from_json(const nlohmann::json& j);

struct ReadingPage {
  std::vector<SeriesPoint> points;
  std::optional<std::string> next_token;
};

struct TrainRequest {
  std::string device_id;  // empty: the configured forecast device
  std::optional<Timestamp> from, to;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> ffnn_epochs, lstm_epochs;
};

TrainRequest train_request_from_json(const nlohmann::json& j);

enum class JobState { running, succeeded, failed };
std::string_view to_string(JobState s);

struct TrainJob {
  std::uint64_t id = 0;
  JobState state = JobState::running;
  std::string device_id;
  std::string requested_by;
  Timestamp started_at;
  std::optional<Timestamp> finished_at;
  std::string version;
  std::string error;
  std::size_t epochs_done = 0;
  std::size_t epochs_total = 0;
};

nlohmann::json to_json(const TrainJob& j);

/// The wallet's application layer: store, rule engine, model registry,
/// sensor table and downlink queue behind one object. Methods take the
/// calling user where ownership matters; role checks belong to the HTTP
/// layer's endpoint table.
class Wallet {
 public:
  /// `transport` overrides the configured downlink transport.
  explicit Wallet(Config config, std::shared_ptr<DownlinkTransport> transport = nullptr);
  ~Wallet();

  Wallet(const Wallet&) = delete;
  Wallet& operator=(const Wallet&) = delete;

  /// Starts the configured ingest listeners and the downlink worker.
  void start();
  void stop();

  // ingestion
  /// Stores the reading, evaluates rules and acknowledges sent downlinks.
  std::vector<rules::Notification> ingest(const ingest::SensorReading& reading);
  /// Imports a `timestamp,<metric>` CSV (e.g. the pressure feed).
  std::size_t import_series(const std::string& device_id, const std::string& metric, std::string_view csv);
  std::vector<ingest::ListenerCounters> listener_counters() const;
  /// Bound ports of TCP listeners, in configuration order (0 for others).
  std::vector<std::uint16_t> listener_ports() const;

  // sensors
  /// Conflict on a duplicate device_id.
  SensorDescriptor register_sensor(const User& by, SensorDescriptor s);
  std::vector<SensorDescriptor> sensors() const;
  std::optional<SensorDescriptor> sensor(const std::string& device_id) const;
  /// Devices with stored readings but no descriptor.
  std::vector<std::string> unregistered_devices() const;
  /// Registered or has stored readings.
  bool known_device(const std::string& device_id) const;

  /// Ascending page of [from, to); `token` continues a previous page.
  /// Throws NotFound or InvalidRange.
  ReadingPage readings(const std::string& device_id, const std::string& metric, Timestamp from, Timestamp to,
                       std::size_t limit, const std::optional<std::string>& token = std::nullopt) const;

  // downlink
  /// Body: `kind` plus `period_minutes` / `offset_seconds`, or a base64
  /// `payload` (optionally with `port`). Throws NotFound (unregistered
  /// device), PayloadTooLarge, ValidationError, UnknownKind.
  DownlinkCommand enqueue_downlink(const std::string& device_id, const nlohmann::json& body);
  DownlinkManager& downlinks() { return *downlinks_; }

  // forecasting
  /// Aligned rows of the device's signal series joined with the weather and
  /// pressure series. Without `with_target` the soil moisture series is not
  /// required and the targets are zero.
  std::vector<features::FeatureRow> feature_rows(const std::string& device_id, Timestamp from, Timestamp to,
                                                 bool with_target) const;
  /// Throws NoModel, InsufficientHistory, NotFound, ValidationError.
  /// `now` (default: wall clock) only decides the stale flag.
  std::vector<forecast::ForecastResult> forecast(const std::string& device_id, int steps,
                                                 std::optional<Timestamp> now = std::nullopt) const;
  /// Actual and per-model predictions for every stored row of [from, to).
  nlohmann::json predictions(const std::string& device_id, Timestamp from, Timestamp to) const;

  /// Synchronous training and publication; returns the new version.
  std::string train(const TrainRequest& req, const std::string& requested_by = "cli",
                    forecast::ProgressFn progress = {});
  /// Background training; Conflict while another job is running.
  TrainJob start_training(const TrainRequest& req, const User& by);
  std::optional<TrainJob> training_job(std::uint64_t id) const;
  void wait_for_training();
  forecast::TrainConfig train_config(const TrainRequest& req) const;

  forecast::ModelRegistry& registry() { return registry_; }
  nlohmann::json models() const;

  // rules
  rules::Rule create_rule(const User& by, const nlohmann::json& body);
  std::vector<rules::Rule> list_rules(const User& by) const;
  /// Owner or admin; Forbidden otherwise, NotFound when absent.
  void delete_rule(const User& by, const std::string& id);
  rules::Rule set_rule_enabled(const User& by, const std::string& id, bool enabled);
  std::vector<rules::Notification> notifications(const User& by, rules::NotificationQuery q) const;
  rules::RuleEngine& rule_engine() { return *engine_; }

  store::SeriesStore& store() { return *store_; }
  const Config& config() const { return config_; }
  const UserDirectory& users() const { return users_; }
  nlohmann::json meta() const;

 private:
  void save_sensors_locked() const;
  void save_rules() const;
  const rules::Rule& owned_rule(const User& by, const std::string& id, rules::Rule& out) const;

  Config config_;
  UserDirectory users_;
  std::unique_ptr<store::SeriesStore> store_;
  std::unique_ptr<rules::RuleEngine> engine_;
  forecast::ModelRegistry registry_;
  std::unique_ptr<DownlinkManager> downlinks_;

  mutable std::shared_mutex sensors_mutex_;
  std::map<std::string, SensorDescriptor> sensors_;
  std::set<std::string> seen_devices_;

  std::mutex rules_file_mutex_;

  mutable std::mutex jobs_mutex_;
  std::map<std::uint64_t, TrainJob> jobs_;
  std::uint64_t next_job_ = 1;
  std::thread job_thread_;
  bool job_running_ = false;

  std::vector<std::unique_ptr<ingest::Listener>> listeners_;
};

}  // namespace wallet::api
