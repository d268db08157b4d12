#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "wallet/ingest/uplink.hpp"
#include "wallet/rules/rule.hpp"

namespace wallet::rules {

enum class DeliveryState { pending, delivered, failed };
std::string_view to_string(DeliveryState s);

struct SinkStatus {
  DeliveryState state = DeliveryState::pending;
  std::string error;

  bool operator==(const SinkStatus&) const = default;
};

struct Notification {
  std::uint64_t id = 0;
  std::string rule_id;
  std::string device_id;
  std::string metric;
  std::string reading_id;
  Timestamp fired_at;  // timestamp of the triggering reading
  double value = 0;
  double threshold = 0;
  std::string message;
  std::map<std::string, SinkStatus> delivery;
};

nlohmann::json to_json(const Notification& n);
/// The webhook body: rule_id, device_id, metric, value, threshold, fired_at.
nlohmann::json webhook_payload(const Notification& n);

/// A sink throws to report a failed delivery; it is called from the engine's
/// dispatch threads and must be thread-safe.
class Sink {
 public:
  virtual ~Sink() = default;
  virtual std::string name() const = 0;
  virtual void deliver(const Notification& n) = 0;
};

class LogSink : public Sink {
 public:
  std::string name() const override { return "log"; }
  void deliver(const Notification& n) override;
};

struct WebhookOptions {
  int retries = 3;
  Duration initial_backoff = std::chrono::seconds(1);
  Duration timeout = std::chrono::seconds(5);
};

/// POSTs the webhook payload as JSON. Any non-2xx answer or transport error
/// counts as a failed attempt; attempts are 1 + retries with the backoff
/// doubling after each failure.
class WebhookSink : public Sink {
 public:
  explicit WebhookSink(std::string url, WebhookOptions options = {}, std::string name = "webhook");

  std::string name() const override { return name_; }
  void deliver(const Notification& n) override;

  const std::string& url() const { return url_; }

 private:
  std::string url_;
  std::string origin_;
  std::string path_;
  WebhookOptions options_;
  std::string name_;
};

struct EngineOptions {
  /// Deliver on background threads; on_reading then returns notifications
  /// whose sink statuses are still pending.
  bool async_dispatch = false;
  unsigned dispatch_threads = 4;
  std::size_t history_limit = 10000;
  /// Reading ids remembered per rule for exactly-once evaluation.
  std::size_t dedup_window = 65536;
};

struct NotificationQuery {
  std::optional<std::string> device_id;
  std::optional<std::string> rule_id;
  std::optional<std::uint64_t> after_id;
  std::size_t limit = 100;
};

class RuleEngine {
 public:
  /// The store is needed only by cumulative rules; it may be null otherwise.
  explicit RuleEngine(const store::SeriesStore* store, EngineOptions options = {});
  ~RuleEngine();

  RuleEngine(const RuleEngine&) = delete;
  RuleEngine& operator=(const RuleEngine&) = delete;

  void add_sink(std::shared_ptr<Sink> sink);

  /// Validates; assigns `r<N>` when the id is empty. Conflict on a duplicate id.
  Rule add_rule(Rule rule);
  /// NotFound when absent.
  void remove_rule(const std::string& id);
  void set_enabled(const std::string& id, bool enabled);
  std::optional<Rule> rule(const std::string& id) const;
  std::vector<Rule> rules() const;
  void replace_rules(std::vector<Rule> rules);

  /// The reading must already be stored. Evaluates every enabled rule bound to
  /// the reading's device and one of its metrics, link metrics included.
  std::vector<Notification> on_reading(const ingest::SensorReading& reading);

  /// Most recent first.
  std::vector<Notification> notifications(const NotificationQuery& q = {}) const;
  /// Blocks until every queued delivery has finished.
  void flush();

 private:
  struct RuleState {
    std::optional<Timestamp> last_fired;
    std::set<std::string> seen;
    std::deque<std::string> seen_order;
  };
  struct Job {
    std::uint64_t notification;
    std::shared_ptr<Sink> sink;
  };

  void dispatch(Notification& n);
  void record_status(std::uint64_t id, const std::string& sink, const SinkStatus& status);
  void worker();
  std::mutex& device_mutex(const std::string& device);

  const store::SeriesStore* store_;
  EngineOptions options_;

  mutable std::mutex table_mutex_;
  std::shared_ptr<const std::vector<Rule>> table_;
  std::uint64_t next_rule_ = 1;

  std::mutex devices_mutex_;
  std::map<std::string, std::unique_ptr<std::mutex>> device_mutexes_;

  std::mutex state_mutex_;
  std::map<std::string, RuleState> state_;

  std::mutex sinks_mutex_;
  std::vector<std::shared_ptr<Sink>> sinks_;

  mutable std::mutex history_mutex_;
  std::deque<Notification> history_;
  std::uint64_t next_notification_ = 1;

  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::condition_variable idle_cv_;
  std::deque<Job> queue_;
  std::size_t in_flight_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

}  // namespace wallet::rules
