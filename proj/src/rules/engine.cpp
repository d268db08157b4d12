#include "wallet/rules/engine.hpp"

#include <algorithm>
#include <future>
#include <sstream>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "wallet/error.hpp"
#include "wallet/store/series_store.hpp"

namespace wallet::rules {

namespace {

SinkStatus deliver_to(Sink& sink, const Notification& n) {
  try {
    sink.deliver(n);
    return {DeliveryState::delivered, {}};
  } catch (const std::exception& e) {
    spdlog::warn("sink {} failed for notification {}: {}", sink.name(), n.id, e.what());
    return {DeliveryState::failed, e.what()};
  } catch (...) {
    return {DeliveryState::failed, "unknown error"};
  }
}

}  // namespace

std::string_view to_string(DeliveryState s) {
  switch (s) {
    case DeliveryState::pending: return "pending";
    case DeliveryState::delivered: return "delivered";
    case DeliveryState::failed: return "failed";
  }
  return "?";
}

nlohmann::json webhook_payload(const Notification& n) {
  return {{"rule_id", n.rule_id},       {"device_id", n.device_id}, {"metric", n.metric},
          {"value", n.value},           {"threshold", n.threshold}, {"fired_at", format_rfc3339(n.fired_at)}};
}

nlohmann::json to_json(const Notification& n) {
  auto j = webhook_payload(n);
  j["id"] = n.id;
  j["reading_id"] = n.reading_id;
  j["message"] = n.message;
  auto& d = j["delivery"] = nlohmann::json::object();
  for (const auto& [sink, st] : n.delivery) {
    d[sink] = {{"state", to_string(st.state)}};
    if (!st.error.empty()) d[sink]["error"] = st.error;
  }
  return j;
}

void LogSink::deliver(const Notification& n) {
  spdlog::info("notification {} rule={} device={} {}", n.id, n.rule_id, n.device_id, n.message);
}

WebhookSink::WebhookSink(std::string url, WebhookOptions options, std::string name)
    : url_(std::move(url)), options_(options), name_(std::move(name)) {
  constexpr std::string_view scheme = "http://";
  if (!url_.starts_with(scheme) || url_.size() == scheme.size()) throw Error(Errc::validation_error, "webhook url");
  auto slash = url_.find('/', scheme.size());
  origin_ = url_.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : url_.substr(slash);
  if (options_.retries < 0) throw Error(Errc::validation_error, "webhook retries");
}

void WebhookSink::deliver(const Notification& n) {
  const std::string body = webhook_payload(n).dump();
  auto backoff = options_.initial_backoff;
  std::string last_error;
  for (int attempt = 0; attempt <= options_.retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    httplib::Client client(origin_);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    auto res = client.Post(path_, body, "application/json");
    if (res && res->status >= 200 && res->status < 300) return;
    last_error = res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error());
  }
  throw Error(Errc::sink_unavailable, url_ + ": " + last_error);
}

RuleEngine::RuleEngine(const store::SeriesStore* store, EngineOptions options)
    : store_(store), options_(options), table_(std::make_shared<const std::vector<Rule>>()) {
  if (options_.async_dispatch)
    for (unsigned i = 0; i < std::max(1u, options_.dispatch_threads); ++i) workers_.emplace_back([this] { worker(); });
}

RuleEngine::~RuleEngine() {
  {
    std::lock_guard lk(queue_mutex_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  for (auto& t : workers_) t.join();
}

void RuleEngine::add_sink(std::shared_ptr<Sink> sink) {
  std::lock_guard lk(sinks_mutex_);
  sinks_.push_back(std::move(sink));
}

Rule RuleEngine::add_rule(Rule rule) {
  validate(rule);
  std::lock_guard lk(table_mutex_);
  auto next = std::make_shared<std::vector<Rule>>(*table_);
  if (rule.id.empty()) {
    do {
      rule.id = "r" + std::to_string(next_rule_++);
    } while (std::any_of(next->begin(), next->end(), [&](const Rule& r) { return r.id == rule.id; }));
  } else if (std::any_of(next->begin(), next->end(), [&](const Rule& r) { return r.id == rule.id; })) {
    throw Error(Errc::conflict, rule.id);
  }
  next->push_back(rule);
  table_ = std::move(next);
  return rule;
}

void RuleEngine::remove_rule(const std::string& id) {
  {
    std::lock_guard lk(table_mutex_);
    auto next = std::make_shared<std::vector<Rule>>(*table_);
    auto it = std::find_if(next->begin(), next->end(), [&](const Rule& r) { return r.id == id; });
    if (it == next->end()) throw Error(Errc::not_found, id);
    next->erase(it);
    table_ = std::move(next);
  }
  std::lock_guard lk(state_mutex_);
  state_.erase(id);
}

void RuleEngine::set_enabled(const std::string& id, bool enabled) {
  std::lock_guard lk(table_mutex_);
  auto next = std::make_shared<std::vector<Rule>>(*table_);
  auto it = std::find_if(next->begin(), next->end(), [&](const Rule& r) { return r.id == id; });
  if (it == next->end()) throw Error(Errc::not_found, id);
  it->enabled = enabled;
  table_ = std::move(next);
}

std::optional<Rule> RuleEngine::rule(const std::string& id) const {
  std::lock_guard lk(table_mutex_);
  for (const auto& r : *table_)
    if (r.id == id) return r;
  return std::nullopt;
}

std::vector<Rule> RuleEngine::rules() const {
  std::lock_guard lk(table_mutex_);
  return *table_;
}

void RuleEngine::replace_rules(std::vector<Rule> rules) {
  for (const auto& r : rules) {
    validate(r);
    if (r.id.empty()) throw Error(Errc::validation_error, "id");
  }
  std::lock_guard lk(table_mutex_);
  table_ = std::make_shared<const std::vector<Rule>>(std::move(rules));
}

std::mutex& RuleEngine::device_mutex(const std::string& device) {
  std::lock_guard lk(devices_mutex_);
  auto& m = device_mutexes_[device];
  if (!m) m = std::make_unique<std::mutex>();
  return *m;
}

std::vector<Notification> RuleEngine::on_reading(const ingest::SensorReading& reading) {
  std::shared_ptr<const std::vector<Rule>> table;
  {
    std::lock_guard lk(table_mutex_);
    table = table_;
  }
  std::map<std::string, double> values = reading.metrics;
  if (reading.link) {
    values.emplace("rssi", reading.link->rssi);
    values.emplace("snr", reading.link->snr);
  }
  const std::string reading_id = reading.id();

  std::vector<Notification> fired;
  {
    std::lock_guard device_lock(device_mutex(reading.device_id));
    for (const auto& rule : *table) {
      if (!rule.enabled || rule.device_id != reading.device_id) continue;
      auto v = values.find(rule.metric);
      if (v == values.end()) continue;

      {
        std::lock_guard lk(state_mutex_);
        auto& st = state_[rule.id];
        if (!st.seen.insert(reading_id).second) continue;
        st.seen_order.push_back(reading_id);
        if (st.seen_order.size() > options_.dedup_window) {
          st.seen.erase(st.seen_order.front());
          st.seen_order.pop_front();
        }
        if (st.last_fired && rule.cooldown > Duration::zero() && reading.timestamp - *st.last_fired < rule.cooldown)
          continue;
      }

      double observed = v->second;
      bool fire = false;
      if (rule.kind == RuleKind::instant) {
        fire = eval_instant(rule, observed);
      } else {
        if (!store_) throw Error(Errc::store_closed, "rule engine has no store");
        auto d = eval_cumulative(rule, *store_, reading.timestamp);
        fire = d.fire;
        if (d.value) observed = *d.value;
      }
      if (!fire) continue;
      {
        std::lock_guard lk(state_mutex_);
        state_[rule.id].last_fired = reading.timestamp;
      }
      Notification n;
      n.rule_id = rule.id;
      n.device_id = reading.device_id;
      n.metric = rule.metric;
      n.reading_id = reading_id;
      n.fired_at = reading.timestamp;
      n.value = observed;
      n.threshold = rule.threshold;
      std::ostringstream msg;
      msg << describe(rule) << " on " << reading.device_id << ": observed " << observed;
      n.message = msg.str();
      fired.push_back(std::move(n));
    }
  }
  for (auto& n : fired) dispatch(n);
  return fired;
}

void RuleEngine::dispatch(Notification& n) {
  std::vector<std::shared_ptr<Sink>> sinks;
  {
    std::lock_guard lk(sinks_mutex_);
    sinks = sinks_;
  }
  for (const auto& s : sinks) n.delivery[s->name()] = {};
  {
    std::lock_guard lk(history_mutex_);
    n.id = next_notification_++;
    history_.push_back(n);
    while (history_.size() > options_.history_limit) history_.pop_front();
  }
  if (sinks.empty()) return;

  if (options_.async_dispatch) {
    {
      std::lock_guard lk(queue_mutex_);
      for (auto& s : sinks) queue_.push_back({n.id, s});
    }
    queue_cv_.notify_all();
    return;
  }

  if (sinks.size() == 1) {
    n.delivery[sinks[0]->name()] = deliver_to(*sinks[0], n);
  } else {
    std::vector<std::future<SinkStatus>> results;
    for (auto& s : sinks) results.push_back(std::async(std::launch::async, [&n, s] { return deliver_to(*s, n); }));
    for (std::size_t i = 0; i < sinks.size(); ++i) n.delivery[sinks[i]->name()] = results[i].get();
  }
  for (const auto& [name, st] : n.delivery) record_status(n.id, name, st);
}

void RuleEngine::record_status(std::uint64_t id, const std::string& sink, const SinkStatus& status) {
  std::lock_guard lk(history_mutex_);
  auto it = std::lower_bound(history_.begin(), history_.end(), id,
                             [](const Notification& n, std::uint64_t v) { return n.id < v; });
  if (it != history_.end() && it->id == id) it->delivery[sink] = status;
}

void RuleEngine::worker() {
  for (;;) {
    Job job;
    {
      std::unique_lock lk(queue_mutex_);
      queue_cv_.wait(lk, [&] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      job = std::move(queue_.front());
      queue_.pop_front();
      ++in_flight_;
    }
    std::optional<Notification> n;
    {
      std::lock_guard lk(history_mutex_);
      auto it = std::lower_bound(history_.begin(), history_.end(), job.notification,
                                 [](const Notification& x, std::uint64_t v) { return x.id < v; });
      if (it != history_.end() && it->id == job.notification) n = *it;
    }
    if (n) record_status(n->id, job.sink->name(), deliver_to(*job.sink, *n));
    {
      std::lock_guard lk(queue_mutex_);
      --in_flight_;
    }
    idle_cv_.notify_all();
  }
}

void RuleEngine::flush() {
  std::unique_lock lk(queue_mutex_);
  idle_cv_.wait(lk, [&] { return queue_.empty() && in_flight_ == 0; });
}

std::vector<Notification> RuleEngine::notifications(const NotificationQuery& q) const {
  std::vector<Notification> out;
  std::lock_guard lk(history_mutex_);
  for (auto it = history_.rbegin(); it != history_.rend() && out.size() < q.limit; ++it) {
    if (q.after_id && it->id <= *q.after_id) break;
    if (q.device_id && it->device_id != *q.device_id) continue;
    if (q.rule_id && it->rule_id != *q.rule_id) continue;
    out.push_back(*it);
  }
  return out;
}

}  // namespace wallet::rules
