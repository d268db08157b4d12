#include "wallet/api/downlinks.hpp"

#include <spdlog/spdlog.h>

#include "wallet/base64.hpp"
#include "wallet/error.hpp"
#include "wallet/fileio.hpp"
#include "wallet/mqtt/client.hpp"
#include "wallet/net/socket.hpp"

namespace wallet::api {

namespace {

std::optional<Timestamp> opt_time(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return parse_rfc3339(j[key].get<std::string>());
}

}  // namespace

std::string_view to_string(DownlinkState s) {
  switch (s) {
    case DownlinkState::pending: return "pending";
    case DownlinkState::sent: return "sent";
    case DownlinkState::acked: return "acked";
    case DownlinkState::failed: return "failed";
  }
  return "?";
}

DownlinkState parse_downlink_state(std::string_view s) {
  if (s == "pending") return DownlinkState::pending;
  if (s == "sent") return DownlinkState::sent;
  if (s == "acked") return DownlinkState::acked;
  if (s == "failed") return DownlinkState::failed;
  throw Error(Errc::validation_error, "state");
}

bool valid_transition(DownlinkState from, DownlinkState to) {
  return (from == DownlinkState::pending && to == DownlinkState::sent) ||
         (from == DownlinkState::sent && (to == DownlinkState::acked || to == DownlinkState::failed));
}

nlohmann::json to_json(const DownlinkCommand& c) {
  auto t = [](const std::optional<Timestamp>& ts) -> nlohmann::json {
    return ts ? nlohmann::json(format_rfc3339(*ts)) : nlohmann::json(nullptr);
  };
  return {{"id", c.id},
          {"device_id", c.device_id},
          {"port", c.port},
          {"payload", base64_encode(c.payload)},
          {"kind", to_string(c.kind)},
          {"state", to_string(c.state)},
          {"created_at", format_rfc3339(c.created_at)},
          {"sent_at", t(c.sent_at)},
          {"acked_at", t(c.acked_at)},
          {"failed_at", t(c.failed_at)},
          {"send_attempts", c.send_attempts},
          {"error", c.error}};
}

DownlinkCommand downlink_from_json(const nlohmann::json& j) {
  DownlinkCommand c;
  c.id = j.at("id").get<std::uint64_t>();
  c.device_id = j.at("device_id").get<std::string>();
  c.port = j.at("port").get<int>();
  c.payload = base64_decode(j.at("payload").get<std::string>());
  c.kind = parse_downlink_kind(j.at("kind").get<std::string>());
  c.state = parse_downlink_state(j.at("state").get<std::string>());
  c.created_at = parse_rfc3339(j.at("created_at").get<std::string>());
  c.sent_at = opt_time(j, "sent_at");
  c.acked_at = opt_time(j, "acked_at");
  c.failed_at = opt_time(j, "failed_at");
  c.send_attempts = j.value("send_attempts", 0);
  c.error = j.value("error", "");
  return c;
}

void QueueTransport::send(const DownlinkCommand& c) {
  std::lock_guard lk(mutex_);
  queue_.push_back(c);
}

std::vector<DownlinkCommand> QueueTransport::take(const std::string& device_id) {
  std::lock_guard lk(mutex_);
  std::vector<DownlinkCommand> out;
  std::erase_if(queue_, [&](const DownlinkCommand& c) {
    if (c.device_id != device_id) return false;
    out.push_back(c);
    return true;
  });
  return out;
}

std::size_t QueueTransport::size() const {
  std::lock_guard lk(mutex_);
  return queue_.size();
}

MqttTransport::MqttTransport(std::string url, std::string app_id, std::string client_id)
    : app_id_(std::move(app_id)), client_id_(std::move(client_id)) {
  auto ep = net::parse_endpoint(url, 1883);
  host_ = ep.host;
  port_ = ep.port;
}

MqttTransport::~MqttTransport() = default;

std::string MqttTransport::topic(std::string_view app_id, std::string_view device_id) {
  return std::string(app_id) + "/devices/" + std::string(device_id) + "/down";
}

std::string MqttTransport::message(const DownlinkCommand& c) {
  return nlohmann::json{{"port", c.port}, {"confirmed", false}, {"payload_raw", base64_encode(c.payload)}}.dump();
}

void MqttTransport::send(const DownlinkCommand& c) {
  std::lock_guard lk(mutex_);
  try {
    if (!client_) client_ = std::make_unique<mqtt::Client>(host_, port_, client_id_);
    client_->publish(topic(app_id_, c.device_id), message(c));
  } catch (...) {
    client_.reset();
    throw;
  }
}

DownlinkManager::DownlinkManager(std::shared_ptr<DownlinkTransport> transport, DownlinkOptions options)
    : transport_(std::move(transport)), options_(std::move(options)) {
  if (!options_.state_file.empty() && std::filesystem::exists(options_.state_file)) {
    auto doc = nlohmann::json::parse(read_file(options_.state_file));
    for (const auto& e : doc.at("commands")) {
      auto c = downlink_from_json(e);
      next_id_ = std::max(next_id_, c.id + 1);
      commands_[c.id] = std::move(c);
    }
  }
}

DownlinkManager::~DownlinkManager() { stop(); }

void DownlinkManager::save_locked() const {
  if (options_.state_file.empty()) return;
  nlohmann::json doc{{"commands", nlohmann::json::array()}};
  for (const auto& [id, c] : commands_) doc["commands"].push_back(to_json(c));
  write_file_atomic(options_.state_file, doc.dump(1));
}

DownlinkCommand DownlinkManager::enqueue(const std::string& device_id, int port, Bytes payload, DownlinkKind kind,
                                         Timestamp now) {
  if (payload.size() > kMaxDownlinkPayload)
    throw Error(Errc::payload_too_large, std::to_string(payload.size()) + " bytes");
  if (payload.empty()) throw Error(Errc::validation_error, "payload");
  if (port < 1 || port > 223) throw Error(Errc::validation_error, "port");
  std::lock_guard lk(mutex_);
  DownlinkCommand c;
  c.id = next_id_++;
  c.device_id = device_id;
  c.port = port;
  c.payload = std::move(payload);
  c.kind = kind;
  c.created_at = now;
  commands_[c.id] = c;
  save_locked();
  {
    std::lock_guard wl(worker_mutex_);
    kick_ = true;
  }
  worker_cv_.notify_all();
  return c;
}

std::optional<DownlinkCommand> DownlinkManager::get(std::uint64_t id) const {
  std::lock_guard lk(mutex_);
  auto it = commands_.find(id);
  if (it == commands_.end()) return std::nullopt;
  return it->second;
}

std::vector<DownlinkCommand> DownlinkManager::list(const std::string& device_id) const {
  std::lock_guard lk(mutex_);
  std::vector<DownlinkCommand> out;
  for (const auto& [id, c] : commands_)
    if (device_id.empty() || c.device_id == device_id) out.push_back(c);
  return out;
}

void DownlinkManager::transition(DownlinkCommand& c, DownlinkState to, Timestamp now) {
  if (!valid_transition(c.state, to))
    throw Error(Errc::invalid_transition, std::string(to_string(c.state)) + " -> " + std::string(to_string(to)));
  c.state = to;
  switch (to) {
    case DownlinkState::sent: c.sent_at = now; break;
    case DownlinkState::acked: c.acked_at = now; break;
    case DownlinkState::failed: c.failed_at = now; break;
    case DownlinkState::pending: break;
  }
}

std::size_t DownlinkManager::worker_pass(Timestamp now) {
  std::lock_guard lk(mutex_);
  std::size_t changes = 0;
  for (auto& [id, c] : commands_) {
    if (c.state == DownlinkState::pending) {
      ++c.send_attempts;
      try {
        transport_->send(c);
        transition(c, DownlinkState::sent, now);
        c.error.clear();
        ++changes;
      } catch (const std::exception& e) {
        c.error = e.what();
        spdlog::warn("downlink {} to {} not sent: {}", c.id, c.device_id, e.what());
      }
    } else if (c.state == DownlinkState::sent && now - *c.sent_at >= options_.ack_timeout) {
      transition(c, DownlinkState::failed, now);
      c.error = "no uplink within the acknowledgement timeout";
      ++changes;
    }
  }
  if (changes) save_locked();
  return changes;
}

std::size_t DownlinkManager::on_uplink(const std::string& device_id, Timestamp now) {
  std::lock_guard lk(mutex_);
  std::size_t n = 0;
  for (auto& [id, c] : commands_)
    if (c.device_id == device_id && c.state == DownlinkState::sent) {
      transition(c, DownlinkState::acked, now);
      ++n;
    }
  if (n) save_locked();
  return n;
}

void DownlinkManager::ack(std::uint64_t id, Timestamp now) {
  std::lock_guard lk(mutex_);
  auto it = commands_.find(id);
  if (it == commands_.end()) throw Error(Errc::not_found, "downlink " + std::to_string(id));
  transition(it->second, DownlinkState::acked, now);
  save_locked();
}

void DownlinkManager::fail(std::uint64_t id, std::string reason, Timestamp now) {
  std::lock_guard lk(mutex_);
  auto it = commands_.find(id);
  if (it == commands_.end()) throw Error(Errc::not_found, "downlink " + std::to_string(id));
  transition(it->second, DownlinkState::failed, now);
  it->second.error = std::move(reason);
  save_locked();
}

void DownlinkManager::start() {
  std::lock_guard lk(worker_mutex_);
  if (worker_.joinable()) return;
  stopping_ = false;
  worker_ = std::thread([this] {
    std::unique_lock wl(worker_mutex_);
    while (!stopping_) {
      wl.unlock();
      try {
        worker_pass(now_utc());
      } catch (const std::exception& e) {
        spdlog::error("downlink worker: {}", e.what());
      }
      wl.lock();
      worker_cv_.wait_for(wl, options_.worker_interval, [&] { return stopping_ || kick_; });
      kick_ = false;
    }
  });
}

void DownlinkManager::stop() {
  {
    std::lock_guard lk(worker_mutex_);
    stopping_ = true;
  }
  worker_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

}  // namespace wallet::api
