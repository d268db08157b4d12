#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "wallet/downlink.hpp"
#include "wallet/time.hpp"

namespace wallet::mqtt {
class Client;
}

namespace wallet::api {

/// pending -> sent -> (acked | failed). A transport error leaves a command
/// pending for the next worker pass; a sent command fails when no uplink
/// from its device arrives within the ack timeout.
enum class DownlinkState { pending, sent, acked, failed };

std::string_view to_string(DownlinkState s);
DownlinkState parse_downlink_state(std::string_view s);
bool valid_transition(DownlinkState from, DownlinkState to);

struct DownlinkCommand {
  std::uint64_t id = 0;
  std::string device_id;
  int port = 1;
  Bytes payload;
  DownlinkKind kind = DownlinkKind::raw;
  DownlinkState state = DownlinkState::pending;
  Timestamp created_at;
  std::optional<Timestamp> sent_at, acked_at, failed_at;
  int send_attempts = 0;
  std::string error;

  bool operator==(const DownlinkCommand&) const = default;
};

/// Payload travels as base64 under `payload`.
nlohmann::json to_json(const DownlinkCommand& c);
DownlinkCommand downlink_from_json(const nlohmann::json& j);

class DownlinkTransport {
 public:
  virtual ~DownlinkTransport() = default;
  virtual std::string name() const = 0;
  /// Throws on failure.
  virtual void send(const DownlinkCommand& c) = 0;
};

/// In-process hand-off to simulated devices.
class QueueTransport : public DownlinkTransport {
 public:
  std::string name() const override { return "queue"; }
  void send(const DownlinkCommand& c) override;

  /// Removes and returns the commands waiting for `device_id`, oldest first.
  std::vector<DownlinkCommand> take(const std::string& device_id);
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::deque<DownlinkCommand> queue_;
};

/// TTN-style publish of `{"port","confirmed","payload_raw"}` to
/// `{app_id}/devices/{dev_id}/down`. Connects lazily and reconnects after a
/// failure.
class MqttTransport : public DownlinkTransport {
 public:
  MqttTransport(std::string url, std::string app_id, std::string client_id = "wallet-downlink");
  ~MqttTransport() override;

  std::string name() const override { return "mqtt"; }
  void send(const DownlinkCommand& c) override;

  static std::string topic(std::string_view app_id, std::string_view device_id);
  static std::string message(const DownlinkCommand& c);

 private:
  std::string host_;
  std::uint16_t port_;
  std::string app_id_;
  std::string client_id_;
  std::mutex mutex_;
  std::unique_ptr<mqtt::Client> client_;
};

struct DownlinkOptions {
  Duration ack_timeout = std::chrono::hours(1);
  Duration worker_interval = std::chrono::seconds(1);
  /// When set, the command table is loaded from and saved to this file.
  std::filesystem::path state_file;
};

class DownlinkManager {
 public:
  DownlinkManager(std::shared_ptr<DownlinkTransport> transport, DownlinkOptions options = {});
  ~DownlinkManager();

  DownlinkManager(const DownlinkManager&) = delete;
  DownlinkManager& operator=(const DownlinkManager&) = delete;

  /// Throws PayloadTooLarge (> 51 bytes) or ValidationError (port outside
  /// 1..223, empty payload).
  DownlinkCommand enqueue(const std::string& device_id, int port, Bytes payload, DownlinkKind kind, Timestamp now);

  std::optional<DownlinkCommand> get(std::uint64_t id) const;
  /// Oldest first; every device when `device_id` is empty.
  std::vector<DownlinkCommand> list(const std::string& device_id = {}) const;

  /// Sends pending commands and expires unacknowledged sent ones. Returns the
  /// number of state changes.
  std::size_t worker_pass(Timestamp now);
  /// Acknowledges every sent command of the device.
  std::size_t on_uplink(const std::string& device_id, Timestamp now);

  /// Throw NotFound or InvalidTransition.
  void ack(std::uint64_t id, Timestamp now);
  void fail(std::uint64_t id, std::string reason, Timestamp now);

  /// Background worker on the wall clock.
  void start();
  void stop();

  DownlinkTransport& transport() { return *transport_; }

 private:
  void transition(DownlinkCommand& c, DownlinkState to, Timestamp now);
  void save_locked() const;

  std::shared_ptr<DownlinkTransport> transport_;
  DownlinkOptions options_;
  mutable std::mutex mutex_;
  std::map<std::uint64_t, DownlinkCommand> commands_;
  std::uint64_t next_id_ = 1;

  std::mutex worker_mutex_;
  std::condition_variable worker_cv_;
  bool stopping_ = false;
  bool kick_ = false;
  std::thread worker_;
};

}  // namespace wallet::api
