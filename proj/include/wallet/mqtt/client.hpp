#pragma once

#include <chrono>
#include <deque>
#include <mutex>
#include <optional>
#include <string>

#include "wallet/mqtt/packet.hpp"
#include "wallet/net/socket.hpp"

namespace wallet::mqtt {

/// Blocking QoS 0 client. `publish` may be called from any thread; `poll`
/// from one thread at a time.
class Client {
 public:
  /// Connects and waits for CONNACK. Throws Error(source_unavailable).
  Client(const std::string& host, std::uint16_t port, std::string client_id,
         std::chrono::seconds keepalive = std::chrono::seconds(30));
  ~Client();

  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  /// Returns once the broker has acknowledged the subscription.
  void subscribe(const std::string& filter);
  void publish(std::string_view topic, std::string_view payload);

  /// Next application message, or nullopt on timeout. Answers keepalive
  /// traffic. Throws Error(source_unavailable) when the connection drops.
  std::optional<Publish> poll(std::chrono::milliseconds timeout);

  void disconnect();

 private:
  void send(const std::string& bytes);
  std::optional<Packet> read_packet(std::chrono::milliseconds timeout);
  void keepalive_tick();

  net::Fd fd_;
  std::string client_id_;
  std::chrono::seconds keepalive_;
  std::mutex write_mutex_;
  PacketReader reader_;
  std::deque<Publish> pending_;
  std::chrono::steady_clock::time_point last_send_;
  std::uint16_t next_packet_id_ = 1;
};

}  // namespace wallet::mqtt
