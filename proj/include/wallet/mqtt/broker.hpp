#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <thread>

#include "wallet/net/socket.hpp"

namespace wallet::mqtt {

/// Embedded QoS 0 broker for local deployments and tests: CONNECT,
/// SUBSCRIBE with wildcards, PUBLISH fan-out, PINGREQ, DISCONNECT.
class Broker {
 public:
  explicit Broker(const std::string& host = "127.0.0.1", std::uint16_t port = 0);
  ~Broker();

  Broker(const Broker&) = delete;
  Broker& operator=(const Broker&) = delete;

  std::uint16_t port() const { return port_; }
  std::size_t client_count() const { return clients_.load(); }
  void stop();

 private:
  void run();

  net::Fd listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stop_{false};
  std::atomic<std::size_t> clients_{0};
  std::thread thread_;
};

}  // namespace wallet::mqtt
