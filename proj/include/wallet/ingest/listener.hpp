#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <variant>

#include "wallet/ingest/uplink.hpp"
#include "wallet/net/socket.hpp"

namespace wallet::ingest {

struct ReplaySource {
  std::filesystem::path path;
};

struct TcpSource {
  std::string host = "0.0.0.0";
  std::uint16_t port = 7600;
};

struct MqttSource {
  std::string url = "mqtt://127.0.0.1:1883";
  std::string topic = "+/devices/+/up";
  std::string client_id = "wallet-ingest";
};

using Source = std::variant<ReplaySource, TcpSource, MqttSource>;

class MqttHandle;

using ReadingSink = std::function<void(const SensorReading&)>;

struct ListenerCounters {
  std::uint64_t received = 0;   // lines or messages seen
  std::uint64_t delivered = 0;  // readings handed to the sink
  std::uint64_t malformed = 0;  // rejected by parse_uplink
  std::uint64_t sink_errors = 0;
};

/// Runs one source on a dedicated thread; every sink call happens on that
/// thread, in arrival order. Destruction stops the listener, and no sink
/// call starts after stop() returns.
class Listener {
 public:
  /// Opens the source synchronously; throws Error(source_unavailable).
  Listener(Source source, ReadingSink sink);
  ~Listener();

  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;

  void stop();
  /// Blocks until a replay file is exhausted or the listener is stopped.
  void wait();
  bool finished() const { return finished_.load(); }

  ListenerCounters counters() const;
  /// Bound port of a TCP source (useful with port 0).
  std::uint16_t port() const { return port_; }

  /// Parse one line and deliver it; exposed so every source shares it.
  void handle_line(std::string_view line);

 private:
  void run_replay(const ReplaySource& src);
  void run_tcp();
  void run_mqtt(const MqttSource& src);

  ReadingSink sink_;
  net::Fd listen_fd_;
  std::unique_ptr<MqttHandle> mqtt_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stop_{false};
  std::atomic<bool> finished_{false};
  std::atomic<std::uint64_t> received_{0}, delivered_{0}, malformed_{0}, sink_errors_{0};
  std::thread thread_;
};

}  // namespace wallet::ingest
