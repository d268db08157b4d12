#include "wallet/ingest/listener.hpp"

#include <poll.h>
#include <sys/socket.h>

#include <cerrno>
#include <fstream>
#include <list>

#include <spdlog/spdlog.h>

#include "wallet/error.hpp"
#include "wallet/mqtt/client.hpp"

namespace wallet::ingest {

class MqttHandle {
 public:
  explicit MqttHandle(const MqttSource& src) {
    auto ep = net::parse_endpoint(src.url, 1883);
    client = std::make_unique<mqtt::Client>(ep.host, ep.port, src.client_id);
    client->subscribe(src.topic);
  }
  std::unique_ptr<mqtt::Client> client;
};

namespace {
constexpr std::size_t kMaxLine = 1 << 20;
}

Listener::Listener(Source source, ReadingSink sink) : sink_(std::move(sink)) {
  if (auto* replay = std::get_if<ReplaySource>(&source)) {
    if (!std::filesystem::is_regular_file(replay->path))
      throw Error(Errc::source_unavailable, replay->path.string());
    thread_ = std::thread([this, src = *replay] { run_replay(src); });
  } else if (auto* tcp = std::get_if<TcpSource>(&source)) {
    listen_fd_ = net::listen_tcp(tcp->host, tcp->port);
    port_ = net::local_port(listen_fd_);
    thread_ = std::thread([this] { run_tcp(); });
  } else {
    const auto& src = std::get<MqttSource>(source);
    mqtt_ = std::make_unique<MqttHandle>(src);
    thread_ = std::thread([this, src] { run_mqtt(src); });
  }
}

Listener::~Listener() { stop(); }

void Listener::stop() {
  stop_ = true;
  if (thread_.joinable()) thread_.join();
  finished_ = true;
}

void Listener::wait() {
  if (thread_.joinable()) thread_.join();
}

ListenerCounters Listener::counters() const {
  return {received_.load(), delivered_.load(), malformed_.load(), sink_errors_.load()};
}

void Listener::handle_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  if (line.find_first_not_of(" \t") == std::string_view::npos) return;
  ++received_;
  SensorReading reading;
  try {
    reading = to_reading(parse_uplink(line));
  } catch (const Error& e) {
    ++malformed_;
    spdlog::warn("ingest: rejected uplink: {}", e.what());
    return;
  }
  if (stop_) return;
  try {
    sink_(reading);
    ++delivered_;
  } catch (const std::exception& e) {
    ++sink_errors_;
    spdlog::error("ingest: sink failed for {}: {}", reading.id(), e.what());
  }
}

void Listener::run_replay(const ReplaySource& src) {
  std::ifstream in(src.path);
  std::string line;
  while (!stop_ && std::getline(in, line)) handle_line(line);
  finished_ = true;
}

void Listener::run_tcp() {
  struct Conn {
    net::Fd fd;
    std::string buffer;
    bool closed = false;
  };
  std::list<Conn> conns;
  std::vector<pollfd> fds;
  while (!stop_) {
    fds.clear();
    fds.push_back({listen_fd_.get(), POLLIN, 0});
    for (auto& c : conns) fds.push_back({c.fd.get(), POLLIN, 0});
    if (::poll(fds.data(), fds.size(), 50) <= 0) continue;

    if (fds[0].revents & POLLIN) {
      for (;;) {
        int c = ::accept4(listen_fd_.get(), nullptr, nullptr, SOCK_CLOEXEC | SOCK_NONBLOCK);
        if (c < 0) break;
        conns.emplace_back().fd = net::Fd(c);
      }
    }
    std::size_t i = 1;
    for (auto it = conns.begin(); it != conns.end() && i < fds.size(); ++it, ++i) {
      if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      char buf[16384];
      for (;;) {
        ssize_t n = ::recv(it->fd.get(), buf, sizeof buf, 0);
        if (n < 0 && errno == EINTR) continue;
        if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) break;
        if (n <= 0) {
          it->closed = true;
          break;
        }
        it->buffer.append(buf, static_cast<std::size_t>(n));
        std::size_t start = 0;
        for (std::size_t nl; (nl = it->buffer.find('\n', start)) != std::string::npos; start = nl + 1)
          handle_line(std::string_view(it->buffer).substr(start, nl - start));
        it->buffer.erase(0, start);
        if (it->buffer.size() > kMaxLine) {
          ++received_;
          ++malformed_;
          spdlog::warn("ingest: line exceeds {} bytes, closing connection", kMaxLine);
          it->buffer.clear();
          it->closed = true;
          break;
        }
      }
      // A final line without a terminator still counts once the peer closes.
      if (it->closed && !it->buffer.empty()) handle_line(it->buffer);
    }
    conns.remove_if([](const Conn& c) { return c.closed; });
  }
}

void Listener::run_mqtt(const MqttSource& src) {
  while (!stop_) {
    try {
      if (!mqtt_) mqtt_ = std::make_unique<MqttHandle>(src);
      while (!stop_)
        if (auto m = mqtt_->client->poll(std::chrono::milliseconds(100))) handle_line(m->payload);
    } catch (const Error& e) {
      spdlog::warn("ingest: mqtt source: {}; reconnecting", e.what());
      mqtt_.reset();
      for (int k = 0; k < 10 && !stop_; ++k) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
  }
  mqtt_.reset();
}

}  // namespace wallet::ingest
