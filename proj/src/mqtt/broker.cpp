#include "wallet/mqtt/broker.hpp"

#include <poll.h>
#include <sys/socket.h>

#include <cerrno>
#include <list>
#include <vector>

#include <spdlog/spdlog.h>

#include "wallet/error.hpp"
#include "wallet/mqtt/packet.hpp"

namespace wallet::mqtt {

namespace {

struct Session {
  net::Fd fd;
  PacketReader reader;
  bool connected = false;
  bool closed = false;
  std::vector<std::string> filters;
};

}  // namespace

Broker::Broker(const std::string& host, std::uint16_t port) : listener_(net::listen_tcp(host, port)) {
  port_ = net::local_port(listener_);
  thread_ = std::thread([this] { run(); });
}

Broker::~Broker() { stop(); }

void Broker::stop() {
  stop_ = true;
  if (thread_.joinable()) thread_.join();
}

void Broker::run() {
  std::list<Session> sessions;
  auto deliver = [&](const Publish& m) {
    const std::string wire = encode_publish(m);
    for (auto& s : sessions) {
      if (s.closed || !s.connected) continue;
      for (const auto& f : s.filters) {
        if (!topic_matches(f, m.topic)) continue;
        try {
          net::write_all(s.fd, wire);
        } catch (const Error&) {
          s.closed = true;
        }
        break;
      }
    }
  };
  auto handle = [&](Session& s, const Packet& p) {
    if (!s.connected && p.type != PacketType::connect) {
      s.closed = true;
      return;
    }
    switch (p.type) {
      case PacketType::connect:
        decode_connect(p);
        s.connected = true;
        net::write_all(s.fd, encode_connack(0));
        break;
      case PacketType::subscribe: {
        auto sub = decode_subscribe(p);
        s.filters.insert(s.filters.end(), sub.filters.begin(), sub.filters.end());
        net::write_all(s.fd, encode_suback(sub.packet_id, sub.filters.size()));
        break;
      }
      case PacketType::publish:
        if ((p.flags >> 1) & 0x03) {  // only QoS 0 is offered
          s.closed = true;
          return;
        }
        deliver(decode_publish(p));
        break;
      case PacketType::pingreq:
        net::write_all(s.fd, encode_pingresp());
        break;
      case PacketType::disconnect:
        s.closed = true;
        break;
      default:
        break;
    }
  };

  std::vector<pollfd> fds;
  while (!stop_) {
    fds.clear();
    fds.push_back({listener_.get(), POLLIN, 0});
    for (auto& s : sessions) fds.push_back({s.fd.get(), POLLIN, 0});
    if (::poll(fds.data(), fds.size(), 50) <= 0) continue;

    if (fds[0].revents & POLLIN) {
      for (;;) {
        int c = ::accept4(listener_.get(), nullptr, nullptr, SOCK_CLOEXEC);
        if (c < 0) break;
        sessions.emplace_back().fd = net::Fd(c);
      }
    }
    std::size_t i = 1;
    for (auto it = sessions.begin(); it != sessions.end() && i < fds.size(); ++it, ++i) {
      if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      char buf[8192];
      ssize_t n = ::recv(it->fd.get(), buf, sizeof buf, MSG_DONTWAIT);
      if (n <= 0) {
        if (n < 0 && (errno == EAGAIN || errno == EINTR)) continue;
        it->closed = true;
        continue;
      }
      it->reader.feed({buf, static_cast<std::size_t>(n)});
      try {
        while (auto p = it->reader.next()) {
          handle(*it, *p);
          if (it->closed) break;
        }
      } catch (const Error& e) {
        spdlog::warn("mqtt broker: dropping client: {}", e.what());
        it->closed = true;
      }
    }
    sessions.remove_if([](const Session& s) { return s.closed; });
    clients_ = sessions.size();
  }
}

}  // namespace wallet::mqtt
