#include "wallet/mqtt/client.hpp"

#include <sys/socket.h>

#include <cerrno>

#include "wallet/error.hpp"

namespace wallet::mqtt {

using namespace std::chrono;

Client::Client(const std::string& host, std::uint16_t port, std::string client_id, seconds keepalive)
    : fd_(net::connect_tcp(host, port)), client_id_(std::move(client_id)), keepalive_(keepalive) {
  send(encode_connect({client_id_, static_cast<std::uint16_t>(keepalive_.count())}));
  auto ack = read_packet(milliseconds(5000));
  if (!ack || ack->type != PacketType::connack || ack->body.size() != 2 || ack->body[1] != 0)
    throw Error(Errc::source_unavailable, "mqtt connect refused");
}

Client::~Client() {
  try {
    disconnect();
  } catch (...) {
  }
}

void Client::send(const std::string& bytes) {
  std::lock_guard lock(write_mutex_);
  if (!fd_) throw Error(Errc::source_unavailable, "mqtt not connected");
  net::write_all(fd_, bytes);
  last_send_ = steady_clock::now();
}

std::optional<Packet> Client::read_packet(milliseconds timeout) {
  const auto deadline = steady_clock::now() + timeout;
  for (;;) {
    if (auto p = reader_.next()) return p;
    auto left = duration_cast<milliseconds>(deadline - steady_clock::now());
    if (left.count() <= 0 || !net::wait_readable(fd_, left)) return std::nullopt;
    char buf[4096];
    ssize_t n = ::recv(fd_.get(), buf, sizeof buf, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error(Errc::source_unavailable, "mqtt connection closed");
    reader_.feed({buf, static_cast<std::size_t>(n)});
  }
}

void Client::keepalive_tick() {
  if (keepalive_.count() > 0 && steady_clock::now() - last_send_ > keepalive_ / 2) send(encode_pingreq());
}

void Client::subscribe(const std::string& filter) {
  const std::uint16_t id = next_packet_id_++;
  send(encode_subscribe({id, {filter}}));
  const auto deadline = steady_clock::now() + milliseconds(5000);
  while (steady_clock::now() < deadline) {
    auto p = read_packet(milliseconds(100));
    if (!p) continue;
    if (p->type == PacketType::publish) {
      pending_.push_back(decode_publish(*p));
    } else if (p->type == PacketType::suback && p->body.size() >= 3) {
      if (static_cast<std::uint8_t>(p->body[2]) == 0x80) throw Error(Errc::source_unavailable, "subscribe refused");
      return;
    }
  }
  throw Error(Errc::source_unavailable, "mqtt subscribe timeout");
}

void Client::publish(std::string_view topic, std::string_view payload) {
  send(encode_publish({std::string(topic), std::string(payload)}));
}

std::optional<Publish> Client::poll(milliseconds timeout) {
  if (!pending_.empty()) {
    auto m = std::move(pending_.front());
    pending_.pop_front();
    return m;
  }
  const auto deadline = steady_clock::now() + timeout;
  for (;;) {
    keepalive_tick();
    auto left = duration_cast<milliseconds>(deadline - steady_clock::now());
    auto p = read_packet(std::max(left, milliseconds(0)));
    if (!p) return std::nullopt;
    if (p->type == PacketType::publish) return decode_publish(*p);
  }
}

void Client::disconnect() {
  std::lock_guard lock(write_mutex_);
  if (!fd_) return;
  try {
    net::write_all(fd_, encode_disconnect());
  } catch (const Error&) {
  }
  fd_.reset();
}

}  // namespace wallet::mqtt
