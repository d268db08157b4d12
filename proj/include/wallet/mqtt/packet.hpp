#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// MQTT 3.1.1 control packets, QoS 0 subset.
namespace wallet::mqtt {

enum class PacketType : std::uint8_t {
  connect = 1,
  connack = 2,
  publish = 3,
  puback = 4,
  subscribe = 8,
  suback = 9,
  unsubscribe = 10,
  unsuback = 11,
  pingreq = 12,
  pingresp = 13,
  disconnect = 14,
};

struct Packet {
  PacketType type{};
  std::uint8_t flags = 0;
  std::string body;
};

inline constexpr std::size_t kMaxPacket = 1 << 20;

std::string encode_packet(PacketType type, std::uint8_t flags, std::string_view body);

/// Incremental decoder for a byte stream. Throws Error(invalid_field) on a
/// malformed fixed header or a packet above kMaxPacket.
class PacketReader {
 public:
  void feed(std::string_view bytes) { buffer_.append(bytes); }
  std::optional<Packet> next();

 private:
  std::string buffer_;
};

struct Connect {
  std::string client_id;
  std::uint16_t keepalive_s = 0;
};

struct Publish {
  std::string topic;
  std::string payload;
};

struct Subscribe {
  std::uint16_t packet_id = 0;
  std::vector<std::string> filters;
};

std::string encode_connect(const Connect& c);
Connect decode_connect(const Packet& p);
std::string encode_connack(std::uint8_t return_code);
std::string encode_publish(const Publish& m);
Publish decode_publish(const Packet& p);
std::string encode_subscribe(const Subscribe& s);
Subscribe decode_subscribe(const Packet& p);
std::string encode_suback(std::uint16_t packet_id, std::size_t filters);
std::string encode_pingreq();
std::string encode_pingresp();
std::string encode_disconnect();

/// `+` matches one level, a trailing `#` matches the rest.
bool topic_matches(std::string_view filter, std::string_view topic);

}  // namespace wallet::mqtt
