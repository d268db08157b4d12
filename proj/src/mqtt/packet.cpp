#include "wallet/mqtt/packet.hpp"

#include "wallet/error.hpp"

namespace wallet::mqtt {

namespace {

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v >> 8));
  out.push_back(static_cast<char>(v & 0xff));
}

void put_str(std::string& out, std::string_view s) {
  if (s.size() > 0xffff) throw Error(Errc::invalid_field, "mqtt string too long");
  put_u16(out, static_cast<std::uint16_t>(s.size()));
  out.append(s);
}

struct Cursor {
  std::string_view data;
  std::size_t pos = 0;

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data[pos++]);
  }
  std::uint16_t u16() {
    need(2);
    auto v = static_cast<std::uint16_t>((static_cast<unsigned char>(data[pos]) << 8) |
                                        static_cast<unsigned char>(data[pos + 1]));
    pos += 2;
    return v;
  }
  std::string str() {
    auto n = u16();
    need(n);
    std::string s(data.substr(pos, n));
    pos += n;
    return s;
  }
  std::string_view rest() const { return data.substr(pos); }
  void need(std::size_t n) const {
    if (pos + n > data.size()) throw Error(Errc::invalid_field, "truncated mqtt packet");
  }
};

void expect(const Packet& p, PacketType t) {
  if (p.type != t) throw Error(Errc::invalid_field, "unexpected mqtt packet type");
}

}  // namespace

std::string encode_packet(PacketType type, std::uint8_t flags, std::string_view body) {
  if (body.size() > kMaxPacket) throw Error(Errc::payload_too_large, "mqtt packet");
  std::string out;
  out.push_back(static_cast<char>((static_cast<std::uint8_t>(type) << 4) | (flags & 0x0f)));
  std::size_t len = body.size();
  do {
    std::uint8_t byte = len % 128;
    len /= 128;
    if (len > 0) byte |= 0x80;
    out.push_back(static_cast<char>(byte));
  } while (len > 0);
  out.append(body);
  return out;
}

std::optional<Packet> PacketReader::next() {
  if (buffer_.size() < 2) return std::nullopt;
  std::size_t len = 0;
  std::size_t mult = 1;
  std::size_t i = 1;
  for (;; ++i) {
    if (i > 4) throw Error(Errc::invalid_field, "mqtt remaining length");
    if (i >= buffer_.size()) return std::nullopt;
    auto byte = static_cast<std::uint8_t>(buffer_[i]);
    len += (byte & 0x7f) * mult;
    mult *= 128;
    if (!(byte & 0x80)) break;
  }
  if (len > kMaxPacket) throw Error(Errc::payload_too_large, "mqtt packet");
  const std::size_t header = i + 1;
  if (buffer_.size() < header + len) return std::nullopt;
  const auto first = static_cast<std::uint8_t>(buffer_[0]);
  if ((first >> 4) == 0 || (first >> 4) == 15) throw Error(Errc::invalid_field, "mqtt packet type");
  Packet p{static_cast<PacketType>(first >> 4), static_cast<std::uint8_t>(first & 0x0f), buffer_.substr(header, len)};
  buffer_.erase(0, header + len);
  return p;
}

std::string encode_connect(const Connect& c) {
  std::string body;
  put_str(body, "MQTT");
  body.push_back(4);     // protocol level 3.1.1
  body.push_back(0x02);  // clean session
  put_u16(body, c.keepalive_s);
  put_str(body, c.client_id);
  return encode_packet(PacketType::connect, 0, body);
}

Connect decode_connect(const Packet& p) {
  expect(p, PacketType::connect);
  Cursor c{p.body};
  if (c.str() != "MQTT" || c.u8() != 4) throw Error(Errc::invalid_field, "mqtt protocol");
  c.u8();
  Connect out;
  out.keepalive_s = c.u16();
  out.client_id = c.str();
  return out;
}

std::string encode_connack(std::uint8_t return_code) {
  std::string body{'\0', static_cast<char>(return_code)};
  return encode_packet(PacketType::connack, 0, body);
}

std::string encode_publish(const Publish& m) {
  std::string body;
  put_str(body, m.topic);
  body.append(m.payload);
  return encode_packet(PacketType::publish, 0, body);
}

Publish decode_publish(const Packet& p) {
  expect(p, PacketType::publish);
  Cursor c{p.body};
  Publish out;
  out.topic = c.str();
  if ((p.flags >> 1) & 0x03) c.u16();  // packet id present for QoS > 0
  out.payload = std::string(c.rest());
  return out;
}

std::string encode_subscribe(const Subscribe& s) {
  std::string body;
  put_u16(body, s.packet_id);
  for (const auto& f : s.filters) {
    put_str(body, f);
    body.push_back(0);  // requested QoS
  }
  return encode_packet(PacketType::subscribe, 0x02, body);
}

Subscribe decode_subscribe(const Packet& p) {
  expect(p, PacketType::subscribe);
  Cursor c{p.body};
  Subscribe out;
  out.packet_id = c.u16();
  while (!c.rest().empty()) {
    out.filters.push_back(c.str());
    c.u8();
  }
  if (out.filters.empty()) throw Error(Errc::invalid_field, "empty subscribe");
  return out;
}

std::string encode_suback(std::uint16_t packet_id, std::size_t filters) {
  std::string body;
  put_u16(body, packet_id);
  body.append(filters, '\0');
  return encode_packet(PacketType::suback, 0, body);
}

std::string encode_pingreq() { return encode_packet(PacketType::pingreq, 0, {}); }
std::string encode_pingresp() { return encode_packet(PacketType::pingresp, 0, {}); }
std::string encode_disconnect() { return encode_packet(PacketType::disconnect, 0, {}); }

bool topic_matches(std::string_view filter, std::string_view topic) {
  for (;;) {
    auto fslash = filter.find('/');
    auto tslash = topic.find('/');
    auto flevel = filter.substr(0, fslash);
    auto tlevel = topic.substr(0, tslash);
    if (flevel == "#") return true;
    if (flevel != "+" && flevel != tlevel) return false;
    if (fslash == std::string_view::npos || tslash == std::string_view::npos) {
      if (fslash == std::string_view::npos && tslash == std::string_view::npos) return true;
      // "a/#" also matches "a"
      return tslash == std::string_view::npos && filter.substr(fslash + 1) == "#";
    }
    filter.remove_prefix(fslash + 1);
    topic.remove_prefix(tslash + 1);
  }
}

}  // namespace wallet::mqtt
