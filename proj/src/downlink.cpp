#include "wallet/downlink.hpp"

#include "wallet/error.hpp"

namespace wallet {

std::string_view to_string(DownlinkKind kind) {
  switch (kind) {
    case DownlinkKind::set_wakeup_period: return "set_wakeup_period";
    case DownlinkKind::time_sync: return "time_sync";
    case DownlinkKind::raw: return "raw";
  }
  return "raw";
}

DownlinkKind parse_downlink_kind(std::string_view name) {
  for (auto k : {DownlinkKind::set_wakeup_period, DownlinkKind::time_sync, DownlinkKind::raw})
    if (to_string(k) == name) return k;
  throw Error(Errc::unknown_kind, std::string(name));
}

Bytes encode_set_wakeup_period(std::chrono::minutes period) {
  if (period.count() < 0 || period.count() > 0xffff) throw Error(Errc::bad_value, "wake-up period");
  auto m = static_cast<std::uint16_t>(period.count());
  return {kOpSetWakeupPeriod, static_cast<std::uint8_t>(m >> 8), static_cast<std::uint8_t>(m & 0xff)};
}

Bytes encode_time_sync(std::chrono::seconds offset) {
  if (offset.count() < INT32_MIN || offset.count() > INT32_MAX) throw Error(Errc::bad_value, "time offset");
  auto s = static_cast<std::uint32_t>(static_cast<std::int32_t>(offset.count()));
  return {kOpTimeSync, static_cast<std::uint8_t>(s >> 24), static_cast<std::uint8_t>(s >> 16),
          static_cast<std::uint8_t>(s >> 8), static_cast<std::uint8_t>(s)};
}

DownlinkKind classify_payload(const Bytes& payload) {
  if (payload.empty()) return DownlinkKind::raw;
  if (payload[0] == kOpSetWakeupPeriod) return DownlinkKind::set_wakeup_period;
  if (payload[0] == kOpTimeSync) return DownlinkKind::time_sync;
  return DownlinkKind::raw;
}

std::chrono::minutes decode_set_wakeup_period(const Bytes& p) {
  if (p.size() != 3 || p[0] != kOpSetWakeupPeriod) throw Error(Errc::bad_value, "set_wakeup_period payload");
  return std::chrono::minutes((p[1] << 8) | p[2]);
}

std::chrono::seconds decode_time_sync(const Bytes& p) {
  if (p.size() != 5 || p[0] != kOpTimeSync) throw Error(Errc::bad_value, "time_sync payload");
  std::uint32_t u = (std::uint32_t(p[1]) << 24) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 8) | p[4];
  return std::chrono::seconds(static_cast<std::int32_t>(u));
}

}  // namespace wallet
