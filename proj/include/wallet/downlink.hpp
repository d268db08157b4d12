#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace wallet {

enum class DownlinkKind { set_wakeup_period, time_sync, raw };

std::string_view to_string(DownlinkKind kind);
/// Throws Error(unknown_kind).
DownlinkKind parse_downlink_kind(std::string_view name);

using Bytes = std::vector<std::uint8_t>;

/// Application payloads understood by the soil device firmware:
///   0x01 <u16 minutes, big-endian>   set wake-up period
///   0x02 <i32 seconds, big-endian>   shift the device clock
/// Anything else is a raw command.
inline constexpr std::uint8_t kOpSetWakeupPeriod = 0x01;
inline constexpr std::uint8_t kOpTimeSync = 0x02;
inline constexpr std::size_t kMaxDownlinkPayload = 51;

Bytes encode_set_wakeup_period(std::chrono::minutes period);
Bytes encode_time_sync(std::chrono::seconds offset);

/// Kind implied by the opcode; well-formedness is checked by the decoders.
DownlinkKind classify_payload(const Bytes& payload);
/// Throw Error(bad_value) on a wrong opcode or length.
std::chrono::minutes decode_set_wakeup_period(const Bytes& payload);
std::chrono::seconds decode_time_sync(const Bytes& payload);

}  // namespace wallet
