#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "wallet/series.hpp"

namespace wallet::ingest {

struct Gateway {
  std::string gateway_id;
  int rssi = 0;     // dBm
  double snr = 0;   // dB

  bool operator==(const Gateway&) const = default;
};

/// TTN v2 uplink as forwarded over MQTT (`payload_fields` + `metadata`).
struct UplinkMessage {
  std::string app_id;
  std::string dev_id;
  int port = 0;
  std::map<std::string, double> payload_fields;
  Timestamp received_at;
  std::vector<Gateway> gateways;

  bool operator==(const UplinkMessage&) const = default;
};

struct LinkMetrics {
  double rssi = 0;
  double snr = 0;

  bool operator==(const LinkMetrics&) const = default;
};

struct SensorReading {
  std::string device_id;
  Timestamp timestamp;
  std::map<std::string, double> metrics;
  std::optional<LinkMetrics> link;

  bool operator==(const SensorReading&) const = default;

  /// Stable identity used for exactly-once processing downstream.
  std::string id() const;
};

/// Throws Error with MalformedJson, MissingField(name), BadTimestamp or
/// InvalidField(name). Unknown fields are ignored.
UplinkMessage parse_uplink(std::string_view raw);
UplinkMessage uplink_from_json(const nlohmann::json& j);

nlohmann::json to_json(const UplinkMessage& msg);
std::string to_json_line(const UplinkMessage& msg);

/// Link metrics from the strongest gateway; first one wins a tie.
SensorReading to_reading(const UplinkMessage& msg);

/// One store point per metric; link metrics are stored as `rssi` and `snr`.
std::vector<std::pair<SeriesKey, SeriesPoint>> to_points(const SensorReading& r);

}  // namespace wallet::ingest
