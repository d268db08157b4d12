#include "wallet/ingest/uplink.hpp"

#include <cmath>

#include "wallet/error.hpp"

namespace wallet::ingest {

using nlohmann::json;

namespace {

const json& require(const json& obj, const char* name) {
  auto it = obj.find(name);
  if (it == obj.end() || it->is_null()) throw Error(Errc::missing_field, name);
  return *it;
}

double finite_number(const json& v, const std::string& name) {
  if (!v.is_number()) throw Error(Errc::invalid_field, name);
  double d = v.get<double>();
  if (!std::isfinite(d)) throw Error(Errc::invalid_field, name);
  return d;
}

std::string string_field(const json& v, const char* name) {
  if (!v.is_string()) throw Error(Errc::invalid_field, name);
  return v.get<std::string>();
}

}  // namespace

std::string SensorReading::id() const { return device_id + "@" + std::to_string(to_micros(timestamp)); }

UplinkMessage parse_uplink(std::string_view raw) {
  json j = json::parse(raw, nullptr, false);
  if (j.is_discarded()) throw Error(Errc::malformed_json);
  return uplink_from_json(j);
}

UplinkMessage uplink_from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::malformed_json, "not an object");
  UplinkMessage m;

  m.dev_id = string_field(require(j, "dev_id"), "dev_id");
  if (!valid_device_id(m.dev_id)) throw Error(Errc::invalid_field, "dev_id");

  const json& fields = require(j, "payload_fields");
  if (!fields.is_object() || fields.empty()) throw Error(Errc::invalid_field, "payload_fields");
  for (const auto& [name, v] : fields.items()) {
    if (!valid_metric_name(name)) throw Error(Errc::invalid_field, "payload_fields." + name);
    m.payload_fields[name] = finite_number(v, "payload_fields." + name);
  }

  const json& meta = require(j, "metadata");
  if (!meta.is_object()) throw Error(Errc::invalid_field, "metadata");
  const json& time = require(meta, "time");
  if (!time.is_string()) throw Error(Errc::bad_timestamp, "metadata.time");
  m.received_at = parse_rfc3339(time.get<std::string>());

  if (auto it = j.find("app_id"); it != j.end() && !it->is_null()) m.app_id = string_field(*it, "app_id");
  if (auto it = j.find("port"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer() || *it < 0 || *it > 255) throw Error(Errc::invalid_field, "port");
    m.port = it->get<int>();
  }

  if (auto it = meta.find("gateways"); it != meta.end() && !it->is_null()) {
    if (!it->is_array()) throw Error(Errc::invalid_field, "metadata.gateways");
    for (const auto& g : *it) {
      if (!g.is_object()) throw Error(Errc::invalid_field, "metadata.gateways");
      Gateway gw;
      gw.gateway_id = string_field(require(g, "gtw_id"), "gtw_id");
      const json& rssi = require(g, "rssi");
      if (!rssi.is_number_integer() || rssi < -200 || rssi > 0) throw Error(Errc::invalid_field, "rssi");
      gw.rssi = rssi.get<int>();
      gw.snr = finite_number(require(g, "snr"), "snr");
      if (gw.snr < -30 || gw.snr > 30) throw Error(Errc::invalid_field, "snr");
      m.gateways.push_back(std::move(gw));
    }
  }
  return m;
}

json to_json(const UplinkMessage& msg) {
  json gateways = json::array();
  for (const auto& g : msg.gateways) gateways.push_back({{"gtw_id", g.gateway_id}, {"rssi", g.rssi}, {"snr", g.snr}});
  return {
      {"app_id", msg.app_id},
      {"dev_id", msg.dev_id},
      {"port", msg.port},
      {"payload_fields", msg.payload_fields},
      {"metadata", {{"time", format_rfc3339(msg.received_at)}, {"gateways", std::move(gateways)}}},
  };
}

std::string to_json_line(const UplinkMessage& msg) { return to_json(msg).dump() + "\n"; }

SensorReading to_reading(const UplinkMessage& msg) {
  SensorReading r{msg.dev_id, msg.received_at, msg.payload_fields, std::nullopt};
  const Gateway* best = nullptr;
  for (const auto& g : msg.gateways)
    if (!best || g.rssi > best->rssi) best = &g;
  if (best) r.link = LinkMetrics{static_cast<double>(best->rssi), best->snr};
  return r;
}

std::vector<std::pair<SeriesKey, SeriesPoint>> to_points(const SensorReading& r) {
  std::vector<std::pair<SeriesKey, SeriesPoint>> out;
  for (const auto& [name, v] : r.metrics) out.push_back({{r.device_id, name}, {r.timestamp, v}});
  if (r.link) {
    out.push_back({{r.device_id, "rssi"}, {r.timestamp, r.link->rssi}});
    out.push_back({{r.device_id, "snr"}, {r.timestamp, r.link->snr}});
  }
  return out;
}

}  // namespace wallet::ingest
