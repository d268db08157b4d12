#include "wallet/sim/device.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

#include "wallet/error.hpp"

namespace wallet::sim {

SimDevice::SimDevice(const SimScenario& scenario, std::shared_ptr<const std::vector<TraceRow>> trace,
                     UplinkSink sink, DeviceRole role)
    : scenario_(scenario), trace_(std::move(trace)), sink_(std::move(sink)), role_(role) {
  if (!trace_ || trace_->empty()) throw Error(Errc::bad_value, "empty trace");
  state_.device_id = role == DeviceRole::soil ? scenario.device_id : scenario.weather_device_id;
  state_.wakeup_period = scenario.cadence;
  state_.moisture = trace_->front().moisture;
  now_ = scenario.start;
  next_ = scenario.start;
}

const TraceRow& SimDevice::row_at(Timestamp t) const {
  // Latest trace row at or before t; the trace is on a regular grid.
  if (t <= trace_->front().timestamp) return trace_->front();
  auto k = static_cast<std::size_t>((t - scenario_.start) / scenario_.cadence);
  return (*trace_)[std::min(k, trace_->size() - 1)];
}

ingest::UplinkMessage SimDevice::uplink_at(Timestamp t) const {
  const TraceRow& row = row_at(t);
  ingest::UplinkMessage m;
  m.app_id = scenario_.app_id;
  m.dev_id = state_.device_id;
  m.port = 1;
  m.received_at = t + state_.clock_offset;
  if (role_ == DeviceRole::soil) {
    m.payload_fields["soil_moisture"] = row.moisture;
    m.gateways.push_back({scenario_.gateway_id, static_cast<int>(row.rssi), row.snr});
  } else {
    m.payload_fields["air_temperature"] = row.air_temperature;
    m.payload_fields["air_humidity"] = row.air_humidity;
  }
  return m;
}

void SimDevice::advance_to(Timestamp t) {
  while (next_ < t) {
    now_ = next_;
    state_.moisture = row_at(now_).moisture;
    auto msg = uplink_at(now_);
    try {
      sink_(msg);
    } catch (const std::exception& e) {
      throw Error(Errc::sink_unavailable, e.what());
    }
    ++emitted_;
    next_ = now_ + state_.wakeup_period;
  }
  now_ = std::max(now_, t);
}

void SimDevice::apply_downlink(std::string_view kind_hint, const Bytes& payload) {
  apply_downlink(parse_downlink_kind(kind_hint), payload);
}

void SimDevice::apply_downlink(DownlinkKind kind, const Bytes& payload) {
  switch (kind) {
    case DownlinkKind::set_wakeup_period: {
      auto period = decode_set_wakeup_period(payload);
      if (period < std::chrono::minutes(1)) throw Error(Errc::bad_value, "wake-up period below 1 min");
      state_.wakeup_period = period;
      next_ = now_ + state_.wakeup_period;
      break;
    }
    case DownlinkKind::time_sync:
      state_.clock_offset += decode_time_sync(payload);
      break;
    case DownlinkKind::raw: {
      std::string hex;
      for (auto b : payload) {
        static constexpr char digits[] = "0123456789abcdef";
        hex += digits[b >> 4];
        hex += digits[b & 0xf];
      }
      state_.audit.push_back(format_rfc3339(now_) + " raw " + hex);
      spdlog::info("sim {}: raw downlink {} ignored", state_.device_id, hex);
      break;
    }
  }
}

std::vector<ingest::UplinkMessage> scenario_uplinks(const SimScenario& s, const std::vector<TraceRow>& trace) {
  auto shared = std::make_shared<const std::vector<TraceRow>>(trace);
  std::vector<ingest::UplinkMessage> soil, weather;
  SimDevice soil_dev(s, shared, [&](const ingest::UplinkMessage& m) { soil.push_back(m); }, DeviceRole::soil);
  SimDevice weather_dev(s, shared, [&](const ingest::UplinkMessage& m) { weather.push_back(m); },
                        DeviceRole::weather);
  const Timestamp end = s.start + s.cadence * static_cast<std::int64_t>(trace.size());
  soil_dev.advance_to(end);
  weather_dev.advance_to(end);
  std::vector<ingest::UplinkMessage> out;
  out.reserve(soil.size() + weather.size());
  std::merge(soil.begin(), soil.end(), weather.begin(), weather.end(), std::back_inserter(out),
             [](const auto& a, const auto& b) { return a.received_at < b.received_at; });
  return out;
}

}  // namespace wallet::sim
