#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "wallet/downlink.hpp"
#include "wallet/ingest/uplink.hpp"
#include "wallet/sim/scenario.hpp"

namespace wallet::sim {

enum class DeviceRole { soil, weather };

struct SimDeviceState {
  std::string device_id;
  Duration wakeup_period = minutes(10);
  Duration clock_offset{0};
  double moisture = 0;
  std::vector<std::string> audit;  // raw commands and rejected downlinks
};

using UplinkSink = std::function<void(const ingest::UplinkMessage&)>;

/// Simulated device on a virtual clock. Uplinks are produced by advancing
/// the clock; each one carries the trace values at its true wake-up time
/// and a timestamp shifted by the device's clock offset.
class SimDevice {
 public:
  SimDevice(const SimScenario& scenario, std::shared_ptr<const std::vector<TraceRow>> trace, UplinkSink sink,
            DeviceRole role = DeviceRole::soil);

  /// Emits every uplink scheduled strictly before `t`. Exceptions from the
  /// sink surface as Error(sink_unavailable).
  void advance_to(Timestamp t);

  /// Applies a command at the current virtual time. A new wake-up period
  /// re-arms the timer: the next uplink is due one new period from now.
  /// Throws UnknownKind (kind hint not recognised) or BadValue.
  void apply_downlink(std::string_view kind_hint, const Bytes& payload);
  void apply_downlink(DownlinkKind kind, const Bytes& payload);

  const SimDeviceState& state() const { return state_; }
  Timestamp now() const { return now_; }
  Timestamp next_wakeup() const { return next_; }
  std::size_t emitted() const { return emitted_; }

  /// The uplink this device would send at true time t.
  ingest::UplinkMessage uplink_at(Timestamp t) const;

 private:
  const TraceRow& row_at(Timestamp t) const;

  SimScenario scenario_;
  std::shared_ptr<const std::vector<TraceRow>> trace_;
  UplinkSink sink_;
  DeviceRole role_;
  SimDeviceState state_;
  Timestamp now_;
  Timestamp next_;
  std::size_t emitted_ = 0;
};

/// Soil and weather uplinks for the whole scenario, merged by time (soil
/// first on equal timestamps).
std::vector<ingest::UplinkMessage> scenario_uplinks(const SimScenario& s, const std::vector<TraceRow>& trace);

}  // namespace wallet::sim
