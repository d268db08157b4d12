#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "wallet/features/pipeline.hpp"
#include "wallet/time.hpp"

namespace wallet::sim {

struct RainEvent {
  Timestamp at;
  double magnitude = 0;  // moisture counts added at the first tick >= at
};

/// Moisture relaxes exponentially toward the dry baseline; rain adds
/// impulses, capped at saturation.
struct MoistureParams {
  double initial = 300;
  double dry_baseline = 300;
  double decay_hours = 3;
  double saturation = 1800;
  double rain_per_day = 5;  // Poisson rate of random wetting events; 0 disables
  double rain_min = 300;
  double rain_max = 700;
};

/// Linear attenuation with Gaussian noise. RSSI is reported in whole dBm.
struct ChannelParams {
  double rssi_base = -90;
  double rssi_slope = -0.05;  // dB per moisture count
  double rssi_sigma = 1.5;
  double snr_base = 8;
  double snr_slope = -0.01;
  double snr_sigma = 1.0;
};

struct WeatherParams {
  double temp_mean = 12;
  double temp_amplitude = 6;     // diurnal, peak at 15:00 UTC
  double temp_sigma = 0.3;
  double humidity_mean = 70;
  double humidity_coupling = -2.5;  // %RH per °C above the mean
  double humidity_sigma = 2;
  double pressure_start = 1013.25;
  double pressure_sigma = 0.2;   // random-walk step, hPa per tick
};

struct SimScenario {
  Timestamp start = parse_rfc3339("2020-02-15T00:00:00Z");
  Duration duration = minutes(10 * 5000);
  Duration cadence = minutes(10);
  std::vector<RainEvent> rain;
  MoistureParams moisture;
  ChannelParams channel;
  WeatherParams weather;
  std::uint64_t seed = 1;

  std::string app_id = "wallet";
  std::string device_id = "soil-01";
  std::string weather_device_id = "weather-01";
  std::string gateway_id = "sim-gw";

  std::size_t rows() const { return static_cast<std::size_t>(duration / cadence); }
};

/// Throws Error(bad_value) naming the offending parameter.
void validate(const SimScenario& s);

/// Every key is optional and falls back to the defaults above.
SimScenario scenario_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SimScenario& s);

struct TraceRow {
  Timestamp timestamp;
  double moisture = 0;  // ground truth, sensor counts
  double rssi = 0;
  double snr = 0;
  double air_temperature = 0;
  double air_humidity = 0;
  double air_pressure = 0;
};

/// One row per cadence tick from start, deterministic per seed. Rain,
/// channel noise and weather draw from independent streams.
std::vector<TraceRow> generate_trace(const SimScenario& s);

std::vector<features::FeatureRow> to_feature_rows(const std::vector<TraceRow>& trace);

/// Moisture estimate from the channel alone: inverse-variance combination of
/// the RSSI and SNR inversions under the scenario's own parameters. Its MAE
/// against ground truth is the noise floor no model can beat on average.
double invert_channel(const ChannelParams& c, double rssi, double snr);

/// `timestamp,air_pressure`, the weather-service import format.
std::string pressure_csv(const std::vector<TraceRow>& trace);

}  // namespace wallet::sim
