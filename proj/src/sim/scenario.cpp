#include "wallet/sim/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "wallet/csv.hpp"
#include "wallet/error.hpp"
#include "wallet/random.hpp"

namespace wallet::sim {

using nlohmann::json;

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(Errc::bad_value, what);
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw Error(Errc::bad_value, key);
    }
  }
}

void read_minutes(const json& j, const char* key, Duration& out) {
  if (auto it = j.find(key); it != j.end()) {
    if (!it->is_number()) throw Error(Errc::bad_value, key);
    out = std::chrono::duration_cast<Duration>(std::chrono::duration<double, std::ratio<60>>(it->get<double>()));
  }
}

double minutes_of(Duration d) { return std::chrono::duration<double, std::ratio<60>>(d).count(); }

}  // namespace

void validate(const SimScenario& s) {
  require(s.cadence.count() > 0, "cadence");
  require(s.duration.count() >= 0, "duration");
  require(s.channel.rssi_slope <= 0, "rssi_slope");
  require(s.channel.snr_slope <= 0, "snr_slope");
  require(s.channel.rssi_sigma >= 0, "rssi_sigma");
  require(s.channel.snr_sigma >= 0, "snr_sigma");
  require(s.weather.temp_sigma >= 0, "temp_sigma");
  require(s.weather.humidity_sigma >= 0, "humidity_sigma");
  require(s.weather.pressure_sigma >= 0, "pressure_sigma");
  require(s.moisture.decay_hours > 0, "decay_hours");
  require(s.moisture.rain_per_day >= 0, "rain_per_day");
  require(s.moisture.rain_min >= 0 && s.moisture.rain_min <= s.moisture.rain_max, "rain_min/rain_max");
  require(s.moisture.saturation >= s.moisture.dry_baseline, "saturation");
  for (const auto& e : s.rain) require(e.magnitude >= 0, "rain magnitude");
  require(valid_device_id(s.device_id), "device_id");
  require(valid_device_id(s.weather_device_id), "weather_device_id");
}

SimScenario scenario_from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::bad_value, "scenario must be an object");
  SimScenario s;
  if (auto it = j.find("start"); it != j.end()) s.start = parse_rfc3339(it->get<std::string>());
  read_minutes(j, "cadence_minutes", s.cadence);
  read_minutes(j, "duration_minutes", s.duration);
  if (auto it = j.find("rows"); it != j.end()) s.duration = s.cadence * it->get<std::int64_t>();
  read(j, "seed", s.seed);
  read(j, "app_id", s.app_id);
  read(j, "device_id", s.device_id);
  read(j, "weather_device_id", s.weather_device_id);
  read(j, "gateway_id", s.gateway_id);
  if (auto it = j.find("rain"); it != j.end()) {
    for (const auto& e : *it)
      s.rain.push_back({parse_rfc3339(e.at("time").get<std::string>()), e.at("magnitude").get<double>()});
  }
  if (auto m = j.find("moisture"); m != j.end()) {
    read(*m, "initial", s.moisture.initial);
    read(*m, "dry_baseline", s.moisture.dry_baseline);
    read(*m, "decay_hours", s.moisture.decay_hours);
    read(*m, "saturation", s.moisture.saturation);
    read(*m, "rain_per_day", s.moisture.rain_per_day);
    read(*m, "rain_min", s.moisture.rain_min);
    read(*m, "rain_max", s.moisture.rain_max);
  }
  if (auto c = j.find("channel"); c != j.end()) {
    read(*c, "rssi_base", s.channel.rssi_base);
    read(*c, "rssi_slope", s.channel.rssi_slope);
    read(*c, "rssi_sigma", s.channel.rssi_sigma);
    read(*c, "snr_base", s.channel.snr_base);
    read(*c, "snr_slope", s.channel.snr_slope);
    read(*c, "snr_sigma", s.channel.snr_sigma);
  }
  if (auto w = j.find("weather"); w != j.end()) {
    read(*w, "temp_mean", s.weather.temp_mean);
    read(*w, "temp_amplitude", s.weather.temp_amplitude);
    read(*w, "temp_sigma", s.weather.temp_sigma);
    read(*w, "humidity_mean", s.weather.humidity_mean);
    read(*w, "humidity_coupling", s.weather.humidity_coupling);
    read(*w, "humidity_sigma", s.weather.humidity_sigma);
    read(*w, "pressure_start", s.weather.pressure_start);
    read(*w, "pressure_sigma", s.weather.pressure_sigma);
  }
  validate(s);
  return s;
}

json to_json(const SimScenario& s) {
  json rain = json::array();
  for (const auto& e : s.rain) rain.push_back({{"time", format_rfc3339(e.at)}, {"magnitude", e.magnitude}});
  const auto& m = s.moisture;
  const auto& c = s.channel;
  const auto& w = s.weather;
  return {
      {"start", format_rfc3339(s.start)},
      {"cadence_minutes", minutes_of(s.cadence)},
      {"duration_minutes", minutes_of(s.duration)},
      {"seed", s.seed},
      {"app_id", s.app_id},
      {"device_id", s.device_id},
      {"weather_device_id", s.weather_device_id},
      {"gateway_id", s.gateway_id},
      {"rain", rain},
      {"moisture",
       {{"initial", m.initial}, {"dry_baseline", m.dry_baseline}, {"decay_hours", m.decay_hours},
        {"saturation", m.saturation}, {"rain_per_day", m.rain_per_day}, {"rain_min", m.rain_min},
        {"rain_max", m.rain_max}}},
      {"channel",
       {{"rssi_base", c.rssi_base}, {"rssi_slope", c.rssi_slope}, {"rssi_sigma", c.rssi_sigma},
        {"snr_base", c.snr_base}, {"snr_slope", c.snr_slope}, {"snr_sigma", c.snr_sigma}}},
      {"weather",
       {{"temp_mean", w.temp_mean}, {"temp_amplitude", w.temp_amplitude}, {"temp_sigma", w.temp_sigma},
        {"humidity_mean", w.humidity_mean}, {"humidity_coupling", w.humidity_coupling},
        {"humidity_sigma", w.humidity_sigma}, {"pressure_start", w.pressure_start},
        {"pressure_sigma", w.pressure_sigma}}},
  };
}

std::vector<TraceRow> generate_trace(const SimScenario& s) {
  validate(s);
  const std::size_t n = s.rows();
  Rng rain_rng(derive_seed(s.seed, 1));
  Rng channel_rng(derive_seed(s.seed, 2));
  Rng weather_rng(derive_seed(s.seed, 3));

  // Rain impulses per tick: scheduled events land on the first tick at or
  // after their time; random events follow a Poisson process per tick.
  std::vector<double> impulse(n, 0.0);
  for (const auto& e : s.rain) {
    if (e.at > s.start + s.duration) continue;
    auto k = e.at <= s.start ? 0 : (e.at - s.start + s.cadence - Duration{1}) / s.cadence;
    if (static_cast<std::size_t>(k) < n) impulse[static_cast<std::size_t>(k)] += e.magnitude;
  }
  const double tick_days = std::chrono::duration<double, std::ratio<86400>>(s.cadence).count();
  const double p_rain = 1.0 - std::exp(-s.moisture.rain_per_day * tick_days);
  const double decay =
      std::exp(-std::chrono::duration<double, std::ratio<3600>>(s.cadence).count() / s.moisture.decay_hours);

  std::vector<TraceRow> rows(n);
  double moisture = s.moisture.initial;
  double pressure = s.weather.pressure_start;
  for (std::size_t k = 0; k < n; ++k) {
    TraceRow& r = rows[k];
    r.timestamp = s.start + s.cadence * static_cast<std::int64_t>(k);

    if (k > 0) moisture = s.moisture.dry_baseline + (moisture - s.moisture.dry_baseline) * decay;
    double rain = impulse[k];
    if (s.moisture.rain_per_day > 0 && rain_rng.uniform01() < p_rain)
      rain += rain_rng.uniform(s.moisture.rain_min, s.moisture.rain_max);
    moisture = std::min(moisture + rain, s.moisture.saturation);
    r.moisture = moisture;

    const auto& c = s.channel;
    r.rssi = std::clamp(std::round(c.rssi_base + c.rssi_slope * moisture + channel_rng.normal(0, c.rssi_sigma)),
                        -200.0, 0.0);
    r.snr = std::clamp(c.snr_base + c.snr_slope * moisture + channel_rng.normal(0, c.snr_sigma), -30.0, 30.0);

    const auto& w = s.weather;
    const auto day_start = std::chrono::floor<std::chrono::days>(r.timestamp);
    const double hour = std::chrono::duration<double, std::ratio<3600>>(r.timestamp - day_start).count();
    r.air_temperature = w.temp_mean + w.temp_amplitude * std::cos(2 * std::numbers::pi * (hour - 15) / 24) +
                        weather_rng.normal(0, w.temp_sigma);
    r.air_humidity = std::clamp(w.humidity_mean + w.humidity_coupling * (r.air_temperature - w.temp_mean) +
                                    weather_rng.normal(0, w.humidity_sigma),
                                0.0, 100.0);
    if (k > 0) pressure += weather_rng.normal(0, w.pressure_sigma);
    r.air_pressure = pressure;
  }
  return rows;
}

std::vector<features::FeatureRow> to_feature_rows(const std::vector<TraceRow>& trace) {
  std::vector<features::FeatureRow> out;
  out.reserve(trace.size());
  for (const auto& r : trace)
    out.push_back({r.timestamp, {r.rssi, r.snr, r.air_temperature, r.air_humidity, r.air_pressure}, r.moisture});
  return out;
}

double invert_channel(const ChannelParams& c, double rssi, double snr) {
  // Whole-dBm rounding adds uniform quantisation noise of variance 1/12.
  const double var_rssi = (c.rssi_sigma * c.rssi_sigma + 1.0 / 12.0) / (c.rssi_slope * c.rssi_slope);
  const double var_snr = (c.snr_sigma * c.snr_sigma) / (c.snr_slope * c.snr_slope);
  const bool use_rssi = c.rssi_slope != 0;
  const bool use_snr = c.snr_slope != 0;
  const double m_rssi = use_rssi ? (rssi - c.rssi_base) / c.rssi_slope : 0;
  const double m_snr = use_snr ? (snr - c.snr_base) / c.snr_slope : 0;
  if (use_rssi && use_snr) {
    if (var_snr == 0) return m_snr;
    const double w_rssi = 1 / var_rssi;
    const double w_snr = 1 / var_snr;
    return (w_rssi * m_rssi + w_snr * m_snr) / (w_rssi + w_snr);
  }
  if (use_rssi) return m_rssi;
  if (use_snr) return m_snr;
  throw Error(Errc::bad_value, "channel carries no moisture information");
}

std::string pressure_csv(const std::vector<TraceRow>& trace) {
  std::string out = "timestamp,air_pressure\n";
  for (const auto& r : trace) {
    out += format_rfc3339(r.timestamp);
    out += ',';
    out += csv::format_double(r.air_pressure);
    out += '\n';
  }
  return out;
}

}  // namespace wallet::sim
