#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "wallet/series.hpp"
#include "wallet/time.hpp"

namespace wallet::features {

inline constexpr std::size_t kFeatureCount = 5;

/// Fixed feature order: signal first (RSSI dBm, SNR dB), then weather
/// (air temperature °C, air humidity %RH, air pressure hPa).
inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames{
    "rssi", "snr", "air_temperature", "air_humidity", "air_pressure"};
inline constexpr std::string_view kTargetName = "soil_moisture";

using FeatureVector = std::array<double, kFeatureCount>;

struct FeatureRow {
  Timestamp timestamp;
  FeatureVector features{};
  double target = 0;  // soil moisture, raw sensor counts (or normalized)

  bool operator==(const FeatureRow&) const = default;
};

/// Training-split statistics for mean-centering followed by min-max scaling.
struct NormStats {
  FeatureVector mean{};
  FeatureVector centered_min{};
  FeatureVector centered_max{};
  double target_min = 0;
  double target_max = 1;

  /// Stable hash of the bit patterns of every statistic.
  std::string fingerprint() const;

  bool operator==(const NormStats&) const = default;
};

struct SplitSpec {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

struct Splits {
  std::vector<FeatureRow> train, val, test;
};

/// Which row a lookback window predicts. `next` is the row right after the
/// window; `current` is the window's own last row.
enum class WindowTarget { next, current };

struct WindowedSample {
  Eigen::MatrixXd inputs;     // L × 5, oldest row first
  double target = 0;
  Timestamp target_time;
  std::size_t target_index = 0;  // index of the target row in the input rows
};

/// One row per cadence tick (ticks are multiples of `cadence` since the
/// epoch) where every source has a point within ±tolerance; the nearest
/// point wins, the earlier one on a tie. Sources are keyed by the feature
/// and target names above. Throws MissingMetric.
std::vector<FeatureRow> align(const std::map<std::string, std::vector<SeriesPoint>, std::less<>>& sources,
                              Duration cadence, Duration tolerance);

/// Throws TooFewRows (< 2 rows) or ConstantFeature(name).
NormStats fit_norm(std::span<const FeatureRow> train);

FeatureRow apply_norm(const NormStats& stats, const FeatureRow& row);
std::vector<FeatureRow> apply_norm(const NormStats& stats, std::span<const FeatureRow> rows);
FeatureRow inverse_norm(const NormStats& stats, const FeatureRow& row);

double normalize_target(const NormStats& stats, double raw);
double denormalize_target(const NormStats& stats, double normalized);
inline double target_scale(const NormStats& s) { return s.target_max - s.target_min; }

/// Chronological blocks: train and val sizes are floor(N·fraction), test
/// takes the remainder. Throws ValidationError or TooFewRows.
Splits split(std::span<const FeatureRow> rows, SplitSpec spec);

/// Windows of `lookback` consecutive rows that never cross a cadence gap.
/// Throws TooShort when the input cannot hold a single window.
std::vector<WindowedSample> window(std::span<const FeatureRow> rows, std::size_t lookback, Duration cadence,
                                   WindowTarget target = WindowTarget::next);

/// Rows before the first prediction a window of this kind can make.
inline std::size_t warmup(std::size_t lookback, WindowTarget target) {
  return target == WindowTarget::next ? lookback : lookback - 1;
}

/// Header: timestamp,rssi,snr,air_temperature,air_humidity,air_pressure,soil_moisture
std::string to_csv(std::span<const FeatureRow> rows);
std::vector<FeatureRow> rows_from_csv(std::string_view text);

nlohmann::json to_json(const NormStats& stats);
NormStats norm_from_json(const nlohmann::json& j);

}  // namespace wallet::features
