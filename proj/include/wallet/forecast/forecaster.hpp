#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "wallet/features/pipeline.hpp"
#include "wallet/nn/activation.hpp"
#include "wallet/nn/ffnn.hpp"
#include "wallet/nn/lstm_net.hpp"

namespace wallet::forecast {

struct FfnnConfig {
  std::vector<nn::Index> hidden{128, 64};
  nn::Activation activation = nn::Activation::elu;
  std::size_t epochs = 500;
  std::size_t batch = 32;
  double learning_rate = 1e-4;
};

struct LstmConfig {
  nn::Index units = 12;
  nn::Index dense_units = 20;
  nn::Activation dense_activation = nn::Activation::elu;
  std::size_t lookback = 6;
  std::size_t epochs = 500;
  std::size_t batch = 32;
  double learning_rate = 1e-4;
  double forget_bias = 1.0;
  /// `current`: the window ends at the row whose moisture is estimated.
  features::WindowTarget alignment = features::WindowTarget::current;
};

struct TrainConfig {
  FfnnConfig ffnn;
  LstmConfig lstm;
  features::SplitSpec split;
  std::uint64_t seed = 1;
  double ensemble_weight = 0.5;  // weight of the FFNN in the ensemble
  Duration cadence = minutes(10);
  /// Keep the parameters of the epoch with the lowest validation loss.
  bool best_val_checkpoint = false;
};

void validate(const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_msle = 0;  // sample-weighted mean over the epoch's batches
  double val_msle = 0;
  double val_mae = 0;     // raw units

  bool operator==(const EpochRecord&) const = default;
};

using TrainingHistory = std::vector<EpochRecord>;

/// MAE in raw units over the same test target rows for every predictor.
struct TestMetrics {
  double ffnn_mae = 0;
  double lstm_mae = 0;
  double ensemble_mae = 0;
  double persistence_mae = 0;
  std::size_t points = 0;
};

/// A trained, immutable model pair plus everything needed to serve it.
struct ModelSet {
  nn::Ffnn<double> ffnn;
  nn::LstmNet<double> lstm;
  features::NormStats norm;
  std::size_t lookback = 6;
  features::WindowTarget alignment = features::WindowTarget::current;
  Duration cadence = minutes(10);
  double ensemble_weight = 0.5;
  std::string version;

  std::size_t warmup() const { return features::warmup(lookback, alignment); }
};

struct TrainResult {
  ModelSet models;
  TrainingHistory ffnn_history;
  TrainingHistory lstm_history;
  TestMetrics test;
  features::Splits splits;
};

using ProgressFn = std::function<void(std::string_view model, const EpochRecord&)>;

/// Rows must be strictly increasing in time. Deterministic for a fixed seed.
/// Throws TooFewRows, ConstantFeature, ValidationError.
TrainResult train(std::span<const features::FeatureRow> rows, const TrainConfig& cfg, const ProgressFn& progress = {});

inline double ensemble(double w, double ffnn, double lstm) { return w * ffnn + (1 - w) * lstm; }

struct ForecastResult {
  Timestamp timestamp;
  double ffnn = 0;  // raw units
  double lstm = 0;
  double ensemble = 0;
  std::string model_version;
  bool stale = false;  // latest row more than two cadences older than `now`
};

/// Uses the tail of `rows` (raw units, at least warmup()+1 rows, the last
/// lookback rows contiguous at the cadence). The FFNN reads the latest row,
/// the LSTM the last `lookback` rows. Throws InsufficientHistory.
ForecastResult predict_point(const ModelSet& m, std::span<const features::FeatureRow> rows,
                             std::optional<Timestamp> now = std::nullopt);

/// k one-step predictions at cadence spacing after the latest row; exogenous
/// features are held at their last observed values.
std::vector<ForecastResult> forecast_horizon(const ModelSet& m, std::span<const features::FeatureRow> rows,
                                             std::size_t k, std::optional<Timestamp> now = std::nullopt);

enum class Predictor { ffnn, lstm, ensemble };
std::string_view to_string(Predictor p);

struct Residual {
  Timestamp timestamp;
  double actual = 0;
  double predicted = 0;
};

struct Evaluation {
  double mae_raw = 0;
  double msle_normalized = 0;
  std::vector<Residual> residuals;
};

/// Rows in raw units. `pipeline` is the statistics the caller's data was
/// prepared with; it must match the model's. Throws StatsMismatch.
Evaluation evaluate(const ModelSet& m, std::span<const features::FeatureRow> rows, const features::NormStats& pipeline,
                    Predictor predictor = Predictor::ensemble);

/// ŷ_t = y_{t−1} for every row whose predecessor is one cadence earlier.
/// msle_normalized is filled in only when stats are given.
Evaluation evaluate_persistence(std::span<const features::FeatureRow> rows, Duration cadence,
                                const features::NormStats* stats = nullptr);

/// Per-target-row predictions of both models, raw units, for every row that
/// has a complete lookback window.
struct RowPredictions {
  std::vector<std::size_t> index;
  std::vector<double> ffnn;
  std::vector<double> lstm;
};
RowPredictions predict_rows(const ModelSet& m, std::span<const features::FeatureRow> rows);

std::string history_csv(const TrainingHistory& h);
TrainingHistory history_from_csv(std::string_view text);
nlohmann::json to_json(const TestMetrics& t);
nlohmann::json to_json(const ForecastResult& r);

}  // namespace wallet::forecast
