#include "wallet/forecast/forecaster.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wallet/csv.hpp"
#include "wallet/error.hpp"
#include "wallet/nn/adam.hpp"
#include "wallet/nn/loss.hpp"
#include "wallet/random.hpp"

namespace wallet::forecast {

using features::FeatureRow;
using features::NormStats;
using features::WindowedSample;
using nn::Index;
using Mat = nn::Matrix<double>;
using Vec = nn::Vector<double>;

namespace {

enum Stream : std::uint64_t { ffnn_init = 1, ffnn_order = 2, lstm_init = 3, lstm_order = 4 };

Mat feature_matrix(std::span<const FeatureRow> rows, std::span<const std::size_t> idx) {
  Mat x(features::kFeatureCount, static_cast<Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c)
    for (std::size_t j = 0; j < features::kFeatureCount; ++j) x(static_cast<Index>(j), static_cast<Index>(c)) = rows[idx[c]].features[j];
  return x;
}

Mat target_matrix(std::span<const double> targets, std::span<const std::size_t> idx) {
  Mat y(1, static_cast<Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) y(0, static_cast<Index>(c)) = targets[idx[c]];
  return y;
}

nn::Sequence<double> sequence_batch(std::span<const WindowedSample> samples, std::span<const std::size_t> idx) {
  const Index steps = samples[idx[0]].inputs.rows();
  nn::Sequence<double> seq(static_cast<std::size_t>(steps), Mat(features::kFeatureCount, static_cast<Index>(idx.size())));
  for (Index s = 0; s < steps; ++s)
    for (std::size_t c = 0; c < idx.size(); ++c)
      seq[static_cast<std::size_t>(s)].col(static_cast<Index>(c)) = samples[idx[c]].inputs.row(s).transpose();
  return seq;
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

/// Minibatch Adam over a flat parameter vector. `loss_grad(batch)` returns
/// the mean loss and flat gradient for a batch of sample indices;
/// `validate()` returns (val_msle, val_mae).
template <typename Net, typename LossGrad, typename Validate>
TrainingHistory fit(Net& net, std::size_t n, std::size_t epochs, std::size_t batch, double lr, Rng& order_rng,
                    bool checkpoint, std::string_view name, const ProgressFn& progress, LossGrad&& loss_grad,
                    Validate&& validate) {
  Vec params = nn::flatten(net);
  nn::AdamHyper<double> hyper;
  hyper.learning_rate = lr;
  nn::AdamState<double> adam(params.size(), hyper);
  TrainingHistory history;
  history.reserve(epochs);
  Vec best = params;
  double best_val = INFINITY;

  std::vector<std::size_t> order = iota_n(n);
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      std::span<const std::size_t> idx(order.data() + start, std::min(batch, n - start));
      auto [loss, grad] = loss_grad(idx);
      loss_sum += loss * static_cast<double>(idx.size());
      nn::adam_step(adam, params, grad);
      nn::unflatten(net, params);
    }
    auto [val_msle, val_mae] = validate();
    EpochRecord rec{epoch, loss_sum / static_cast<double>(n), val_msle, val_mae};
    history.push_back(rec);
    if (progress) progress(name, rec);
    if (checkpoint && val_msle < best_val) {
      best_val = val_msle;
      best = params;
    }
  }
  if (checkpoint) nn::unflatten(net, best);
  return history;
}

double mean_abs(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return a.empty() ? 0 : s / static_cast<double>(a.size());
}

void require_increasing(std::span<const FeatureRow> rows) {
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (!(rows[i - 1].timestamp < rows[i].timestamp))
      throw Error(Errc::validation_error, "rows must be strictly increasing in time");
}

}  // namespace

void validate(const TrainConfig& cfg) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(Errc::validation_error, what);
  };
  require(!cfg.ffnn.hidden.empty(), "ffnn hidden sizes");
  for (auto h : cfg.ffnn.hidden) require(h > 0, "ffnn hidden sizes must be positive");
  require(cfg.ffnn.epochs >= 1 && cfg.lstm.epochs >= 1, "epochs must be >= 1");
  require(cfg.ffnn.batch >= 1 && cfg.lstm.batch >= 1, "batch must be >= 1");
  require(cfg.ffnn.learning_rate >= 0 && cfg.lstm.learning_rate >= 0, "learning rate");
  require(cfg.lstm.units > 0 && cfg.lstm.dense_units > 0, "lstm sizes must be positive");
  require(cfg.lstm.lookback >= 1, "lookback must be >= 1");
  require(cfg.ensemble_weight >= 0 && cfg.ensemble_weight <= 1, "ensemble weight must lie in [0, 1]");
  require(cfg.cadence.count() > 0, "cadence");
}

TrainResult train(std::span<const FeatureRow> rows, const TrainConfig& cfg, const ProgressFn& progress) {
  validate(cfg);
  require_increasing(rows);
  TrainResult result;
  result.splits = features::split(rows, cfg.split);
  const std::size_t n_train = result.splits.train.size();
  const std::size_t n_val = result.splits.val.size();

  ModelSet& m = result.models;
  m.norm = features::fit_norm(result.splits.train);
  m.lookback = cfg.lstm.lookback;
  m.alignment = cfg.lstm.alignment;
  m.cadence = cfg.cadence;
  m.ensemble_weight = cfg.ensemble_weight;

  const auto normalized = features::apply_norm(m.norm, rows);
  std::vector<double> targets(normalized.size());
  for (std::size_t i = 0; i < normalized.size(); ++i) targets[i] = normalized[i].target;
  const double scale = features::target_scale(m.norm);

  // FFNN: one sample per row.
  const auto train_idx = iota_n(n_train);
  std::vector<std::size_t> val_idx(n_val);
  std::iota(val_idx.begin(), val_idx.end(), n_train);
  const Mat x_val = feature_matrix(normalized, val_idx);
  const Mat y_val = target_matrix(targets, val_idx);

  Rng ffnn_rng(derive_seed(cfg.seed, ffnn_init));
  Rng ffnn_order_rng(derive_seed(cfg.seed, ffnn_order));
  m.ffnn = nn::make_ffnn<double>(features::kFeatureCount, cfg.ffnn.hidden, cfg.ffnn.activation, 1, ffnn_rng);
  result.ffnn_history = fit(
      m.ffnn, n_train, cfg.ffnn.epochs, cfg.ffnn.batch, cfg.ffnn.learning_rate, ffnn_order_rng,
      cfg.best_val_checkpoint, "ffnn", progress,
      [&](std::span<const std::size_t> idx) {
        auto g = nn::backprop_ffnn(m.ffnn, feature_matrix(normalized, idx), target_matrix(targets, idx));
        return std::pair<double, Vec>{g.loss, nn::flatten(g.grads)};
      },
      [&] {
        Mat p = nn::predict(m.ffnn, x_val);
        return std::pair{nn::msle(y_val, p), scale * (p - y_val).cwiseAbs().mean()};
      });

  // LSTM: windows are assigned to the split holding their target row.
  const auto windows = features::window(normalized, cfg.lstm.lookback, cfg.cadence, cfg.lstm.alignment);
  std::vector<WindowedSample> train_w, val_w;
  for (const auto& w : windows) {
    if (w.target_index < n_train)
      train_w.push_back(w);
    else if (w.target_index < n_train + n_val)
      val_w.push_back(w);
  }
  if (train_w.empty() || val_w.empty()) throw Error(Errc::too_few_rows, "no lstm windows in train or validation split");
  std::vector<double> train_wt(train_w.size());
  for (std::size_t i = 0; i < train_w.size(); ++i) train_wt[i] = train_w[i].target;
  const auto all_val = iota_n(val_w.size());
  const auto seq_val = sequence_batch(val_w, all_val);
  Mat y_val_w(1, static_cast<Index>(val_w.size()));
  for (std::size_t i = 0; i < val_w.size(); ++i) y_val_w(0, static_cast<Index>(i)) = val_w[i].target;

  Rng lstm_rng(derive_seed(cfg.seed, lstm_init));
  Rng lstm_order_rng(derive_seed(cfg.seed, lstm_order));
  const std::vector<Index> head{cfg.lstm.dense_units};
  m.lstm = nn::make_lstm_net<double>(features::kFeatureCount, cfg.lstm.units, head, cfg.lstm.dense_activation, 1,
                                     lstm_rng, cfg.lstm.forget_bias);
  result.lstm_history = fit(
      m.lstm, train_w.size(), cfg.lstm.epochs, cfg.lstm.batch, cfg.lstm.learning_rate, lstm_order_rng,
      cfg.best_val_checkpoint, "lstm", progress,
      [&](std::span<const std::size_t> idx) {
        auto g = nn::backprop_lstm(m.lstm, sequence_batch(train_w, idx), target_matrix(train_wt, idx));
        return std::pair<double, Vec>{g.loss, nn::flatten(g.grads)};
      },
      [&] {
        Mat p = nn::predict(m.lstm, seq_val);
        return std::pair{nn::msle(y_val_w, p), scale * (p - y_val_w).cwiseAbs().mean()};
      });

  // Test metrics over rows that every predictor can score.
  const auto preds = predict_rows(m, rows);
  std::vector<double> actual, ffnn, lstm, ens, persist;
  for (std::size_t k = 0; k < preds.index.size(); ++k) {
    const std::size_t i = preds.index[k];
    if (i < n_train + n_val || i == 0 || rows[i].timestamp - rows[i - 1].timestamp != cfg.cadence) continue;
    actual.push_back(rows[i].target);
    ffnn.push_back(preds.ffnn[k]);
    lstm.push_back(preds.lstm[k]);
    ens.push_back(ensemble(m.ensemble_weight, preds.ffnn[k], preds.lstm[k]));
    persist.push_back(rows[i - 1].target);
  }
  if (actual.empty()) throw Error(Errc::too_few_rows, "no scorable test rows");
  result.test = {mean_abs(ffnn, actual), mean_abs(lstm, actual), mean_abs(ens, actual), mean_abs(persist, actual),
                 actual.size()};
  return result;
}

RowPredictions predict_rows(const ModelSet& m, std::span<const FeatureRow> rows) {
  RowPredictions out;
  if (rows.size() < m.lookback + (m.alignment == features::WindowTarget::next ? 1 : 0)) return out;
  const auto normalized = features::apply_norm(m.norm, rows);
  const auto windows = features::window(normalized, m.lookback, m.cadence, m.alignment);
  if (windows.empty()) return out;

  std::vector<std::size_t> targets(windows.size());
  for (std::size_t k = 0; k < windows.size(); ++k) targets[k] = windows[k].target_index;
  const Mat f = nn::predict(m.ffnn, feature_matrix(normalized, targets));
  const Mat l = nn::predict(m.lstm, sequence_batch(windows, iota_n(windows.size())));
  out.index = targets;
  for (std::size_t k = 0; k < windows.size(); ++k) {
    out.ffnn.push_back(features::denormalize_target(m.norm, f(0, static_cast<Index>(k))));
    out.lstm.push_back(features::denormalize_target(m.norm, l(0, static_cast<Index>(k))));
  }
  return out;
}

ForecastResult predict_point(const ModelSet& m, std::span<const FeatureRow> rows, std::optional<Timestamp> now) {
  const std::size_t need = m.warmup() + 1;
  if (rows.size() < need)
    throw Error(Errc::insufficient_history, "need " + std::to_string(need) + " rows, have " + std::to_string(rows.size()));
  auto tail = rows.subspan(rows.size() - need);
  for (std::size_t i = 1; i < tail.size(); ++i)
    if (tail[i].timestamp - tail[i - 1].timestamp != m.cadence)
      throw Error(Errc::insufficient_history, "latest rows are not contiguous at the cadence");

  const auto normalized = features::apply_norm(m.norm, tail);
  const FeatureRow& latest = normalized.back();
  Mat x(features::kFeatureCount, 1);
  for (std::size_t j = 0; j < features::kFeatureCount; ++j) x(static_cast<Index>(j), 0) = latest.features[j];

  nn::Sequence<double> seq;
  for (std::size_t r = normalized.size() - m.lookback; r < normalized.size(); ++r) {
    Mat step(features::kFeatureCount, 1);
    for (std::size_t j = 0; j < features::kFeatureCount; ++j) step(static_cast<Index>(j), 0) = normalized[r].features[j];
    seq.push_back(std::move(step));
  }

  ForecastResult r;
  r.timestamp = tail.back().timestamp + (m.alignment == features::WindowTarget::next ? m.cadence : Duration{0});
  r.ffnn = features::denormalize_target(m.norm, nn::predict(m.ffnn, x)(0, 0));
  r.lstm = features::denormalize_target(m.norm, nn::predict(m.lstm, seq)(0, 0));
  r.ensemble = ensemble(m.ensemble_weight, r.ffnn, r.lstm);
  r.model_version = m.version;
  r.stale = now && *now - tail.back().timestamp > 2 * m.cadence;
  return r;
}

std::vector<ForecastResult> forecast_horizon(const ModelSet& m, std::span<const FeatureRow> rows, std::size_t k,
                                             std::optional<Timestamp> now) {
  if (k == 0) throw Error(Errc::validation_error, "steps must be >= 1");
  if (rows.empty()) throw Error(Errc::insufficient_history, "no rows");
  const std::size_t need = m.warmup() + 1;
  std::vector<FeatureRow> extended(rows.end() - static_cast<std::ptrdiff_t>(std::min(need, rows.size())), rows.end());
  const FeatureRow last = rows.back();
  // predict_point estimates the latest row for `current` windows and the
  // row after it for `next` windows.
  const bool nowcast = m.alignment == features::WindowTarget::current;
  std::vector<ForecastResult> out;
  for (std::size_t s = 1; s <= k; ++s) {
    if (nowcast || s > 1) {
      FeatureRow held = last;
      held.timestamp = extended.back().timestamp + m.cadence;
      extended.push_back(held);
    }
    auto r = predict_point(m, extended, now);
    if (now) r.stale = *now - last.timestamp > 2 * m.cadence;
    out.push_back(std::move(r));
  }
  return out;
}

std::string_view to_string(Predictor p) {
  switch (p) {
    case Predictor::ffnn: return "ffnn";
    case Predictor::lstm: return "lstm";
    case Predictor::ensemble: return "ensemble";
  }
  return "ensemble";
}

namespace {

Evaluation finish(std::vector<Residual> residuals, const NormStats* stats) {
  Evaluation e;
  e.residuals = std::move(residuals);
  if (e.residuals.empty()) return e;
  double abs_sum = 0;
  Mat y(1, static_cast<Index>(e.residuals.size())), p(1, static_cast<Index>(e.residuals.size()));
  for (std::size_t i = 0; i < e.residuals.size(); ++i) {
    const auto& r = e.residuals[i];
    abs_sum += std::abs(r.predicted - r.actual);
    if (stats) {
      y(0, static_cast<Index>(i)) = features::normalize_target(*stats, r.actual);
      p(0, static_cast<Index>(i)) = features::normalize_target(*stats, r.predicted);
    }
  }
  e.mae_raw = abs_sum / static_cast<double>(e.residuals.size());
  e.msle_normalized = stats ? nn::msle(y, p) : NAN;
  return e;
}

}  // namespace

Evaluation evaluate(const ModelSet& m, std::span<const FeatureRow> rows, const NormStats& pipeline, Predictor predictor) {
  if (pipeline.fingerprint() != m.norm.fingerprint())
    throw Error(Errc::stats_mismatch, "model " + m.norm.fingerprint() + " vs pipeline " + pipeline.fingerprint());
  require_increasing(rows);
  std::vector<Residual> residuals;
  if (predictor == Predictor::ffnn) {
    const auto normalized = features::apply_norm(m.norm, rows);
    const Mat p = nn::predict(m.ffnn, feature_matrix(normalized, iota_n(rows.size())));
    for (std::size_t i = 0; i < rows.size(); ++i)
      residuals.push_back(
          {rows[i].timestamp, rows[i].target, features::denormalize_target(m.norm, p(0, static_cast<Index>(i)))});
  } else {
    const auto preds = predict_rows(m, rows);
    for (std::size_t k = 0; k < preds.index.size(); ++k) {
      const auto& row = rows[preds.index[k]];
      double v = predictor == Predictor::lstm ? preds.lstm[k] : ensemble(m.ensemble_weight, preds.ffnn[k], preds.lstm[k]);
      residuals.push_back({row.timestamp, row.target, v});
    }
  }
  return finish(std::move(residuals), &m.norm);
}

Evaluation evaluate_persistence(std::span<const FeatureRow> rows, Duration cadence, const NormStats* stats) {
  std::vector<Residual> residuals;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].timestamp - rows[i - 1].timestamp == cadence)
      residuals.push_back({rows[i].timestamp, rows[i].target, rows[i - 1].target});
  return finish(std::move(residuals), stats);
}

std::string history_csv(const TrainingHistory& h) {
  std::string out = "epoch,train_msle,val_msle,val_mae\n";
  for (const auto& r : h) {
    out += std::to_string(r.epoch);
    for (double v : {r.train_msle, r.val_msle, r.val_mae}) (out += ',') += csv::format_double(v);
    out += '\n';
  }
  return out;
}

TrainingHistory history_from_csv(std::string_view text) {
  auto lines = csv::split_lines(text);
  if (lines.empty() || !lines.front().starts_with("epoch,train_msle,val_msle"))
    throw Error(Errc::invalid_field, "history header");
  TrainingHistory h;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto f = csv::split_fields(lines[i]);
    if (f.size() < 3) throw Error(Errc::invalid_field, "history line " + std::to_string(i + 1));
    EpochRecord r;
    r.epoch = static_cast<std::size_t>(csv::parse_double(f[0]));
    r.train_msle = csv::parse_double(f[1]);
    r.val_msle = csv::parse_double(f[2]);
    if (f.size() > 3) r.val_mae = csv::parse_double(f[3]);
    h.push_back(r);
  }
  return h;
}

nlohmann::json to_json(const TestMetrics& t) {
  return {{"ffnn_mae", t.ffnn_mae},
          {"lstm_mae", t.lstm_mae},
          {"ensemble_mae", t.ensemble_mae},
          {"persistence_mae", t.persistence_mae},
          {"points", t.points}};
}

nlohmann::json to_json(const ForecastResult& r) {
  return {{"timestamp", format_rfc3339(r.timestamp)},
          {"ffnn", r.ffnn},
          {"lstm", r.lstm},
          {"ensemble", r.ensemble},
          {"model_version", r.model_version},
          {"stale", r.stale}};
}

}  // namespace wallet::forecast
