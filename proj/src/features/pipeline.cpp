#include "wallet/features/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>

#include "wallet/csv.hpp"
#include "wallet/error.hpp"

namespace wallet::features {
namespace {

const SeriesPoint* nearest(const std::vector<SeriesPoint>& pts, Timestamp tick, Duration tol) {
  auto it = std::lower_bound(pts.begin(), pts.end(), tick,
                             [](const SeriesPoint& p, Timestamp t) { return p.timestamp < t; });
  const SeriesPoint* best = nullptr;
  Duration best_d{};
  if (it != pts.begin()) {
    auto prev = std::prev(it);
    best = &*prev;
    best_d = tick - prev->timestamp;
  }
  if (it != pts.end()) {
    Duration d = it->timestamp - tick;
    if (!best || d < best_d) {
      best = &*it;
      best_d = d;
    }
  }
  if (!best || best_d > tol) return nullptr;
  return best;
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

}  // namespace

std::string NormStats::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xff;
      h *= 0x100000001b3ull;
    }
  };
  for (const auto* arr : {&mean, &centered_min, &centered_max})
    for (double v : *arr) mix(v);
  mix(target_min);
  mix(target_max);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<FeatureRow> align(const std::map<std::string, std::vector<SeriesPoint>, std::less<>>& sources,
                              Duration cadence, Duration tolerance) {
  if (cadence.count() <= 0 || tolerance.count() < 0) throw Error(Errc::validation_error, "cadence/tolerance");

  std::array<const std::vector<SeriesPoint>*, kFeatureCount + 1> cols{};
  for (std::size_t j = 0; j <= kFeatureCount; ++j) {
    auto name = j < kFeatureCount ? kFeatureNames[j] : kTargetName;
    auto it = sources.find(name);
    if (it == sources.end()) throw Error(Errc::missing_metric, std::string(name));
    cols[j] = &it->second;
  }

  std::vector<std::vector<SeriesPoint>> sorted;
  sorted.reserve(cols.size());
  for (auto& c : cols) {
    if (!std::is_sorted(c->begin(), c->end(),
                        [](const SeriesPoint& a, const SeriesPoint& b) { return a.timestamp < b.timestamp; })) {
      sorted.push_back(*c);
      std::stable_sort(sorted.back().begin(), sorted.back().end(),
                       [](const SeriesPoint& a, const SeriesPoint& b) { return a.timestamp < b.timestamp; });
      c = &sorted.back();
    }
  }
  std::vector<FeatureRow> rows;
  bool any_empty = std::any_of(cols.begin(), cols.end(), [](auto* c) { return c->empty(); });
  if (any_empty) return rows;

  Timestamp lo = cols[0]->front().timestamp, hi = cols[0]->back().timestamp;
  for (auto* c : cols) {
    lo = std::max(lo, c->front().timestamp);
    hi = std::min(hi, c->back().timestamp);
  }
  const std::int64_t step = cadence.count();
  std::int64_t first = floor_div(to_micros(lo) - tolerance.count() + step - 1, step);
  std::int64_t last = floor_div(to_micros(hi) + tolerance.count(), step);

  for (std::int64_t k = first; k <= last; ++k) {
    Timestamp tick = from_micros(k * step);
    FeatureRow row{tick, {}, 0};
    bool complete = true;
    for (std::size_t j = 0; j <= kFeatureCount && complete; ++j) {
      const SeriesPoint* p = nearest(*cols[j], tick, tolerance);
      if (!p) {
        complete = false;
        break;
      }
      if (j < kFeatureCount)
        row.features[j] = p->value;
      else
        row.target = p->value;
    }
    if (complete) rows.push_back(row);
  }
  return rows;
}

NormStats fit_norm(std::span<const FeatureRow> train) {
  if (train.size() < 2) throw Error(Errc::too_few_rows, "normalization needs at least 2 rows");
  NormStats s;
  const double n = static_cast<double>(train.size());
  for (std::size_t j = 0; j < kFeatureCount; ++j) {
    double sum = 0;
    for (const auto& r : train) sum += r.features[j];
    s.mean[j] = sum / n;
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& r : train) {
      double c = r.features[j] - s.mean[j];
      lo = std::min(lo, c);
      hi = std::max(hi, c);
    }
    if (!(hi > lo)) throw Error(Errc::constant_feature, std::string(kFeatureNames[j]));
    s.centered_min[j] = lo;
    s.centered_max[j] = hi;
  }
  s.target_min = INFINITY;
  s.target_max = -INFINITY;
  for (const auto& r : train) {
    s.target_min = std::min(s.target_min, r.target);
    s.target_max = std::max(s.target_max, r.target);
  }
  if (!(s.target_max > s.target_min)) throw Error(Errc::constant_feature, std::string(kTargetName));
  return s;
}

FeatureRow apply_norm(const NormStats& s, const FeatureRow& row) {
  FeatureRow out{row.timestamp, {}, normalize_target(s, row.target)};
  for (std::size_t j = 0; j < kFeatureCount; ++j)
    out.features[j] = ((row.features[j] - s.mean[j]) - s.centered_min[j]) / (s.centered_max[j] - s.centered_min[j]);
  return out;
}

std::vector<FeatureRow> apply_norm(const NormStats& s, std::span<const FeatureRow> rows) {
  std::vector<FeatureRow> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(apply_norm(s, r));
  return out;
}

FeatureRow inverse_norm(const NormStats& s, const FeatureRow& row) {
  FeatureRow out{row.timestamp, {}, denormalize_target(s, row.target)};
  for (std::size_t j = 0; j < kFeatureCount; ++j)
    out.features[j] = row.features[j] * (s.centered_max[j] - s.centered_min[j]) + s.centered_min[j] + s.mean[j];
  return out;
}

double normalize_target(const NormStats& s, double raw) { return (raw - s.target_min) / (s.target_max - s.target_min); }

double denormalize_target(const NormStats& s, double normalized) {
  return normalized * (s.target_max - s.target_min) + s.target_min;
}

Splits split(std::span<const FeatureRow> rows, SplitSpec spec) {
  for (double f : {spec.train, spec.val, spec.test})
    if (!(f > 0 && f < 1)) throw Error(Errc::validation_error, "split fractions must lie in (0, 1)");
  if (std::fabs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
    throw Error(Errc::validation_error, "split fractions must sum to 1");

  const double n = static_cast<double>(rows.size());
  const auto n_train = static_cast<std::size_t>(std::floor(n * spec.train + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(n * spec.val + 1e-9));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= rows.size())
    throw Error(Errc::too_few_rows, std::to_string(rows.size()) + " rows cannot fill three splits");

  Splits out;
  out.train.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(rows.begin() + static_cast<std::ptrdiff_t>(n_train),
                 rows.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(rows.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), rows.end());
  return out;
}

std::vector<WindowedSample> window(std::span<const FeatureRow> rows, std::size_t lookback, Duration cadence,
                                   WindowTarget target) {
  if (lookback == 0) throw Error(Errc::validation_error, "lookback must be >= 1");
  const std::size_t span_rows = lookback + (target == WindowTarget::next ? 1 : 0);
  if (rows.size() < span_rows)
    throw Error(Errc::too_short, std::to_string(rows.size()) + " rows for lookback " + std::to_string(lookback));

  std::vector<WindowedSample> out;
  std::size_t segment_start = 0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (k > segment_start && rows[k].timestamp - rows[k - 1].timestamp != cadence) segment_start = k;
    // the window ending at row k (inclusive) spans rows [k - span_rows + 1, k]
    if (k + 1 < segment_start + span_rows) continue;
    const std::size_t first = k + 1 - span_rows;
    WindowedSample s;
    s.inputs.resize(static_cast<Eigen::Index>(lookback), kFeatureCount);
    for (std::size_t r = 0; r < lookback; ++r)
      for (std::size_t j = 0; j < kFeatureCount; ++j)
        s.inputs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = rows[first + r].features[j];
    s.target = rows[k].target;
    s.target_time = rows[k].timestamp;
    s.target_index = k;
    out.push_back(std::move(s));
  }
  return out;
}

std::string to_csv(std::span<const FeatureRow> rows) {
  std::string out = "timestamp";
  for (auto n : kFeatureNames) (out += ',') += n;
  (out += ',') += kTargetName;
  out += '\n';
  for (const auto& r : rows) {
    out += format_rfc3339(r.timestamp);
    for (double v : r.features) (out += ',') += csv::format_double(v);
    (out += ',') += csv::format_double(r.target);
    out += '\n';
  }
  return out;
}

std::vector<FeatureRow> rows_from_csv(std::string_view text) {
  auto lines = csv::split_lines(text);
  if (lines.empty()) throw Error(Errc::missing_field, "header");
  auto header = csv::split_fields(lines.front());
  if (header.size() != kFeatureCount + 2 || header[0] != "timestamp") throw Error(Errc::invalid_field, "header");
  for (std::size_t j = 0; j < kFeatureCount; ++j)
    if (header[j + 1] != kFeatureNames[j]) throw Error(Errc::invalid_field, "header column " + std::string(header[j + 1]));
  if (header.back() != kTargetName) throw Error(Errc::invalid_field, "header target column");

  std::vector<FeatureRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = csv::split_fields(lines[i]);
    if (f.size() != kFeatureCount + 2) throw Error(Errc::invalid_field, "line " + std::to_string(i + 1));
    FeatureRow r;
    r.timestamp = parse_rfc3339(f[0]);
    for (std::size_t j = 0; j < kFeatureCount; ++j) r.features[j] = csv::parse_double(f[j + 1]);
    r.target = csv::parse_double(f.back());
    rows.push_back(r);
  }
  return rows;
}

nlohmann::json to_json(const NormStats& s) {
  nlohmann::json features = nlohmann::json::object();
  for (std::size_t j = 0; j < kFeatureCount; ++j)
    features[std::string(kFeatureNames[j])] = {
        {"mean", s.mean[j]}, {"centered_min", s.centered_min[j]}, {"centered_max", s.centered_max[j]}};
  return {{"feature_order", kFeatureNames},
          {"features", features},
          {"target", {{"name", kTargetName}, {"min", s.target_min}, {"max", s.target_max}}},
          {"fingerprint", s.fingerprint()}};
}

NormStats norm_from_json(const nlohmann::json& j) {
  try {
    NormStats s;
    for (std::size_t k = 0; k < kFeatureCount; ++k) {
      const auto& f = j.at("features").at(std::string(kFeatureNames[k]));
      s.mean[k] = f.at("mean").get<double>();
      s.centered_min[k] = f.at("centered_min").get<double>();
      s.centered_max[k] = f.at("centered_max").get<double>();
    }
    s.target_min = j.at("target").at("min").get<double>();
    s.target_max = j.at("target").at("max").get<double>();
    if (j.contains("fingerprint") && j["fingerprint"].get<std::string>() != s.fingerprint())
      throw Error(Errc::stats_mismatch, "norm.json fingerprint does not match its contents");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::validation_error, e.what());
  }
}

}  // namespace wallet::features
