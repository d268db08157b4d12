#include "wallet/rules/rule.hpp"

#include <cmath>
#include <sstream>

#include "wallet/error.hpp"
#include "wallet/store/series_store.hpp"

namespace wallet::rules {

namespace {

[[noreturn]] void invalid(const std::string& field) { throw Error(Errc::validation_error, field); }

std::int64_t whole_seconds(Duration d) { return std::chrono::duration_cast<std::chrono::seconds>(d).count(); }

}  // namespace

std::string_view to_string(RuleKind k) { return k == RuleKind::instant ? "instant" : "cumulative"; }

std::string_view to_string(Operator op) {
  switch (op) {
    case Operator::greater: return "greater";
    case Operator::less: return "less";
    case Operator::equal: return "equal";
  }
  return "?";
}

std::string_view to_string(Aggregation a) { return a == Aggregation::sum ? "sum" : "mean"; }

RuleKind parse_rule_kind(std::string_view s) {
  if (s == "instant") return RuleKind::instant;
  if (s == "cumulative") return RuleKind::cumulative;
  invalid("kind");
}

Operator parse_operator(std::string_view s) {
  if (s == "greater" || s == ">") return Operator::greater;
  if (s == "less" || s == "<") return Operator::less;
  if (s == "equal" || s == "=" || s == "==") return Operator::equal;
  invalid("operator");
}

Aggregation parse_aggregation(std::string_view s) {
  if (s == "sum") return Aggregation::sum;
  if (s == "mean") return Aggregation::mean;
  invalid("aggregation");
}

void validate(const Rule& rule) {
  if (!valid_device_id(rule.device_id)) invalid("device_id");
  if (!valid_metric_name(rule.metric)) invalid("metric");
  if (!std::isfinite(rule.threshold)) invalid("threshold");
  if (rule.cooldown < Duration::zero()) invalid("cooldown");
  if (rule.kind == RuleKind::cumulative && rule.period <= Duration::zero()) invalid("period");
}

nlohmann::json to_json(const Rule& rule) {
  nlohmann::json j{{"id", rule.id},
                   {"owner", rule.owner},
                   {"device_id", rule.device_id},
                   {"metric", rule.metric},
                   {"kind", to_string(rule.kind)},
                   {"operator", to_string(rule.op)},
                   {"threshold", rule.threshold},
                   {"cooldown_seconds", whole_seconds(rule.cooldown)},
                   {"enabled", rule.enabled}};
  if (rule.kind == RuleKind::cumulative) {
    j["period_seconds"] = whole_seconds(rule.period);
    j["aggregation"] = to_string(rule.aggregation);
  }
  return j;
}

Rule rule_from_json(const nlohmann::json& j) {
  if (!j.is_object()) invalid("rule");
  Rule r;
  auto str = [&](const char* key, std::string& out, bool required) {
    if (!j.contains(key)) {
      if (required) invalid(key);
      return;
    }
    if (!j[key].is_string()) invalid(key);
    out = j[key].get<std::string>();
  };
  auto secs = [&](const char* key, Duration& out) {
    if (!j.contains(key)) return;
    const auto& v = j[key];
    if (!v.is_number() || !std::isfinite(v.get<double>())) invalid(key);
    out = std::chrono::duration_cast<Duration>(std::chrono::duration<double>(v.get<double>()));
  };
  str("id", r.id, false);
  str("owner", r.owner, false);
  str("device_id", r.device_id, true);
  str("metric", r.metric, true);
  std::string s = "instant";
  str("kind", s, false);
  r.kind = parse_rule_kind(s);
  str("operator", s, true);
  r.op = parse_operator(s);
  if (!j.contains("threshold") || !j["threshold"].is_number()) invalid("threshold");
  r.threshold = j["threshold"].get<double>();
  if (r.kind == RuleKind::cumulative) {
    if (!j.contains("period_seconds")) invalid("period");
    secs("period_seconds", r.period);
    s = "sum";
    str("aggregation", s, false);
    r.aggregation = parse_aggregation(s);
  }
  secs("cooldown_seconds", r.cooldown);
  if (j.contains("enabled")) {
    if (!j["enabled"].is_boolean()) invalid("enabled");
    r.enabled = j["enabled"].get<bool>();
  }
  validate(r);
  return r;
}

bool compare(Operator op, double value, double threshold) {
  switch (op) {
    case Operator::greater: return value > threshold;
    case Operator::less: return value < threshold;
    case Operator::equal: return std::abs(value - threshold) <= kEqualTolerance;
  }
  return false;
}

bool eval_instant(const Rule& rule, double value) { return compare(rule.op, value, rule.threshold); }

std::optional<double> aggregate(Aggregation a, std::span<const SeriesPoint> points) {
  if (points.empty()) return std::nullopt;
  double sum = 0;
  for (const auto& p : points) sum += p.value;
  return a == Aggregation::sum ? sum : sum / static_cast<double>(points.size());
}

Decision eval_cumulative(const Rule& rule, const store::SeriesStore& store, Timestamp now) {
  const Duration tick{1};
  auto points = store.query({rule.device_id, rule.metric}, now - rule.period + tick, now + tick);
  Decision d;
  d.value = aggregate(rule.aggregation, points);
  d.fire = d.value && compare(rule.op, *d.value, rule.threshold);
  return d;
}

std::string describe(const Rule& rule) {
  std::string_view sym = rule.op == Operator::greater ? ">" : rule.op == Operator::less ? "<" : "=";
  std::string lhs = rule.metric;
  if (rule.kind == RuleKind::cumulative)
    lhs = std::string(to_string(rule.aggregation)) + "(" + rule.metric + ", " +
          std::to_string(whole_seconds(rule.period)) + "s)";
  std::ostringstream os;
  os << lhs << ' ' << sym << ' ' << rule.threshold;
  return os.str();
}

}  // namespace wallet::rules
