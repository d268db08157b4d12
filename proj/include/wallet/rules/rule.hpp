#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "wallet/series.hpp"

namespace wallet::store {
class SeriesStore;
}

namespace wallet::rules {

enum class RuleKind { instant, cumulative };
enum class Operator { greater, less, equal };
enum class Aggregation { sum, mean };

std::string_view to_string(RuleKind k);
std::string_view to_string(Operator op);
std::string_view to_string(Aggregation a);
/// Accept the names above; operators also accept `>`, `<`, `=` and `==`.
/// Throw ValidationError.
RuleKind parse_rule_kind(std::string_view s);
Operator parse_operator(std::string_view s);
Aggregation parse_aggregation(std::string_view s);

inline constexpr double kEqualTolerance = 1e-6;

struct Rule {
  std::string id;
  std::string owner;
  std::string device_id;
  std::string metric;
  RuleKind kind = RuleKind::instant;
  Operator op = Operator::greater;
  double threshold = 0;
  Duration period{0};  // cumulative only
  Aggregation aggregation = Aggregation::sum;
  Duration cooldown{0};
  bool enabled = true;

  bool operator==(const Rule&) const = default;
};

/// Throws ValidationError naming the offending field.
void validate(const Rule& rule);

/// Durations travel as whole seconds (`period_seconds`, `cooldown_seconds`).
nlohmann::json to_json(const Rule& rule);
Rule rule_from_json(const nlohmann::json& j);

bool compare(Operator op, double value, double threshold);

bool eval_instant(const Rule& rule, double value);

/// Sum or mean of the points; nullopt when empty.
std::optional<double> aggregate(Aggregation a, std::span<const SeriesPoint> points);

struct Decision {
  bool fire = false;
  std::optional<double> value;  // aggregate, absent for an empty window
};

/// Aggregates the rule's series over (now - period, now]. An empty window
/// never fires.
Decision eval_cumulative(const Rule& rule, const store::SeriesStore& store, Timestamp now);

/// Human-readable predicate, e.g. `sum(soil_moisture, 3600s) > 40`.
std::string describe(const Rule& rule);

}  // namespace wallet::rules
