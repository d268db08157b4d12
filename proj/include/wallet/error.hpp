#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace wallet {

enum class Errc {
  malformed_json,
  missing_field,
  invalid_field,
  bad_timestamp,
  source_unavailable,
  store_closed,
  io_failure,
  corruption,
  invalid_range,
  missing_metric,
  constant_feature,
  too_few_rows,
  too_short,
  shape_mismatch,
  domain_error,
  length_mismatch,
  insufficient_history,
  stats_mismatch,
  no_model,
  validation_error,
  unauthorized,
  forbidden,
  not_found,
  conflict,
  payload_too_large,
  unknown_kind,
  bad_value,
  sink_unavailable,
  invalid_transition,
};

std::string_view to_string(Errc code) noexcept;

/// Every failure the library reports carries one of the codes above.
/// `detail` holds the offending name (field, metric, feature index) when the
/// code is parameterised, e.g. MissingField("payload_fields").
class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string detail = {})
      : std::runtime_error(compose(code, detail)), code_(code), detail_(std::move(detail)) {}

  Errc code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  static std::string compose(Errc code, const std::string& detail) {
    std::string s{to_string(code)};
    if (!detail.empty()) s += ": " + detail;
    return s;
  }

  Errc code_;
  std::string detail_;
};

}  // namespace wallet
