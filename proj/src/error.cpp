#include "wallet/error.hpp"

namespace wallet {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::malformed_json: return "MalformedJson";
    case Errc::missing_field: return "MissingField";
    case Errc::invalid_field: return "InvalidField";
    case Errc::bad_timestamp: return "BadTimestamp";
    case Errc::source_unavailable: return "SourceUnavailable";
    case Errc::store_closed: return "StoreClosed";
    case Errc::io_failure: return "IoFailure";
    case Errc::corruption: return "Corruption";
    case Errc::invalid_range: return "InvalidRange";
    case Errc::missing_metric: return "MissingMetric";
    case Errc::constant_feature: return "ConstantFeature";
    case Errc::too_few_rows: return "TooFewRows";
    case Errc::too_short: return "TooShort";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::domain_error: return "DomainError";
    case Errc::length_mismatch: return "LengthMismatch";
    case Errc::insufficient_history: return "InsufficientHistory";
    case Errc::stats_mismatch: return "StatsMismatch";
    case Errc::no_model: return "NoModel";
    case Errc::validation_error: return "ValidationError";
    case Errc::unauthorized: return "Unauthorized";
    case Errc::forbidden: return "Forbidden";
    case Errc::not_found: return "NotFound";
    case Errc::conflict: return "Conflict";
    case Errc::payload_too_large: return "PayloadTooLarge";
    case Errc::unknown_kind: return "UnknownKind";
    case Errc::bad_value: return "BadValue";
    case Errc::sink_unavailable: return "SinkUnavailable";
    case Errc::invalid_transition: return "InvalidTransition";
  }
  return "Unknown";
}

}  // namespace wallet
