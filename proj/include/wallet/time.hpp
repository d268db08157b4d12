#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <string_view>

namespace wallet {

// Integer microseconds since the Unix epoch; RFC 3339 only at the boundaries.
using Duration = std::chrono::microseconds;
using Timestamp = std::chrono::sys_time<Duration>;

inline std::int64_t to_micros(Timestamp t) { return t.time_since_epoch().count(); }
inline Timestamp from_micros(std::int64_t us) { return Timestamp{Duration{us}}; }

inline Duration minutes(std::int64_t m) { return std::chrono::duration_cast<Duration>(std::chrono::minutes{m}); }
inline Duration seconds(std::int64_t s) { return std::chrono::duration_cast<Duration>(std::chrono::seconds{s}); }

/// Accepts `YYYY-MM-DDTHH:MM:SS[.fraction](Z|±HH:MM)`. Fractions finer than a
/// microsecond are truncated. Throws Error(bad_timestamp).
Timestamp parse_rfc3339(std::string_view text);

/// UTC with a `Z` suffix; the fractional part is printed only when non-zero.
std::string format_rfc3339(Timestamp t);

Timestamp now_utc();

}  // namespace wallet
