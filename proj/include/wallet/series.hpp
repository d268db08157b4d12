#pragma once

#include <string>

#include "wallet/time.hpp"

namespace wallet {

struct SeriesKey {
  std::string device_id;
  std::string metric;

  auto operator<=>(const SeriesKey&) const = default;
};

/// device_id non-empty without path separators; metric matches [a-z0-9_]+.
bool valid_device_id(std::string_view id);
bool valid_metric_name(std::string_view metric);
void validate(const SeriesKey& key);

struct SeriesPoint {
  Timestamp timestamp;
  double value = 0;

  bool operator==(const SeriesPoint&) const = default;
};

}  // namespace wallet
