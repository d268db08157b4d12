#pragma once

#include <optional>

#include "wallet/error.hpp"

namespace testing {

/// Code of the wallet::Error thrown by fn, or nullopt when nothing is thrown.
template <typename Fn>
std::optional<wallet::Errc> errc_of(Fn&& fn) {
  try {
    fn();
  } catch (const wallet::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace testing
