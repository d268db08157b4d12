#pragma once

#include <cmath>
#include <cstdint>

#include "wallet/random.hpp"
#include "wallet/nn/types.hpp"

namespace wallet::nn {

template <typename Scalar = double>
Scalar xavier_limit(Index fan_in, Index fan_out) {
  return std::sqrt(Scalar(6) / Scalar(fan_in + fan_out));
}

/// Glorot-uniform draw, returned as a fan_out × fan_in weight matrix.
/// Entries are filled column-major from the generator.
template <typename Scalar = double>
Matrix<Scalar> xavier_init(Index fan_in, Index fan_out, Rng& rng) {
  const Scalar limit = xavier_limit<Scalar>(fan_in, fan_out);
  Matrix<Scalar> w(fan_out, fan_in);
  for (Index j = 0; j < w.cols(); ++j)
    for (Index i = 0; i < w.rows(); ++i) w(i, j) = Scalar(rng.uniform(-double(limit), double(limit)));
  return w;
}

template <typename Scalar = double>
Matrix<Scalar> xavier_init(Index fan_in, Index fan_out, std::uint64_t seed) {
  Rng rng(seed);
  return xavier_init<Scalar>(fan_in, fan_out, rng);
}

}  // namespace wallet::nn
