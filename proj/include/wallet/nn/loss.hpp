#pragma once

#include <cmath>

#include "wallet/error.hpp"
#include "wallet/nn/types.hpp"

namespace wallet::nn {

namespace detail {

template <typename A, typename B>
void require_same_shape(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(Errc::length_mismatch);
}

template <typename A>
void require_log_domain(const Eigen::MatrixBase<A>& a) {
  using Scalar = typename A::Scalar;
  if ((a.array() <= Scalar(-1)).any()) throw Error(Errc::domain_error, "msle argument <= -1");
}

}  // namespace detail

/// Mean over all entries of (ln(1 + y_true) - ln(1 + y_pred))^2.
template <typename A, typename B>
typename A::Scalar msle(const Eigen::MatrixBase<A>& y_true, const Eigen::MatrixBase<B>& y_pred) {
  detail::require_same_shape(y_true, y_pred);
  detail::require_log_domain(y_true);
  detail::require_log_domain(y_pred);
  if (y_true.size() == 0) return 0;
  auto d = y_true.array().log1p() - y_pred.array().log1p();
  return d.square().mean();
}

/// d msle / d y_pred, same shape as y_pred.
template <typename A, typename B>
Matrix<typename A::Scalar> msle_gradient(const Eigen::MatrixBase<A>& y_true, const Eigen::MatrixBase<B>& y_pred) {
  using Scalar = typename A::Scalar;
  detail::require_same_shape(y_true, y_pred);
  detail::require_log_domain(y_true);
  detail::require_log_domain(y_pred);
  const Scalar n = Scalar(y_pred.size());
  auto d = y_true.array().log1p() - y_pred.array().log1p();
  return (Scalar(-2) / n * d / (Scalar(1) + y_pred.array())).matrix();
}

template <typename A, typename B>
typename A::Scalar mae(const Eigen::MatrixBase<A>& y_true, const Eigen::MatrixBase<B>& y_pred) {
  detail::require_same_shape(y_true, y_pred);
  if (y_true.size() == 0) return 0;
  return (y_true - y_pred).cwiseAbs().mean();
}

}  // namespace wallet::nn
