#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "wallet/error.hpp"
#include "wallet/nn/types.hpp"

namespace wallet::nn {

enum class Activation { elu, tanh, linear };

inline std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::elu: return "elu";
    case Activation::tanh: return "tanh";
    case Activation::linear: return "linear";
  }
  return "linear";
}

inline Activation parse_activation(std::string_view name) {
  if (name == "elu") return Activation::elu;
  if (name == "tanh") return Activation::tanh;
  if (name == "linear") return Activation::linear;
  throw Error(Errc::validation_error, "activation " + std::string(name));
}

// ELU with alpha = 1.
template <typename Scalar>
Scalar elu(Scalar x) {
  return x > Scalar(0) ? x : std::expm1(x);
}

template <typename Scalar>
Scalar elu_derivative(Scalar x) {
  return x > Scalar(0) ? Scalar(1) : std::exp(x);
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

template <typename Derived>
Matrix<typename Derived::Scalar> activate(Activation a, const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  switch (a) {
    case Activation::elu: return z.unaryExpr([](Scalar v) { return elu(v); });
    case Activation::tanh: return z.array().tanh().matrix();
    case Activation::linear: break;
  }
  return z;
}

/// Derivative of the activation, given both the pre-activation `z` and the
/// activation output `a` (tanh reuses `a`).
template <typename DerivedZ, typename DerivedA>
Matrix<typename DerivedZ::Scalar> activation_derivative(Activation act, const Eigen::MatrixBase<DerivedZ>& z,
                                                        const Eigen::MatrixBase<DerivedA>& a) {
  using Scalar = typename DerivedZ::Scalar;
  switch (act) {
    case Activation::elu: return z.unaryExpr([](Scalar v) { return elu_derivative(v); });
    case Activation::tanh: return (Scalar(1) - a.array().square()).matrix();
    case Activation::linear: break;
  }
  return Matrix<Scalar>::Ones(z.rows(), z.cols());
}

}  // namespace wallet::nn
