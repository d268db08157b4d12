#pragma once

#include "wallet/error.hpp"
#include "wallet/nn/activation.hpp"
#include "wallet/nn/types.hpp"

namespace wallet::nn {

template <typename Scalar>
struct DenseLayer {
  Matrix<Scalar> W;  // outputs × inputs
  Vector<Scalar> b;
  Activation activation = Activation::linear;

  Index inputs() const { return W.cols(); }
  Index outputs() const { return W.rows(); }
};

/// Pre-activation Wx + b for a batch laid out one sample per column.
template <typename Scalar, typename Derived>
Matrix<Scalar> dense_affine(const DenseLayer<Scalar>& layer, const Eigen::MatrixBase<Derived>& x) {
  if (x.rows() != layer.inputs() || layer.b.size() != layer.outputs())
    throw Error(Errc::shape_mismatch, "dense input rows");
  Matrix<Scalar> z = layer.W * x;
  z.colwise() += layer.b;
  return z;
}

template <typename Scalar, typename Derived>
Matrix<Scalar> dense_forward(const DenseLayer<Scalar>& layer, const Eigen::MatrixBase<Derived>& x) {
  return activate(layer.activation, dense_affine(layer, x));
}

}  // namespace wallet::nn
