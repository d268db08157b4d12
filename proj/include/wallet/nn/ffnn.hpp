#pragma once

#include <span>
#include <vector>

#include "wallet/nn/dense.hpp"
#include "wallet/nn/init.hpp"
#include "wallet/nn/loss.hpp"

namespace wallet::nn {

/// Feed-forward stack of dense layers.
template <typename Scalar>
struct Ffnn {
  std::vector<DenseLayer<Scalar>> layers;

  Index inputs() const { return layers.empty() ? 0 : layers.front().inputs(); }
  Index outputs() const { return layers.empty() ? 0 : layers.back().outputs(); }
};

/// Xavier weights, zero biases, `hidden_activation` on hidden layers and a
/// linear output layer.
template <typename Scalar = double>
Ffnn<Scalar> make_ffnn(Index inputs, std::span<const Index> hidden, Activation hidden_activation, Index outputs,
                       Rng& rng) {
  Ffnn<Scalar> net;
  Index fan_in = inputs;
  for (Index width : hidden) {
    net.layers.push_back({xavier_init<Scalar>(fan_in, width, rng), Vector<Scalar>::Zero(width), hidden_activation});
    fan_in = width;
  }
  net.layers.push_back({xavier_init<Scalar>(fan_in, outputs, rng), Vector<Scalar>::Zero(outputs), Activation::linear});
  return net;
}

template <typename Scalar, typename Derived>
Matrix<Scalar> predict(const Ffnn<Scalar>& net, const Eigen::MatrixBase<Derived>& x) {
  Matrix<Scalar> a = x;
  for (const auto& layer : net.layers) a = dense_forward(layer, a);
  return a;
}

// Flat parameter layout: for each layer, W column-major then b.
template <typename Scalar>
Index parameter_count(const std::vector<DenseLayer<Scalar>>& layers) {
  Index n = 0;
  for (const auto& l : layers) n += l.W.size() + l.b.size();
  return n;
}

template <typename Scalar>
Index write_parameters(const std::vector<DenseLayer<Scalar>>& layers, Vector<Scalar>& out, Index offset) {
  for (const auto& l : layers) {
    out.segment(offset, l.W.size()) = l.W.reshaped();
    offset += l.W.size();
    out.segment(offset, l.b.size()) = l.b;
    offset += l.b.size();
  }
  return offset;
}

template <typename Scalar>
Index read_parameters(std::vector<DenseLayer<Scalar>>& layers, const Vector<Scalar>& in, Index offset) {
  for (auto& l : layers) {
    l.W.reshaped() = in.segment(offset, l.W.size());
    offset += l.W.size();
    l.b = in.segment(offset, l.b.size());
    offset += l.b.size();
  }
  return offset;
}

template <typename Scalar>
Index parameter_count(const Ffnn<Scalar>& net) {
  return parameter_count(net.layers);
}

template <typename Scalar>
Vector<Scalar> flatten(const Ffnn<Scalar>& net) {
  Vector<Scalar> v(parameter_count(net));
  write_parameters(net.layers, v, 0);
  return v;
}

template <typename Scalar>
void unflatten(Ffnn<Scalar>& net, const Vector<Scalar>& v) {
  if (v.size() != parameter_count(net)) throw Error(Errc::shape_mismatch, "ffnn parameter vector");
  read_parameters(net.layers, v, 0);
}

/// Loss value plus gradients shaped like the network they belong to.
template <typename Net, typename Scalar>
struct Gradients {
  Scalar loss = 0;
  Net grads;
};

namespace detail {

/// Forward through `layers` keeping pre-activations and outputs, then
/// backpropagate `d_out` (dL/d output). Accumulates into `grads` and
/// returns dL/d input.
template <typename Scalar>
struct DenseTape {
  std::vector<Matrix<Scalar>> inputs;
  std::vector<Matrix<Scalar>> pre;
  std::vector<Matrix<Scalar>> post;
};

template <typename Scalar>
Matrix<Scalar> tape_forward(const std::vector<DenseLayer<Scalar>>& layers, Matrix<Scalar> x, DenseTape<Scalar>& tape) {
  for (const auto& layer : layers) {
    Matrix<Scalar> z = dense_affine(layer, x);
    Matrix<Scalar> a = activate(layer.activation, z);
    tape.inputs.push_back(std::move(x));
    tape.pre.push_back(std::move(z));
    tape.post.push_back(a);
    x = std::move(a);
  }
  return x;
}

template <typename Scalar>
Matrix<Scalar> tape_backward(const std::vector<DenseLayer<Scalar>>& layers, const DenseTape<Scalar>& tape,
                             Matrix<Scalar> d_out, std::vector<DenseLayer<Scalar>>& grads) {
  for (std::size_t k = layers.size(); k-- > 0;) {
    Matrix<Scalar> delta =
        d_out.cwiseProduct(activation_derivative(layers[k].activation, tape.pre[k], tape.post[k]));
    grads[k].W.noalias() += delta * tape.inputs[k].transpose();
    grads[k].b += delta.rowwise().sum();
    d_out.noalias() = layers[k].W.transpose() * delta;
  }
  return d_out;
}

template <typename Scalar>
std::vector<DenseLayer<Scalar>> zeros_like(const std::vector<DenseLayer<Scalar>>& layers) {
  std::vector<DenseLayer<Scalar>> z;
  z.reserve(layers.size());
  for (const auto& l : layers)
    z.push_back({Matrix<Scalar>::Zero(l.W.rows(), l.W.cols()), Vector<Scalar>::Zero(l.b.size()), l.activation});
  return z;
}

}  // namespace detail

/// Exact reverse-mode gradients of the mean MSLE over the batch.
/// x is inputs × B, y is outputs × B.
template <typename Scalar, typename DX, typename DY>
Gradients<Ffnn<Scalar>, Scalar> backprop_ffnn(const Ffnn<Scalar>& net, const Eigen::MatrixBase<DX>& x,
                                              const Eigen::MatrixBase<DY>& y) {
  if (x.cols() != y.cols() || y.rows() != net.outputs()) throw Error(Errc::shape_mismatch, "ffnn batch");
  detail::DenseTape<Scalar> tape;
  Matrix<Scalar> out = detail::tape_forward(net.layers, Matrix<Scalar>(x), tape);

  Gradients<Ffnn<Scalar>, Scalar> result;
  result.loss = msle(y, out);
  result.grads.layers = detail::zeros_like(net.layers);
  detail::tape_backward(net.layers, tape, msle_gradient(y, out), result.grads.layers);
  return result;
}

}  // namespace wallet::nn
