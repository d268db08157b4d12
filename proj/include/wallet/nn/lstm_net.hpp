#pragma once

#include <span>
#include <vector>

#include "wallet/nn/ffnn.hpp"
#include "wallet/nn/lstm.hpp"

namespace wallet::nn {

/// A sequence batch: one D × B matrix per time step, oldest first.
template <typename Scalar>
using Sequence = std::vector<Matrix<Scalar>>;

/// Single LSTM layer whose last hidden state feeds a dense head.
template <typename Scalar>
struct LstmNet {
  LstmCell<Scalar> cell;
  std::vector<DenseLayer<Scalar>> head;

  Index inputs() const { return cell.inputs(); }
  Index hidden() const { return cell.hidden(); }
  Index outputs() const { return head.empty() ? hidden() : head.back().outputs(); }
};

/// Xavier per gate block for both input and recurrent matrices, zero biases
/// except the forget gate, which starts at `forget_bias`.
template <typename Scalar = double>
LstmNet<Scalar> make_lstm_net(Index inputs, Index hidden, std::span<const Index> head_hidden,
                              Activation head_activation, Index outputs, Rng& rng, Scalar forget_bias = 1) {
  LstmNet<Scalar> net;
  net.cell = LstmCell<Scalar>::zeros(inputs, hidden);
  for (Gate g : {Gate::input, Gate::forget, Gate::output, Gate::candidate}) {
    net.cell.input_weights(g) = xavier_init<Scalar>(inputs, hidden, rng);
    net.cell.recurrent_weights(g) = xavier_init<Scalar>(hidden, hidden, rng);
  }
  net.cell.bias(Gate::forget).setConstant(forget_bias);

  Index fan_in = hidden;
  for (Index width : head_hidden) {
    net.head.push_back({xavier_init<Scalar>(fan_in, width, rng), Vector<Scalar>::Zero(width), head_activation});
    fan_in = width;
  }
  net.head.push_back({xavier_init<Scalar>(fan_in, outputs, rng), Vector<Scalar>::Zero(outputs), Activation::linear});
  return net;
}

namespace detail {

template <typename Scalar>
void check_sequence(const LstmNet<Scalar>& net, const Sequence<Scalar>& steps) {
  if (steps.empty()) throw Error(Errc::shape_mismatch, "empty sequence");
  for (const auto& x : steps)
    if (x.rows() != net.inputs() || x.cols() != steps.front().cols())
      throw Error(Errc::shape_mismatch, "sequence step shape");
}

}  // namespace detail

template <typename Scalar>
Matrix<Scalar> predict(const LstmNet<Scalar>& net, const Sequence<Scalar>& steps) {
  detail::check_sequence(net, steps);
  const Index batch = steps.front().cols();
  Matrix<Scalar> h = Matrix<Scalar>::Zero(net.hidden(), batch);
  Matrix<Scalar> c = Matrix<Scalar>::Zero(net.hidden(), batch);
  for (const auto& x : steps) {
    auto s = lstm_step(net.cell, x, h, c);
    h = std::move(s.h);
    c = std::move(s.c);
  }
  for (const auto& layer : net.head) h = dense_forward(layer, h);
  return h;
}

// Flat layout: W, U, b (column-major), then head layers as in Ffnn.
template <typename Scalar>
Index parameter_count(const LstmNet<Scalar>& net) {
  return net.cell.W.size() + net.cell.U.size() + net.cell.b.size() + parameter_count(net.head);
}

template <typename Scalar>
Vector<Scalar> flatten(const LstmNet<Scalar>& net) {
  Vector<Scalar> v(parameter_count(net));
  Index k = 0;
  v.segment(k, net.cell.W.size()) = net.cell.W.reshaped();
  k += net.cell.W.size();
  v.segment(k, net.cell.U.size()) = net.cell.U.reshaped();
  k += net.cell.U.size();
  v.segment(k, net.cell.b.size()) = net.cell.b;
  k += net.cell.b.size();
  write_parameters(net.head, v, k);
  return v;
}

template <typename Scalar>
void unflatten(LstmNet<Scalar>& net, const Vector<Scalar>& v) {
  if (v.size() != parameter_count(net)) throw Error(Errc::shape_mismatch, "lstm parameter vector");
  Index k = 0;
  net.cell.W.reshaped() = v.segment(k, net.cell.W.size());
  k += net.cell.W.size();
  net.cell.U.reshaped() = v.segment(k, net.cell.U.size());
  k += net.cell.U.size();
  net.cell.b = v.segment(k, net.cell.b.size());
  k += net.cell.b.size();
  read_parameters(net.head, v, k);
}

/// Backpropagation through time over every step of the window, then through
/// the head. Loss is the mean MSLE over the batch.
template <typename Scalar, typename DY>
Gradients<LstmNet<Scalar>, Scalar> backprop_lstm(const LstmNet<Scalar>& net, const Sequence<Scalar>& steps,
                                                 const Eigen::MatrixBase<DY>& y) {
  detail::check_sequence(net, steps);
  const Index H = net.hidden();
  const Index batch = steps.front().cols();
  if (y.cols() != batch || y.rows() != net.outputs()) throw Error(Errc::shape_mismatch, "lstm targets");

  std::vector<LstmStep<Scalar>> tape;
  tape.reserve(steps.size());
  Matrix<Scalar> h = Matrix<Scalar>::Zero(H, batch);
  Matrix<Scalar> c = Matrix<Scalar>::Zero(H, batch);
  for (const auto& x : steps) {
    tape.push_back(lstm_step(net.cell, x, h, c));
    h = tape.back().h;
    c = tape.back().c;
  }

  detail::DenseTape<Scalar> head_tape;
  Matrix<Scalar> out = detail::tape_forward(net.head, h, head_tape);

  Gradients<LstmNet<Scalar>, Scalar> result;
  result.loss = msle(y, out);
  auto& g = result.grads;
  g.cell = LstmCell<Scalar>::zeros(net.inputs(), H);
  g.head = detail::zeros_like(net.head);

  Matrix<Scalar> dh = detail::tape_backward(net.head, head_tape, msle_gradient(y, out), g.head);
  Matrix<Scalar> dc = Matrix<Scalar>::Zero(H, batch);
  Matrix<Scalar> dz(4 * H, batch);
  const Matrix<Scalar> zero = Matrix<Scalar>::Zero(H, batch);

  for (std::size_t t = steps.size(); t-- > 0;) {
    const auto& s = tape[t];
    const Matrix<Scalar>& h_prev = t > 0 ? tape[t - 1].h : zero;
    const Matrix<Scalar>& c_prev = t > 0 ? tape[t - 1].c : zero;

    dc += dh.cwiseProduct(s.o).cwiseProduct((Scalar(1) - s.tanh_c.array().square()).matrix());
    auto one = Scalar(1);
    dz.middleRows(0 * H, H) = (dc.array() * s.g.array() * s.i.array() * (one - s.i.array())).matrix();
    dz.middleRows(1 * H, H) = (dc.array() * c_prev.array() * s.f.array() * (one - s.f.array())).matrix();
    dz.middleRows(2 * H, H) = (dh.array() * s.tanh_c.array() * s.o.array() * (one - s.o.array())).matrix();
    dz.middleRows(3 * H, H) = (dc.array() * s.i.array() * (one - s.g.array().square())).matrix();

    g.cell.W.noalias() += dz * steps[t].transpose();
    g.cell.U.noalias() += dz * h_prev.transpose();
    g.cell.b += dz.rowwise().sum();

    dh.noalias() = net.cell.U.transpose() * dz;
    dc = dc.cwiseProduct(s.f);
  }
  return result;
}

}  // namespace wallet::nn
