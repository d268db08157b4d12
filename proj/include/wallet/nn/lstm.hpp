#pragma once

#include "wallet/error.hpp"
#include "wallet/nn/activation.hpp"
#include "wallet/nn/types.hpp"

namespace wallet::nn {

/// Row-block order of the stacked gate matrices.
enum class Gate : int { input = 0, forget = 1, output = 2, candidate = 3 };

/// Standard LSTM cell. The four gate matrices are stacked by row in `Gate`
/// order: W is 4H × D, U is 4H × H, b has 4H entries.
template <typename Scalar>
struct LstmCell {
  Matrix<Scalar> W;
  Matrix<Scalar> U;
  Vector<Scalar> b;

  Index hidden() const { return U.cols(); }
  Index inputs() const { return W.cols(); }

  auto input_weights(Gate g) { return W.middleRows(static_cast<int>(g) * hidden(), hidden()); }
  auto input_weights(Gate g) const { return W.middleRows(static_cast<int>(g) * hidden(), hidden()); }
  auto recurrent_weights(Gate g) { return U.middleRows(static_cast<int>(g) * hidden(), hidden()); }
  auto recurrent_weights(Gate g) const { return U.middleRows(static_cast<int>(g) * hidden(), hidden()); }
  auto bias(Gate g) { return b.segment(static_cast<int>(g) * hidden(), hidden()); }
  auto bias(Gate g) const { return b.segment(static_cast<int>(g) * hidden(), hidden()); }

  static LstmCell zeros(Index inputs, Index hidden) {
    return {Matrix<Scalar>::Zero(4 * hidden, inputs), Matrix<Scalar>::Zero(4 * hidden, hidden),
            Vector<Scalar>::Zero(4 * hidden)};
  }
};

/// Everything one step produces; gate activations are kept for BPTT.
template <typename Scalar>
struct LstmStep {
  Matrix<Scalar> h, c;
  Matrix<Scalar> i, f, o, g;
  Matrix<Scalar> tanh_c;
};

/// One step for a batch (one sample per column): x is D × B, h_prev and
/// c_prev are H × B.
template <typename Scalar, typename DX, typename DH, typename DC>
LstmStep<Scalar> lstm_step(const LstmCell<Scalar>& cell, const Eigen::MatrixBase<DX>& x,
                           const Eigen::MatrixBase<DH>& h_prev, const Eigen::MatrixBase<DC>& c_prev) {
  const Index H = cell.hidden();
  if (cell.W.rows() != 4 * H || cell.U.rows() != 4 * H || cell.b.size() != 4 * H || x.rows() != cell.inputs() ||
      h_prev.rows() != H || c_prev.rows() != H || h_prev.cols() != x.cols() || c_prev.cols() != x.cols())
    throw Error(Errc::shape_mismatch, "lstm step");

  Matrix<Scalar> z = cell.W * x + cell.U * h_prev;
  z.colwise() += cell.b;

  LstmStep<Scalar> s;
  auto sig = [](Scalar v) { return sigmoid(v); };
  s.i = z.middleRows(0 * H, H).unaryExpr(sig);
  s.f = z.middleRows(1 * H, H).unaryExpr(sig);
  s.o = z.middleRows(2 * H, H).unaryExpr(sig);
  s.g = z.middleRows(3 * H, H).array().tanh().matrix();
  s.c = s.f.cwiseProduct(c_prev) + s.i.cwiseProduct(s.g);
  s.tanh_c = s.c.array().tanh().matrix();
  s.h = s.o.cwiseProduct(s.tanh_c);
  return s;
}

}  // namespace wallet::nn
