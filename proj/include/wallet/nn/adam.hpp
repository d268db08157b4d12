#pragma once

#include <cmath>
#include <cstdint>
#include <type_traits>

#include "wallet/error.hpp"
#include "wallet/nn/types.hpp"

namespace wallet::nn {

template <typename Scalar>
struct AdamHyper {
  Scalar learning_rate = Scalar(1e-4);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);
};

/// Moments over a flat parameter vector.
template <typename Scalar>
struct AdamState {
  std::int64_t step = 0;
  Vector<Scalar> m;
  Vector<Scalar> v;
  AdamHyper<Scalar> hyper;

  AdamState() = default;
  AdamState(Index parameter_count, AdamHyper<Scalar> h)
      : m(Vector<Scalar>::Zero(parameter_count)), v(Vector<Scalar>::Zero(parameter_count)), hyper(h) {
    if (!(h.beta1 >= 0 && h.beta1 < 1 && h.beta2 >= 0 && h.beta2 < 1))
      throw Error(Errc::validation_error, "adam betas must lie in [0, 1)");
  }
};

template <typename Scalar>
void adam_step(AdamState<Scalar>& state, std::type_identity_t<Eigen::Ref<Vector<Scalar>>> params,
               const std::type_identity_t<Eigen::Ref<const Vector<Scalar>>>& grads) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw Error(Errc::shape_mismatch, "adam parameter count");
  const auto& h = state.hyper;
  ++state.step;
  state.m = h.beta1 * state.m + (Scalar(1) - h.beta1) * grads;
  state.v = h.beta2 * state.v + (Scalar(1) - h.beta2) * grads.cwiseProduct(grads);
  const Scalar t = Scalar(state.step);
  const Scalar m_correction = Scalar(1) - std::pow(h.beta1, t);
  const Scalar v_correction = Scalar(1) - std::pow(h.beta2, t);
  params.array() -= h.learning_rate * (state.m.array() / m_correction) /
                    ((state.v.array() / v_correction).sqrt() + h.epsilon);
}

}  // namespace wallet::nn
