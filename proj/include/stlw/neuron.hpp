#pragma once

#include <vector>

#include "stlw/ops.hpp"
#include "stlw/tensor.hpp"

namespace stlw {

enum class ResetMode { soft, hard };

// Bounds enforced on intrinsic parameters after every optimizer step.
inline constexpr double kTauMin = 1.01;
inline constexpr double kTauMax = 100.0;
inline constexpr double kThresholdMin = 0.1;
inline constexpr double kThresholdMax = 5.0;

/// Per-layer intrinsic parameters of a (s)LIF neuron population.
///
/// `tau` and `u_th` are scalar tensors; they are learnable exactly when they
/// require grad. A plain LIF layer is an SLIFParams with both frozen.
template <typename Scalar>
struct SLIFParams {
  Tensor<Scalar> tau;
  Tensor<Scalar> u_th;
  Scalar u_rest = 0;
  ResetMode reset = ResetMode::soft;
  Scalar surrogate_width = 1;

  static SLIFParams make(Scalar tau = 2, Scalar u_th = 1, bool learnable = true, ResetMode reset = ResetMode::soft,
                         Scalar surrogate_width = 1);

  bool learns_tau() const { return tau.requires_grad(); }
  bool learns_threshold() const { return u_th.requires_grad(); }
  void set_learnable(bool learn_tau, bool learn_threshold) {
    tau.set_requires_grad(learn_tau);
    u_th.set_requires_grad(learn_threshold);
  }

  /// Projects tau and u_th back into their admissible ranges.
  void clamp();

  /// The learnable scalar tensors (empty for LIF).
  std::vector<Tensor<Scalar>> trainable() const;

  SLIFParams clone() const;

  template <typename To>
  SLIFParams<To> cast() const {
    SLIFParams<To> out;
    out.tau = tau.template cast<To>();
    out.u_th = u_th.template cast<To>();
    out.u_rest = static_cast<To>(u_rest);
    out.reset = reset;
    out.surrogate_width = static_cast<To>(surrogate_width);
    return out;
  }
};

/// Spikes and post-reset membrane potential after one step.
template <typename Scalar>
struct NeuronState {
  Tensor<Scalar> u;
  Tensor<Scalar> o;
};

/// Euler step of tau du/dt = -(u - u_rest) + I with unit step.
template <typename Scalar>
Tensor<Scalar> membrane_update(const Tensor<Scalar>& u_prev, const Tensor<Scalar>& current,
                               const SLIFParams<Scalar>& p);

/// o = H(u - u_th), then soft (u - o u_th) or hard (u (1 - o)) reset.
template <typename Scalar>
NeuronState<Scalar> fire_and_reset(const Tensor<Scalar>& u, const SLIFParams<Scalar>& p);

/// Unrolls the neuron over the leading time axis of `current` [T, ...],
/// starting from u = u_rest, and returns the spike train.
template <typename Scalar>
Tensor<Scalar> layer_forward(const Tensor<Scalar>& current, const SLIFParams<Scalar>& p);

/// Same dynamics with tau and u_th frozen.
template <typename Scalar>
SLIFParams<Scalar> make_lif(const SLIFParams<Scalar>& p) {
  SLIFParams<Scalar> out = p.clone();
  out.set_learnable(false, false);
  return out;
}

}  // namespace stlw
