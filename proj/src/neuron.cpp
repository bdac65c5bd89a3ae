#include "stlw/neuron.hpp"

#include <algorithm>

namespace stlw {

template <typename Scalar>
SLIFParams<Scalar> SLIFParams<Scalar>::make(Scalar tau, Scalar u_th, bool learnable, ResetMode reset,
                                            Scalar surrogate_width) {
  if (!(surrogate_width > Scalar(0))) throw ParameterError("surrogate width must be positive");
  SLIFParams p;
  p.tau = Tensor<Scalar>::scalar(tau, learnable);
  p.u_th = Tensor<Scalar>::scalar(u_th, learnable);
  p.reset = reset;
  p.surrogate_width = surrogate_width;
  return p;
}

template <typename Scalar>
void SLIFParams<Scalar>::clamp() {
  tau.mutable_value() = tau.value().max(Scalar(kTauMin)).min(Scalar(kTauMax));
  u_th.mutable_value() = u_th.value().max(Scalar(kThresholdMin)).min(Scalar(kThresholdMax));
}

template <typename Scalar>
std::vector<Tensor<Scalar>> SLIFParams<Scalar>::trainable() const {
  std::vector<Tensor<Scalar>> out;
  if (learns_tau()) out.push_back(tau);
  if (learns_threshold()) out.push_back(u_th);
  return out;
}

template <typename Scalar>
SLIFParams<Scalar> SLIFParams<Scalar>::clone() const {
  SLIFParams out = *this;
  out.tau = tau.clone();
  out.u_th = u_th.clone();
  return out;
}

template <typename Scalar>
Tensor<Scalar> membrane_update(const Tensor<Scalar>& u_prev, const Tensor<Scalar>& current,
                               const SLIFParams<Scalar>& p) {
  detail::require_same_shape(u_prev, current, "membrane_update");
  const Scalar tau = p.tau.item();
  if (!(tau >= Scalar(1))) throw ParameterError("membrane time constant must be >= 1");
  const Scalar rest = p.u_rest;

  Tensor<Scalar> out(u_prev.shape(), u_prev.value() + (current.value() - (u_prev.value() - rest)) / tau);
  detail::require_finite(out, "membrane_update");

  const Tensor<Scalar>& tau_t = p.tau;
  if (detail::should_record({&u_prev, &current, &tau_t})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active()->record([u_prev, current, tau_t, out, rest]() mutable {
      if (!out.has_grad()) return;
      const Scalar tau = tau_t.item();
      const auto& g = out.grad();
      if (u_prev.requires_grad()) u_prev.accumulate_grad(g * (Scalar(1) - Scalar(1) / tau));
      if (current.requires_grad()) current.accumulate_grad(g / tau);
      if (tau_t.requires_grad()) {
        const Scalar drive = (g * (current.value() - (u_prev.value() - rest))).sum();
        tau_t.accumulate_grad(ArrayX<Scalar>::Constant(1, -drive / (tau * tau)));
      }
    });
  }
  return out;
}

template <typename Scalar>
NeuronState<Scalar> fire_and_reset(const Tensor<Scalar>& u, const SLIFParams<Scalar>& p) {
  Tensor<Scalar> spikes = heaviside_surrogate(sub_scalar(u, p.u_th), p.surrogate_width);
  Tensor<Scalar> after = p.reset == ResetMode::soft ? sub(u, mul_scalar(spikes, p.u_th))
                                                     : mul(u, one_minus(spikes));
  return {after, spikes};
}

template <typename Scalar>
Tensor<Scalar> layer_forward(const Tensor<Scalar>& current, const SLIFParams<Scalar>& p) {
  if (current.rank() < 1 || current.shape()[0] == 0) throw DimensionError("layer_forward: empty time axis");
  const Index steps = current.shape()[0];
  Tensor<Scalar> u = Tensor<Scalar>::full(current.shape().drop_front(), p.u_rest);
  std::vector<Tensor<Scalar>> spikes;
  spikes.reserve(static_cast<std::size_t>(steps));
  for (Index t = 0; t < steps; ++t) {
    u = membrane_update(u, select_time(current, t), p);
    NeuronState<Scalar> s = fire_and_reset(u, p);
    u = s.u;
    spikes.push_back(s.o);
  }
  return stack_time(std::span<const Tensor<Scalar>>(spikes));
}

template struct SLIFParams<float>;
template struct SLIFParams<double>;

#define STLW_INSTANTIATE_NEURON(S)                                                                   \
  template Tensor<S> membrane_update(const Tensor<S>&, const Tensor<S>&, const SLIFParams<S>&); \
  template NeuronState<S> fire_and_reset(const Tensor<S>&, const SLIFParams<S>&);               \
  template Tensor<S> layer_forward(const Tensor<S>&, const SLIFParams<S>&);

STLW_INSTANTIATE_NEURON(float)
STLW_INSTANTIATE_NEURON(double)

}  // namespace stlw
