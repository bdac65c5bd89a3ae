#include "stlw/optimizer.hpp"

#include <cmath>

namespace stlw {

template <typename Scalar>
AdamW<Scalar>::AdamW(AdamWConfig config) : config_(config) {
  if (!(config_.learning_rate >= 0.0)) throw ParameterError("learning rate must be nonnegative");
  if (!(config_.weight_decay >= 0.0)) throw ParameterError("weight decay must be nonnegative");
}

template <typename Scalar>
AdamW<Scalar>::AdamW(std::vector<Tensor<Scalar>> params, AdamWConfig config) : AdamW(config) {
  add_params(params);
}

template <typename Scalar>
void AdamW<Scalar>::add_params(const std::vector<Tensor<Scalar>>& params, double weight_decay) {
  const double decay = weight_decay < 0.0 ? config_.weight_decay : weight_decay;
  for (const auto& p : params) {
    if (!p.defined()) throw PreconditionError("AdamW: undefined parameter");
    slots_.push_back({p, ArrayX<double>::Zero(p.numel()), ArrayX<double>::Zero(p.numel()), decay});
  }
}

template <typename Scalar>
void AdamW<Scalar>::step() {
  for (const Slot& s : slots_)
    if (!s.param.has_grad()) throw PreconditionError("AdamW: parameter of shape " + s.param.shape().str() + " has no gradient");

  ++steps_;
  const double lr = config_.learning_rate;
  const double bias1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bias2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (Slot& s : slots_) {
    const ArrayX<double> g = s.param.grad().template cast<double>();
    s.first = config_.beta1 * s.first + (1.0 - config_.beta1) * g;
    s.second = config_.beta2 * s.second + (1.0 - config_.beta2) * g.square();
    ArrayX<double> w = s.param.value().template cast<double>();
    w *= 1.0 - lr * s.weight_decay;
    w -= lr * (s.first / bias1) / ((s.second / bias2).sqrt() + config_.epsilon);
    if (!w.allFinite()) throw NonFiniteError("AdamW produced a non-finite parameter");
    s.param.mutable_value() = w.template cast<Scalar>();
    s.param.zero_grad();
  }
}

template <typename Scalar>
void AdamW<Scalar>::zero_grad() {
  for (Slot& s : slots_) s.param.zero_grad();
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace stlw
