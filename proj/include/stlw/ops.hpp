#pragma once

#include <span>
#include <string>
#include <vector>

#include "stlw/tensor.hpp"

namespace stlw {

/// While alive, spike primitives on this thread use the clamped-linear
/// primitive of the rectangular surrogate instead of the Heaviside step.
/// Used for gradient checks against finite differences.
class SurrogateRelaxation {
 public:
  SurrogateRelaxation() : previous_(enabled_) { enabled_ = true; }
  ~SurrogateRelaxation() { enabled_ = previous_; }
  SurrogateRelaxation(const SurrogateRelaxation&) = delete;
  SurrogateRelaxation& operator=(const SurrogateRelaxation&) = delete;

  static bool enabled() { return enabled_; }

 private:
  bool previous_;
  static inline thread_local bool enabled_ = false;
};

namespace detail {

template <typename Scalar>
bool any_requires_grad(std::initializer_list<const Tensor<Scalar>*> inputs) {
  for (const Tensor<Scalar>* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

/// True when a primitive over `inputs` must be recorded on the active tape.
template <typename Scalar>
bool should_record(std::initializer_list<const Tensor<Scalar>*> inputs) {
  return Tape<Scalar>::active() != nullptr && any_requires_grad(inputs);
}

template <typename Scalar>
void require_finite(const Tensor<Scalar>& t, const char* op) {
  if (!t.value().allFinite()) throw NonFiniteError(std::string(op) + " produced a non-finite value");
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (!(a.shape() == b.shape()))
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

template <typename Scalar>
void require_scalar(const Tensor<Scalar>& s, const char* op) {
  if (s.numel() != 1) throw DimensionError(std::string(op) + ": expected a scalar, got " + s.shape().str());
}

}  // namespace detail

/// Matrix product over the last two axes. Leading axes must be equal, or one
/// operand must be a plain matrix that broadcasts over the other's batch.
/// Each output element accumulates over the inner axis in index order.
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// a + b where b's shape equals the trailing axes of a's (b repeats over the rest).
template <typename Scalar>
Tensor<Scalar> add_broadcast(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor);

/// 1 - a
template <typename Scalar>
Tensor<Scalar> one_minus(const Tensor<Scalar>& a);

// Broadcasting against a scalar (numel == 1) tensor.
template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& a, const Tensor<Scalar>& s);
template <typename Scalar>
Tensor<Scalar> sub_scalar(const Tensor<Scalar>& a, const Tensor<Scalar>& s);
template <typename Scalar>
Tensor<Scalar> mul_scalar(const Tensor<Scalar>& a, const Tensor<Scalar>& s);

/// Heaviside step with H(0) = 1. The backward pass uses the rectangular
/// surrogate (1/width) * 1(|x| < width/2).
template <typename Scalar>
Tensor<Scalar> heaviside_surrogate(const Tensor<Scalar>& x, Scalar width);

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a);

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a);

/// Mean over the listed axes; those axes are removed from the result.
template <typename Scalar>
Tensor<Scalar> mean_over(const Tensor<Scalar>& a, std::span<const int> axes);

/// x[t] along the leading axis.
template <typename Scalar>
Tensor<Scalar> select_time(const Tensor<Scalar>& x, Index t);

/// Stacks equally shaped tensors along a new leading axis.
template <typename Scalar>
Tensor<Scalar> stack_time(std::span<const Tensor<Scalar>> steps);

/// Mean softmax cross-entropy of logits [B, C] against integer labels.
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels);

/// Softmax-free multi-head attention product: for every leading index and
/// head h, out_h = scale * (Q_h K_h^T) V_h, where the feature axis of q/k/v is
/// split evenly into `heads` slices. When `scores` is non-null it receives
/// scale * Q_h K_h^T laid out as [leading..., heads, N, N].
template <typename Scalar>
Tensor<Scalar> multihead_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                   int heads, Scalar scale, ArrayX<Scalar>* scores = nullptr);

}  // namespace stlw
