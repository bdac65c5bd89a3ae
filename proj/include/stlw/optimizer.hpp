#pragma once

#include <vector>

#include "stlw/tensor.hpp"

namespace stlw {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment descent with decoupled weight decay.
///
/// Parameters are registered in groups so that, e.g., intrinsic neuron
/// parameters can be excluded from weight decay.
template <typename Scalar>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config);
  AdamW(std::vector<Tensor<Scalar>> params, AdamWConfig config);

  /// Registers parameters; `weight_decay < 0` means "use the config value".
  void add_params(const std::vector<Tensor<Scalar>>& params, double weight_decay = -1.0);

  /// One update of every registered parameter, then zeroes their gradients.
  /// Throws PreconditionError if any parameter has no gradient.
  void step();

  void zero_grad();

  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  double learning_rate() const { return config_.learning_rate; }
  long step_count() const { return steps_; }
  std::size_t size() const { return slots_.size(); }
  const AdamWConfig& config() const { return config_; }

 private:
  struct Slot {
    Tensor<Scalar> param;
    ArrayX<double> first;
    ArrayX<double> second;
    double weight_decay;
  };
  AdamWConfig config_;
  std::vector<Slot> slots_;
  long steps_ = 0;
};

}  // namespace stlw
