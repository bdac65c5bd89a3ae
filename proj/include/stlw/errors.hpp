#pragma once

#include <stdexcept>
#include <string>

namespace stlw {

/// Shape or extent mismatch between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Out-of-range numeric parameter (sparsity, surrogate width, ...).
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A call whose preconditions do not hold (missing gradient, empty tape, ...).
struct PreconditionError : std::logic_error {
  using std::logic_error::logic_error;
};

/// backward() invoked on a tape that was already consumed.
struct StaleTapeError : std::logic_error {
  using std::logic_error::logic_error;
};

/// A forward or backward pass produced NaN or Inf.
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid model, dataset, or experiment configuration.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Prune plan does not match the model it is applied to.
struct PlanError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed input file (IDX, CSV).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Unknown named entity, e.g. a layer selector.
struct LookupError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

/// Checkpoint could not be read back.
struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace stlw
