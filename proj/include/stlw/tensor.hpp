#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stlw/errors.hpp"

namespace stlw {

using Index = Eigen::Index;

/// Extents of a dense tensor, rank 0..4. Canonical activation layout is
/// [T, B, N, d] (time-major).
class Shape {
 public:
  static constexpr int kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<Index> extents) : Shape(std::span<const Index>(extents.begin(), extents.size())) {}
  explicit Shape(std::span<const Index> extents) {
    if (extents.size() > kMaxRank) throw DimensionError("rank exceeds 4");
    rank_ = static_cast<int>(extents.size());
    for (int i = 0; i < rank_; ++i) {
      if (extents[i] < 0) throw DimensionError("negative extent");
      dims_[i] = extents[i];
    }
  }

  int rank() const { return rank_; }
  Index operator[](int axis) const { return dims_[axis]; }
  Index back() const { return dims_[rank_ - 1]; }

  Index numel() const {
    Index n = 1;
    for (int i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
  }

  /// Product of every extent except the last `trailing` ones.
  Index leading(int trailing) const {
    Index n = 1;
    for (int i = 0; i < rank_ - trailing; ++i) n *= dims_[i];
    return n;
  }

  std::span<const Index> extents() const { return {dims_.data(), static_cast<std::size_t>(rank_)}; }

  Shape drop_front() const { return Shape(extents().subspan(1)); }

  Shape with_front(Index extent) const {
    std::array<Index, kMaxRank> d{};
    d[0] = extent;
    for (int i = 0; i < rank_; ++i) d[i + 1] = dims_[i];
    return Shape(std::span<const Index>(d.data(), rank_ + 1));
  }

  Shape with_back(Index extent) const {
    std::array<Index, kMaxRank> d = dims_;
    d[rank_ - 1] = extent;
    return Shape(std::span<const Index>(d.data(), rank_));
  }

  friend bool operator==(const Shape& a, const Shape& b) {
    if (a.rank_ != b.rank_) return false;
    for (int i = 0; i < a.rank_; ++i)
      if (a.dims_[i] != b.dims_[i]) return false;
    return true;
  }

  std::string str() const {
    std::string s = "[";
    for (int i = 0; i < rank_; ++i) {
      if (i) s += ", ";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

 private:
  std::array<Index, kMaxRank> dims_{};
  int rank_ = 0;
};

template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major tensor with an optional gradient buffer.
///
/// A Tensor is a shared handle: copies alias the same storage, which is how
/// the tape refers to operands. Use clone() for an independent copy.
template <typename Scalar>
class Tensor {
 public:
  using Array = ArrayX<Scalar>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;

  Tensor(Shape shape, Array values, bool requires_grad = false) : impl_(std::make_shared<Impl>()) {
    if (values.size() != shape.numel())
      throw DimensionError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                           shape.str());
    impl_->shape = shape;
    impl_->value = std::move(values);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(shape, Array::Zero(shape.numel()), requires_grad);
  }
  static Tensor full(Shape shape, Scalar v, bool requires_grad = false) {
    return Tensor(shape, Array::Constant(shape.numel(), v), requires_grad);
  }
  static Tensor scalar(Scalar v, bool requires_grad = false) { return full(Shape{}, v, requires_grad); }
  static Tensor from(Shape shape, std::initializer_list<Scalar> values, bool requires_grad = false) {
    Array a(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar v : values) a[i++] = v;
    return Tensor(shape, std::move(a), requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return impl_->shape.rank(); }
  Index numel() const { return impl_->shape.numel(); }

  const Array& value() const { return impl_->value; }
  /// Direct write access; reserved for parameter updates and mask enforcement.
  Array& mutable_value() { return impl_->value; }

  Scalar item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape().str());
    return impl_->value[0];
  }

  /// Row-major view over the last two axes, all leading axes folded into rows.
  ConstMatrixMap matrix() const {
    const Index cols = rank() == 0 ? 1 : shape().back();
    return ConstMatrixMap(impl_->value.data(), numel() / std::max<Index>(cols, 1), cols);
  }
  MatrixMap mutable_matrix() {
    const Index cols = rank() == 0 ? 1 : shape().back();
    return MatrixMap(impl_->value.data(), numel() / std::max<Index>(cols, 1), cols);
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) {
    impl_->requires_grad = on;
    if (!on) impl_->grad.resize(0);
  }

  bool has_grad() const { return impl_->grad.size() != 0; }
  const Array& grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.setZero(numel()); }
  void clear_grad() { impl_->grad.resize(0); }

  void accumulate_grad(const Array& g) const {
    if (g.size() != numel()) throw DimensionError("gradient length mismatch for shape " + shape().str());
    if (!g.allFinite()) throw NonFiniteError("non-finite gradient for tensor of shape " + shape().str());
    if (has_grad())
      impl_->grad += g;
    else
      impl_->grad = g;
  }

  /// Adds `g` into grad[offset, offset + g.size()), creating a zero buffer first if needed.
  void accumulate_grad_segment(Index offset, const Array& g) const {
    if (offset < 0 || offset + g.size() > numel()) throw DimensionError("gradient segment out of range");
    if (!g.allFinite()) throw NonFiniteError("non-finite gradient for tensor of shape " + shape().str());
    if (!has_grad()) impl_->grad.setZero(numel());
    impl_->grad.segment(offset, g.size()) += g;
  }

  /// Independent copy of the values (and requires_grad flag); no gradient.
  Tensor clone() const {
    if (!defined()) return {};
    return Tensor(shape(), value(), requires_grad());
  }

  /// Value-only copy that never participates in differentiation.
  Tensor detach() const { return Tensor(shape(), value(), false); }

  template <typename To>
  Tensor<To> cast() const {
    if (!defined()) return {};
    return Tensor<To>(shape(), value().template cast<To>(), requires_grad());
  }

  bool same(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    Array value;
    Array grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/// Records differentiable primitives in creation order and replays their
/// local gradient rules in exact reverse order.
///
/// At most one tape per scalar type is active on a thread; primitives record
/// onto it only while a Scope is alive and an operand requires grad.
template <typename Scalar>
class Tape {
 public:
  using Rule = std::function<void()>;

  class Scope {
   public:
    explicit Scope(Tape& tape) : previous_(active_) { active_ = &tape; }
    ~Scope() { active_ = previous_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(Rule rule) {
    if (consumed_) {
      rules_.clear();
      consumed_ = false;
    }
    rules_.push_back(std::move(rule));
  }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded rule in reverse.
  void backward(const Tensor<Scalar>& loss) {
    if (consumed_) throw StaleTapeError("backward() called twice on the same recording");
    if (rules_.empty()) throw PreconditionError("backward() on an empty tape");
    if (!loss.defined() || loss.numel() != 1)
      throw PreconditionError("backward() requires a scalar loss");
    if (!loss.requires_grad()) throw PreconditionError("loss does not depend on any differentiable tensor");
    Tensor<Scalar> seed = loss;
    seed.accumulate_grad(ArrayX<Scalar>::Ones(1));
    for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
    consumed_ = true;
  }

  void clear() {
    rules_.clear();
    consumed_ = false;
  }

  std::size_t size() const { return rules_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<Rule> rules_;
  bool consumed_ = false;
  static inline thread_local Tape* active_ = nullptr;
};

/// Runs backward on the thread's active tape.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  Tape<Scalar>* tape = Tape<Scalar>::active();
  if (tape == nullptr) throw PreconditionError("backward() without an active tape");
  tape->backward(loss);
}

}  // namespace stlw
