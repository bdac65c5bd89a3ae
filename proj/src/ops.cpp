#include "stlw/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stlw {

namespace {

using detail::require_finite;
using detail::require_same_shape;
using detail::require_scalar;
using detail::should_record;

template <typename Scalar>
using ConstMap = Eigen::Map<const RowMatrix<Scalar>>;
template <typename Scalar>
using Map = Eigen::Map<RowMatrix<Scalar>>;

// C = A * B with A [rows, inner], B [inner, cols]. Every C(i, j) accumulates
// over the inner index in increasing order, so inserting zero rows/columns
// never changes a result bit.
template <typename Scalar>
void ordered_gemm(const Scalar* a, const Scalar* b, Scalar* c, Index rows, Index inner, Index cols) {
  for (Index i = 0; i < rows; ++i) {
    Scalar* out = c + i * cols;
    std::fill(out, out + cols, Scalar(0));
    const Scalar* arow = a + i * inner;
    for (Index kk = 0; kk < inner; ++kk) {
      const Scalar av = arow[kk];
      if (av == Scalar(0)) continue;
      const Scalar* brow = b + kk * cols;
      for (Index j = 0; j < cols; ++j) out[j] += av * brow[j];
    }
  }
}

Shape replace_axis(const Shape& s, int axis, Index extent) {
  std::array<Index, Shape::kMaxRank> d{};
  for (int i = 0; i < s.rank(); ++i) d[i] = s[i];
  d[axis] = extent;
  return Shape(std::span<const Index>(d.data(), s.rank()));
}

bool same_leading(const Shape& a, const Shape& b) {
  if (a.rank() != b.rank()) return false;
  for (int i = 0; i < a.rank() - 2; ++i)
    if (a[i] != b[i]) return false;
  return true;
}

template <typename Scalar, typename Fwd, typename Bwd>
Tensor<Scalar> unary(const Tensor<Scalar>& a, const char* name, Fwd fwd, Bwd bwd) {
  Tensor<Scalar> out(a.shape(), fwd(a.value()), false);
  require_finite(out, name);
  if (should_record({&a})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active()->record([a, out, bwd]() mutable {
      if (!out.has_grad()) return;
      a.accumulate_grad(bwd(out.grad(), a.value(), out.value()));
    });
  }
  return out;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw DimensionError("matmul: operands must have rank >= 2, got " + a.shape().str() + " x " + b.shape().str());
  const Index m = a.shape()[a.rank() - 2];
  const Index k = a.shape().back();
  const Index n = b.shape().back();
  if (b.shape()[b.rank() - 2] != k)
    throw DimensionError("matmul: inner extents differ, " + a.shape().str() + " x " + b.shape().str());

  // Folding: broadcast of a plain matrix b collapses into one large product.
  Index batches = 1, rows = m, a_stride = 0, b_stride = 0;
  Shape out_shape;
  if (b.rank() == 2) {
    rows = a.shape().leading(1);
    out_shape = a.shape().with_back(n);
  } else if (a.rank() == 2) {
    batches = b.shape().leading(2);
    b_stride = k * n;
    out_shape = replace_axis(b.shape(), b.rank() - 2, m);
  } else if (same_leading(a.shape(), b.shape())) {
    batches = a.shape().leading(2);
    a_stride = m * k;
    b_stride = k * n;
    out_shape = a.shape().with_back(n);
  } else {
    throw DimensionError("matmul: batch extents incompatible, " + a.shape().str() + " x " + b.shape().str());
  }
  const Index out_stride = rows * n;

  ArrayX<Scalar> values(out_shape.numel());
  for (Index bi = 0; bi < batches; ++bi)
    ordered_gemm(a.value().data() + bi * a_stride, b.value().data() + bi * b_stride,
                 values.data() + bi * out_stride, rows, k, n);
  Tensor<Scalar> out(out_shape, std::move(values));
  require_finite(out, "matmul");

  if (should_record({&a, &b})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active()->record([a, b, out, batches, rows, k, n, a_stride, b_stride, out_stride]() mutable {
      if (!out.has_grad()) return;
      ArrayX<Scalar> ga, gb;
      if (a.requires_grad()) ga.setZero(a.numel());
      if (b.requires_grad()) gb.setZero(b.numel());
      for (Index bi = 0; bi < batches; ++bi) {
        ConstMap<Scalar> g(out.grad().data() + bi * out_stride, rows, n);
        ConstMap<Scalar> am(a.value().data() + bi * a_stride, rows, k);
        ConstMap<Scalar> bm(b.value().data() + bi * b_stride, k, n);
        if (a.requires_grad()) Map<Scalar>(ga.data() + bi * a_stride, rows, k).noalias() += g * bm.transpose();
        if (b.requires_grad()) Map<Scalar>(gb.data() + bi * b_stride, k, n).noalias() += am.transpose() * g;
      }
      if (a.requires_grad()) a.accumulate_grad(ga);
      if (b.requires_grad()) b.accumulate_grad(gb);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "add");
  Tensor<Scalar> out(a.shape(), a.value() + b.value());
  require_finite(out, "add");
  if (should_record({&a, &b})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active()->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      if (a.requires_grad()) a.accumulate_grad(out.grad());
      if (b.requires_grad()) b.accumulate_grad(out.grad());
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> add_broadcast(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const int lead = a.rank() - b.rank();
  bool ok = lead >= 0;
  for (int i = 0; ok && i < b.rank(); ++i) ok = a.shape()[lead + i] == b.shape()[i];
  if (!ok) throw DimensionError("add_broadcast: " + b.shape().str() + " is not a suffix of " + a.shape().str());
  const Index inner = b.numel();
  const Index reps = inner ? a.numel() / inner : 0;
  ArrayX<Scalar> v = a.value();
  for (Index r = 0; r < reps; ++r) v.segment(r * inner, inner) += b.value();
  Tensor<Scalar> out(a.shape(), std::move(v));
  require_finite(out, "add_broadcast");
  if (should_record({&a, &b})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active()->record([a, b, out, inner, reps]() mutable {
      if (!out.has_grad()) return;
      if (a.requires_grad()) a.accumulate_grad(out.grad());
      if (b.requires_grad()) {
        ArrayX<Scalar> g = ArrayX<Scalar>::Zero(inner);
        for (Index r = 0; r < reps; ++r) g += out.grad().segment(r * inner, inner);
        b.accumulate_grad(g);
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "sub");
  Tensor<Scalar> out(a.shape(), a.value() - b.value());
  require_finite(out, "sub");
  if (should_record({&a, &b})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active()->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      if (a.requires_grad()) a.accumulate_grad(out.grad());
      if (b.requires_grad()) b.accumulate_grad(-out.grad());
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "mul");
  Tensor<Scalar> out(a.shape(), a.value() * b.value());
  require_finite(out, "mul");
  if (should_record({&a, &b})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active()->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      if (a.requires_grad()) a.accumulate_grad(out.grad() * b.value());
      if (b.requires_grad()) b.accumulate_grad(out.grad() * a.value());
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  return unary(
      a, "scale", [factor](const ArrayX<Scalar>& x) -> ArrayX<Scalar> { return x * factor; },
      [factor](const ArrayX<Scalar>& g, const ArrayX<Scalar>&, const ArrayX<Scalar>&) -> ArrayX<Scalar> {
        return g * factor;
      });
}

template <typename Scalar>
Tensor<Scalar> one_minus(const Tensor<Scalar>& a) {
  return unary(
      a, "one_minus", [](const ArrayX<Scalar>& x) -> ArrayX<Scalar> { return Scalar(1) - x; },
      [](const ArrayX<Scalar>& g, const ArrayX<Scalar>&, const ArrayX<Scalar>&) -> ArrayX<Scalar> { return -g; });
}

template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& a, const Tensor<Scalar>& s) {
  require_scalar(s, "add_scalar");
  Tensor<Scalar> out(a.shape(), a.value() + s.item());
  require_finite(out, "add_scalar");
  if (should_record({&a, &s})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active()->record([a, s, out]() mutable {
      if (!out.has_grad()) return;
      if (a.requires_grad()) a.accumulate_grad(out.grad());
      if (s.requires_grad()) s.accumulate_grad(ArrayX<Scalar>::Constant(1, out.grad().sum()));
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sub_scalar(const Tensor<Scalar>& a, const Tensor<Scalar>& s) {
  require_scalar(s, "sub_scalar");
  Tensor<Scalar> out(a.shape(), a.value() - s.item());
  require_finite(out, "sub_scalar");
  if (should_record({&a, &s})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active()->record([a, s, out]() mutable {
      if (!out.has_grad()) return;
      if (a.requires_grad()) a.accumulate_grad(out.grad());
      if (s.requires_grad()) s.accumulate_grad(ArrayX<Scalar>::Constant(1, -out.grad().sum()));
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> mul_scalar(const Tensor<Scalar>& a, const Tensor<Scalar>& s) {
  require_scalar(s, "mul_scalar");
  Tensor<Scalar> out(a.shape(), a.value() * s.item());
  require_finite(out, "mul_scalar");
  if (should_record({&a, &s})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active()->record([a, s, out]() mutable {
      if (!out.has_grad()) return;
      if (a.requires_grad()) a.accumulate_grad(out.grad() * s.item());
      if (s.requires_grad()) s.accumulate_grad(ArrayX<Scalar>::Constant(1, (out.grad() * a.value()).sum()));
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> heaviside_surrogate(const Tensor<Scalar>& x, Scalar width) {
  if (!(width > Scalar(0))) throw ParameterError("surrogate width must be positive");
  const bool relaxed = SurrogateRelaxation::enabled();
  return unary(
      x, "heaviside_surrogate",
      [width, relaxed](const ArrayX<Scalar>& v) -> ArrayX<Scalar> {
        if (relaxed) return (v / width + Scalar(0.5)).max(Scalar(0)).min(Scalar(1));
        return (v >= Scalar(0)).template cast<Scalar>();
      },
      [width](const ArrayX<Scalar>& g, const ArrayX<Scalar>& v, const ArrayX<Scalar>&) -> ArrayX<Scalar> {
        return g * ((v.abs() < width / Scalar(2)).template cast<Scalar>() / width);
      });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Tensor<Scalar> out = Tensor<Scalar>::scalar(a.value().sum());
  require_finite(out, "sum");
  if (should_record({&a})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active()->record([a, out]() mutable {
      if (!out.has_grad()) return;
      a.accumulate_grad(ArrayX<Scalar>::Constant(a.numel(), out.grad()[0]));
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  if (a.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.numel()));
}

template <typename Scalar>
Tensor<Scalar> mean_over(const Tensor<Scalar>& a, std::span<const int> axes) {
  const Shape& in = a.shape();
  std::array<bool, Shape::kMaxRank> reduced{};
  Index count = 1;
  for (int axis : axes) {
    if (axis < 0 || axis >= in.rank() || reduced[axis])
      throw DimensionError("mean_over: invalid axis " + std::to_string(axis) + " for shape " + in.str());
    reduced[axis] = true;
    count *= in[axis];
  }
  if (count == 0) throw DimensionError("mean_over: reducing an empty axis");
  std::vector<Index> kept;
  for (int i = 0; i < in.rank(); ++i)
    if (!reduced[i]) kept.push_back(in[i]);
  const Shape out_shape{std::span<const Index>(kept)};

  // Flat input index -> flat output index.
  std::vector<Index> target(static_cast<std::size_t>(in.numel()));
  std::array<Index, Shape::kMaxRank> idx{};
  for (Index flat = 0; flat < in.numel(); ++flat) {
    Index o = 0;
    for (int i = 0; i < in.rank(); ++i)
      if (!reduced[i]) o = o * in[i] + idx[i];
    target[static_cast<std::size_t>(flat)] = o;
    for (int i = in.rank() - 1; i >= 0; --i) {
      if (++idx[i] < in[i]) break;
      idx[i] = 0;
    }
  }

  ArrayX<Scalar> values = ArrayX<Scalar>::Zero(out_shape.numel());
  for (Index flat = 0; flat < in.numel(); ++flat) values[target[flat]] += a.value()[flat];
  values /= static_cast<Scalar>(count);
  Tensor<Scalar> out(out_shape, std::move(values));
  require_finite(out, "mean_over");
  if (should_record({&a})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active()->record([a, out, target = std::move(target), count]() mutable {
      if (!out.has_grad()) return;
      ArrayX<Scalar> g(a.numel());
      for (Index flat = 0; flat < a.numel(); ++flat) g[flat] = out.grad()[target[flat]] / static_cast<Scalar>(count);
      a.accumulate_grad(g);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> select_time(const Tensor<Scalar>& x, Index t) {
  if (x.rank() < 1 || t < 0 || t >= x.shape()[0])
    throw DimensionError("select_time: step " + std::to_string(t) + " out of range for " + x.shape().str());
  const Shape step = x.shape().drop_front();
  const Index len = step.numel();
  Tensor<Scalar> out(step, x.value().segment(t * len, len));
  if (should_record({&x})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active()->record([x, out, t, len]() mutable {
      if (!out.has_grad()) return;
      x.accumulate_grad_segment(t * len, out.grad());
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> stack_time(std::span<const Tensor<Scalar>> steps) {
  if (steps.empty()) throw DimensionError("stack_time: no steps");
  const Shape step = steps[0].shape();
  const Index len = step.numel();
  ArrayX<Scalar> values(len * static_cast<Index>(steps.size()));
  bool record = false;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    if (!(steps[t].shape() == step))
      throw DimensionError("stack_time: step shapes differ, " + step.str() + " vs " + steps[t].shape().str());
    values.segment(static_cast<Index>(t) * len, len) = steps[t].value();
    record = record || steps[t].requires_grad();
  }
  Tensor<Scalar> out(step.with_front(static_cast<Index>(steps.size())), std::move(values));
  if (record && Tape<Scalar>::active() != nullptr) {
    out.set_requires_grad(true);
    std::vector<Tensor<Scalar>> inputs(steps.begin(), steps.end());
    Tape<Scalar>::active()->record([inputs, out, len]() mutable {
      if (!out.has_grad()) return;
      for (std::size_t t = 0; t < inputs.size(); ++t)
        if (inputs[t].requires_grad()) inputs[t].accumulate_grad(out.grad().segment(static_cast<Index>(t) * len, len));
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be [B, C], got " + logits.shape().str());
  const Index batch = logits.shape()[0];
  const Index classes = logits.shape()[1];
  if (static_cast<Index>(labels.size()) != batch)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
  for (int y : labels)
    if (y < 0 || y >= classes) throw ParameterError("cross_entropy: label out of range");

  const auto z = logits.matrix();
  RowMatrix<Scalar> prob(batch, classes);
  Scalar loss = 0;
  for (Index i = 0; i < batch; ++i) {
    const Scalar peak = z.row(i).maxCoeff();
    const auto shifted = (z.row(i).array() - peak).exp();
    const Scalar norm = shifted.sum();
    prob.row(i) = shifted / norm;
    loss += std::log(norm) + peak - z(i, labels[static_cast<std::size_t>(i)]);
  }
  Tensor<Scalar> out = Tensor<Scalar>::scalar(loss / static_cast<Scalar>(batch));
  require_finite(out, "cross_entropy");
  if (should_record({&logits})) {
    out.set_requires_grad(true);
    std::vector<int> ys(labels.begin(), labels.end());
    Tape<Scalar>::active()->record([logits, out, prob = std::move(prob), ys = std::move(ys)]() mutable {
      if (!out.has_grad()) return;
      RowMatrix<Scalar> g = prob;
      for (std::size_t i = 0; i < ys.size(); ++i) g(static_cast<Index>(i), ys[i]) -= Scalar(1);
      g *= out.grad()[0] / static_cast<Scalar>(ys.size());
      logits.accumulate_grad(Eigen::Map<const ArrayX<Scalar>>(g.data(), g.size()));
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> multihead_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                   int heads, Scalar scale, ArrayX<Scalar>* scores) {
  require_same_shape(q, k, "multihead_attention");
  require_same_shape(q, v, "multihead_attention");
  if (q.rank() < 2) throw DimensionError("multihead_attention: rank >= 2 required, got " + q.shape().str());
  const Index tokens = q.shape()[q.rank() - 2];
  const Index width = q.shape().back();
  if (heads < 1 || width % heads != 0)
    throw ConfigError("attention width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                      " heads");
  const Index head_dim = width / heads;
  const Index batches = q.shape().leading(2);
  const Index block = tokens * width;

  using Strided = Eigen::Map<const RowMatrix<Scalar>, 0, Eigen::OuterStride<>>;
  using StridedOut = Eigen::Map<RowMatrix<Scalar>, 0, Eigen::OuterStride<>>;
  const Eigen::OuterStride<> stride(width);

  if (scores) scores->resize(batches * heads * tokens * tokens);
  ArrayX<Scalar> values(q.numel());
  RowMatrix<Scalar> counts(tokens, tokens);
  for (Index bi = 0; bi < batches; ++bi) {
    for (int h = 0; h < heads; ++h) {
      const Index off = bi * block + h * head_dim;
      Strided qh(q.value().data() + off, tokens, head_dim, stride);
      Strided kh(k.value().data() + off, tokens, head_dim, stride);
      Strided vh(v.value().data() + off, tokens, head_dim, stride);
      StridedOut oh(values.data() + off, tokens, head_dim, stride);
      // Products of spike tensors are integer-valued, so computing them
      // before scaling keeps the result independent of summation order.
      counts.noalias() = qh * kh.transpose();
      oh.noalias() = counts * vh;
      oh *= scale;
      if (scores)
        Eigen::Map<RowMatrix<Scalar>>(scores->data() + (bi * heads + h) * tokens * tokens, tokens, tokens) =
            counts * scale;
    }
  }
  Tensor<Scalar> out(q.shape(), std::move(values));
  require_finite(out, "multihead_attention");

  if (should_record({&q, &k, &v})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active()->record(
        [q, k, v, out, heads, scale, tokens, width, head_dim, batches, block]() mutable {
          if (!out.has_grad()) return;
          const Eigen::OuterStride<> stride(width);
          ArrayX<Scalar> gq = ArrayX<Scalar>::Zero(q.numel());
          ArrayX<Scalar> gk = ArrayX<Scalar>::Zero(k.numel());
          ArrayX<Scalar> gv = ArrayX<Scalar>::Zero(v.numel());
          RowMatrix<Scalar> counts(tokens, tokens), gcounts(tokens, tokens);
          for (Index bi = 0; bi < batches; ++bi) {
            for (int h = 0; h < heads; ++h) {
              const Index off = bi * block + h * head_dim;
              Strided qh(q.value().data() + off, tokens, head_dim, stride);
              Strided kh(k.value().data() + off, tokens, head_dim, stride);
              Strided vh(v.value().data() + off, tokens, head_dim, stride);
              Strided gh(out.grad().data() + off, tokens, head_dim, stride);
              counts.noalias() = qh * kh.transpose();
              gcounts.noalias() = scale * gh * vh.transpose();
              StridedOut(gv.data() + off, tokens, head_dim, stride).noalias() += scale * counts.transpose() * gh;
              StridedOut(gq.data() + off, tokens, head_dim, stride).noalias() += gcounts * kh;
              StridedOut(gk.data() + off, tokens, head_dim, stride).noalias() += gcounts.transpose() * qh;
            }
          }
          if (q.requires_grad()) q.accumulate_grad(gq);
          if (k.requires_grad()) k.accumulate_grad(gk);
          if (v.requires_grad()) v.accumulate_grad(gv);
        });
  }
  return out;
}

#define STLW_INSTANTIATE_OPS(S)                                                                           \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                         \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                            \
  template Tensor<S> add_broadcast(const Tensor<S>&, const Tensor<S>&);                                  \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                            \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                            \
  template Tensor<S> scale(const Tensor<S>&, S);                                                         \
  template Tensor<S> one_minus(const Tensor<S>&);                                                        \
  template Tensor<S> add_scalar(const Tensor<S>&, const Tensor<S>&);                                     \
  template Tensor<S> sub_scalar(const Tensor<S>&, const Tensor<S>&);                                     \
  template Tensor<S> mul_scalar(const Tensor<S>&, const Tensor<S>&);                                     \
  template Tensor<S> heaviside_surrogate(const Tensor<S>&, S);                                           \
  template Tensor<S> sum(const Tensor<S>&);                                                              \
  template Tensor<S> mean(const Tensor<S>&);                                                             \
  template Tensor<S> mean_over(const Tensor<S>&, std::span<const int>);                                  \
  template Tensor<S> select_time(const Tensor<S>&, Index);                                               \
  template Tensor<S> stack_time(std::span<const Tensor<S>>);                                             \
  template Tensor<S> cross_entropy(const Tensor<S>&, std::span<const int>);                              \
  template Tensor<S> multihead_attention(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int, S, \
                                         ArrayX<S>*);

STLW_INSTANTIATE_OPS(float)
STLW_INSTANTIATE_OPS(double)

}  // namespace stlw
