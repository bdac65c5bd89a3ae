#pragma once

// Independent reference implementations used by the tests. Everything here is
// written with plain loops over std::vector so it shares no code path with
// the library kernels it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "stlw/data.hpp"
#include "stlw/model.hpp"
#include "stlw/pruning.hpp"

namespace oracle {

using stlw::Index;

// ---------------------------------------------------------------- LIF

struct LifSpec {
  double tau = 2.0;
  double u_th = 1.0;
  double u_rest = 0.0;
  bool soft = true;
};

/// Scalar neuron driven by `current[t]`; returns the spike train.
inline std::vector<double> simulate_lif(const std::vector<double>& current, const LifSpec& s) {
  std::vector<double> spikes;
  double u = s.u_rest;
  for (double i : current) {
    u = u + (i - (u - s.u_rest)) / s.tau;
    const double o = u >= s.u_th ? 1.0 : 0.0;
    u = s.soft ? u - o * s.u_th : u * (1.0 - o);
    spikes.push_back(o);
  }
  return spikes;
}

// -------------------------------------------------------- reference model

/// Row-major [rows x cols] matrix as nested loops.
struct Mat {
  Index rows = 0, cols = 0;
  std::vector<double> v;
  double& operator()(Index r, Index c) { return v[static_cast<std::size_t>(r * cols + c)]; }
  double operator()(Index r, Index c) const { return v[static_cast<std::size_t>(r * cols + c)]; }
};

inline Mat to_mat(const stlw::Tensor<double>& t) {
  Mat m{t.shape()[0], t.shape()[1], {}};
  m.v.assign(t.value().data(), t.value().data() + t.numel());
  return m;
}

/// Activations [T][N][d] for one sample.
using Seq = std::vector<Mat>;

inline Seq project(const Seq& x, const Mat& w) {
  Seq out;
  for (const Mat& xt : x) {
    Mat o{xt.rows, w.cols, std::vector<double>(static_cast<std::size_t>(xt.rows * w.cols), 0.0)};
    for (Index i = 0; i < xt.rows; ++i)
      for (Index j = 0; j < w.cols; ++j) {
        double s = 0;
        for (Index k = 0; k < xt.cols; ++k) s += xt(i, k) * w(k, j);
        o(i, j) = s;
      }
    out.push_back(std::move(o));
  }
  return out;
}

inline LifSpec spec_of(const stlw::SLIFParams<double>& p) {
  return {p.tau.item(), p.u_th.item(), p.u_rest, p.reset == stlw::ResetMode::soft};
}

inline Seq spike(const Seq& current, const LifSpec& s) {
  Seq out = current;
  const Index n = current.front().rows, d = current.front().cols;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) {
      std::vector<double> drive;
      for (const Mat& c : current) drive.push_back(c(i, j));
      const auto train = simulate_lif(drive, s);
      for (std::size_t t = 0; t < train.size(); ++t) out[t](i, j) = train[t];
    }
  return out;
}

inline Seq plus(const Seq& a, const Seq& b) {
  Seq out = a;
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t i = 0; i < a[t].v.size(); ++i) out[t].v[i] += b[t].v[i];
  return out;
}

inline Seq attention(const Seq& q, const Seq& k, const Seq& v, int heads, double scale) {
  Seq out;
  const Index n = q.front().rows, dq = q.front().cols, dh = dq / heads;
  for (std::size_t t = 0; t < q.size(); ++t) {
    Mat o{n, dq, std::vector<double>(static_cast<std::size_t>(n * dq), 0.0)};
    for (int h = 0; h < heads; ++h)
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) {
          double s = 0;
          for (Index c = h * dh; c < (h + 1) * dh; ++c) s += q[t](i, c) * k[t](j, c);
          for (Index c = h * dh; c < (h + 1) * dh; ++c) o(i, c) += s * v[t](j, c);
        }
    for (double& x : o.v) x *= scale;
    out.push_back(std::move(o));
  }
  return out;
}

inline Seq block(const Seq& x, const stlw::STBlock<double>& b) {
  using stlw::BlockNeuron;
  using stlw::BlockWeight;
  const auto W = [&](BlockWeight w) { return to_mat(b.weight(w)); };
  const auto N = [&](BlockNeuron n) { return spec_of(b.neuron(n)); };
  const Seq q = spike(project(x, W(BlockWeight::Uq)), N(BlockNeuron::q));
  const Seq k = spike(project(x, W(BlockWeight::Uk)), N(BlockNeuron::k));
  const Seq v = spike(project(x, W(BlockWeight::Uv)), N(BlockNeuron::v));
  const Seq a = spike(attention(q, k, v, b.heads, b.attn_scale), N(BlockNeuron::attn));
  const Seq ssa = spike(project(a, W(BlockWeight::M0)), N(BlockNeuron::m0));
  const Seq mid = plus(ssa, x);
  const Seq hid = spike(project(mid, W(BlockWeight::M1)), N(BlockNeuron::m1));
  const Seq mlp = spike(project(hid, W(BlockWeight::M2)), N(BlockNeuron::m2));
  return plus(mlp, mid);
}

/// Logits [B][C] for input [T, B, N, d_in].
inline std::vector<std::vector<double>> forward(const stlw::STModel<double>& m, const stlw::Tensor<double>& input) {
  const Index T = input.shape()[0], B = input.shape()[1], N = input.shape()[2], D = input.shape()[3];
  std::vector<std::vector<double>> logits;
  const Mat embed = to_mat(m.embed), pos = to_mat(m.pos), head = to_mat(m.head);
  for (Index b = 0; b < B; ++b) {
    Seq x;
    for (Index t = 0; t < T; ++t) {
      Mat f{N, D, {}};
      for (Index i = 0; i < N * D; ++i) f.v.push_back(input.value()[((t * B + b) * N) * D + i]);
      x.push_back(std::move(f));
    }
    Seq cur = project(x, embed);
    for (Mat& c : cur)
      for (std::size_t i = 0; i < c.v.size(); ++i) c.v[i] += pos.v[i];
    Seq h = spike(cur, spec_of(m.embed_neuron));
    for (const auto& blk : m.blocks) h = block(h, blk);
    const Index d = h.front().cols;
    std::vector<double> pooled(static_cast<std::size_t>(d), 0.0);
    for (const Mat& ht : h)
      for (Index i = 0; i < N; ++i)
        for (Index j = 0; j < d; ++j) pooled[static_cast<std::size_t>(j)] += ht(i, j) / static_cast<double>(T * N);
    std::vector<double> out(static_cast<std::size_t>(head.cols), 0.0);
    for (Index c = 0; c < head.cols; ++c)
      for (Index j = 0; j < d; ++j) out[static_cast<std::size_t>(c)] += pooled[static_cast<std::size_t>(j)] * head(j, c);
    logits.push_back(std::move(out));
  }
  return logits;
}

// -------------------------------------------------------------- top-k

/// Indices of the k largest scores by exhaustive comparison: an index is
/// selected iff fewer than k indices beat it (greater score, or equal score
/// at a lower index).
inline std::set<Index> brute_top_k(const std::vector<double>& scores, Index k) {
  std::set<Index> out;
  const Index n = static_cast<Index>(scores.size());
  for (Index i = 0; i < n; ++i) {
    Index better = 0;
    for (Index j = 0; j < n; ++j)
      if (scores[static_cast<std::size_t>(j)] > scores[static_cast<std::size_t>(i)] ||
          (scores[static_cast<std::size_t>(j)] == scores[static_cast<std::size_t>(i)] && j < i))
        ++better;
    if (better < k) out.insert(i);
  }
  return out;
}

/// Column L1 sums by explicit loops.
inline std::vector<double> column_l1(const stlw::Tensor<float>& w) {
  const Index r = w.shape()[0], c = w.shape()[1];
  std::vector<double> s(static_cast<std::size_t>(c), 0.0);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) s[static_cast<std::size_t>(j)] += std::fabs(w.value()[i * c + j]);
  return s;
}

// ------------------------------------------------------- zero padding

/// The unsliced model with every pruned DSP dimension zeroed: columns of
/// U_q/U_k/U_v/M1 and rows of M0/M2 outside the retained sets.
inline stlw::Model zero_padded(const stlw::Model& m, const stlw::PrunePlan& plan) {
  using stlw::BlockWeight;
  stlw::Model out = m.clone();
  for (std::size_t l = 0; l < out.blocks.size(); ++l) {
    auto& b = out.blocks[l];
    const std::set<Index> ssa(plan.dims[l].ssa.begin(), plan.dims[l].ssa.end());
    const std::set<Index> mlp(plan.dims[l].mlp.begin(), plan.dims[l].mlp.end());
    const auto zero_cols = [](stlw::Tensor<float>& w, const std::set<Index>& keep) {
      auto mm = w.mutable_matrix();
      for (Index j = 0; j < mm.cols(); ++j)
        if (!keep.count(j)) mm.col(j).setZero();
    };
    const auto zero_rows = [](stlw::Tensor<float>& w, const std::set<Index>& keep) {
      auto mm = w.mutable_matrix();
      for (Index i = 0; i < mm.rows(); ++i)
        if (!keep.count(i)) mm.row(i).setZero();
    };
    zero_cols(b.weight(BlockWeight::Uq), ssa);
    zero_cols(b.weight(BlockWeight::Uk), ssa);
    zero_cols(b.weight(BlockWeight::Uv), ssa);
    zero_rows(b.weight(BlockWeight::M0), ssa);
    zero_cols(b.weight(BlockWeight::M1), mlp);
    zero_rows(b.weight(BlockWeight::M2), mlp);
  }
  return out;
}

// --------------------------------------------------- finite differences

/// Central difference of f with respect to every element of `param`.
inline std::vector<double> central_difference(stlw::Tensor<double> param, const std::function<double()>& f,
                                              double eps) {
  std::vector<double> g;
  for (Index i = 0; i < param.numel(); ++i) {
    const double saved = param.value()[i];
    param.mutable_value()[i] = saved + eps;
    const double up = f();
    param.mutable_value()[i] = saved - eps;
    const double down = f();
    param.mutable_value()[i] = saved;
    g.push_back((up - down) / (2 * eps));
  }
  return g;
}

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += std::max(a[i] * a[i], b[i] * b[i]);
  }
  return den == 0 ? std::sqrt(num) : std::sqrt(num / den);
}

// ----------------------------------------------------- prototype oracle

/// Nearest-prototype classifier on per-patch mean spike rates. Prototypes
/// are the closed-form class rate maps: r_high on the class's patches,
/// r_low elsewhere.
inline double prototype_accuracy(const stlw::Dataset& d, const std::vector<std::vector<int>>& groups, double r_high,
                                 double r_low) {
  Index correct = 0;
  const Index step = d.patches * d.features;
  for (Index s = 0; s < d.size(); ++s) {
    std::vector<double> rate(static_cast<std::size_t>(d.patches), 0.0);
    for (Index t = 0; t < d.time_steps; ++t)
      for (Index p = 0; p < d.patches; ++p)
        for (Index f = 0; f < d.features; ++f)
          rate[static_cast<std::size_t>(p)] += d.samples[s * d.sample_len() + t * step + p * d.features + f];
    for (double& r : rate) r /= static_cast<double>(d.time_steps * d.features);
    int best = -1;
    double best_dist = 1e300;
    for (std::size_t c = 0; c < groups.size(); ++c) {
      std::vector<double> proto(static_cast<std::size_t>(d.patches), r_low);
      for (int p : groups[c]) proto[static_cast<std::size_t>(p)] = r_high;
      double dist = 0;
      for (std::size_t p = 0; p < proto.size(); ++p) dist += (rate[p] - proto[p]) * (rate[p] - proto[p]);
      if (dist < best_dist) {
        best_dist = dist;
        best = static_cast<int>(c);
      }
    }
    if (best == d.labels[static_cast<std::size_t>(s)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

/// Random binary tensor of the given shape.
inline stlw::Tensor<float> random_spikes(stlw::Shape shape, double rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(rate);
  stlw::ArrayX<float> v(shape.numel());
  for (Index i = 0; i < v.size(); ++i) v[i] = b(rng) ? 1.0f : 0.0f;
  return stlw::Tensor<float>(shape, std::move(v));
}

}  // namespace oracle
