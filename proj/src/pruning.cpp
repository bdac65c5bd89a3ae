#include "stlw/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace stlw {

std::string to_string(PruneKind kind) { return kind == PruneKind::l1p ? "l1p" : "dsp"; }

PruneKind parse_prune_kind(std::string_view text) {
  if (text == "l1p") return PruneKind::l1p;
  if (text == "dsp") return PruneKind::dsp;
  throw ConfigError("unknown prune kind '" + std::string(text) + "' (expected l1p or dsp)");
}

namespace {

void require_sparsity(double p, bool allow_one) {
  if (!(p >= 0.0) || (allow_one ? p > 1.0 : p >= 1.0))
    throw ParameterError("pruning sparsity " + std::to_string(p) + (allow_one ? " outside [0, 1]" : " outside [0, 1)"));
}

// Indices of the `keep` largest scores among `candidates`; ties prefer the
// lower index. Returned sorted ascending.
std::vector<Index> top_indices(const Eigen::VectorXf& scores, std::vector<Index> candidates, Index keep) {
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](Index a, Index b) { return scores[a] > scores[b]; });
  candidates.resize(static_cast<std::size_t>(keep));
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

std::vector<Index> iota(Index begin, Index end) {
  std::vector<Index> out(static_cast<std::size_t>(end - begin));
  std::iota(out.begin(), out.end(), begin);
  return out;
}

Index mlp_keep(Index n, double p) {
  const Index keep = n - pruned_count(n, p);
  if (keep < 1) throw ParameterError("over-pruning: no MLP hidden dimension would remain");
  return keep;
}

Tensor<float> select_columns(const Tensor<float>& w, const std::vector<Index>& cols) {
  const auto src = w.matrix();
  RowMatrix<float> out(src.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Index>(j)) = src.col(cols[j]);
  return Tensor<float>(Shape{out.rows(), out.cols()}, Eigen::Map<const ArrayX<float>>(out.data(), out.size()),
                       w.requires_grad());
}

Tensor<float> select_rows(const Tensor<float>& w, const std::vector<Index>& rows) {
  const auto src = w.matrix();
  RowMatrix<float> out(static_cast<Index>(rows.size()), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = src.row(rows[i]);
  return Tensor<float>(Shape{out.rows(), out.cols()}, Eigen::Map<const ArrayX<float>>(out.data(), out.size()),
                       w.requires_grad());
}

void check_dims(const std::vector<Index>& dims, Index extent, const char* what) {
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (dims[i] < 0 || dims[i] >= extent) throw PlanError(std::string(what) + " index out of range");
    if (i > 0 && dims[i] <= dims[i - 1]) throw PlanError(std::string(what) + " indices must be sorted and unique");
  }
  if (dims.empty()) throw PlanError(std::string(what) + " keeps no dimension");
}

}  // namespace

Index pruned_count(Index n, double p) {
  const double exact = p * static_cast<double>(n);
  const double nearest = std::round(exact);
  if (std::abs(exact - nearest) <= 1e-9 * std::max(1.0, exact)) return static_cast<Index>(nearest);
  return static_cast<Index>(std::ceil(exact));
}

Tensor<float> l1p_mask(const Tensor<float>& w, double p) {
  require_sparsity(p, true);
  const Index total = w.numel();
  const Index prune = pruned_count(total, p);
  std::vector<Index> order = iota(0, total);
  const auto& v = w.value();
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return std::abs(v[a]) < std::abs(v[b]); });
  ArrayX<float> mask = ArrayX<float>::Ones(total);
  for (Index i = 0; i < prune; ++i) mask[order[static_cast<std::size_t>(i)]] = 0.0f;
  return Tensor<float>(w.shape(), std::move(mask));
}

Eigen::VectorXf dva_scores(const Tensor<float>& w) {
  if (w.rank() != 2) throw DimensionError("dva_scores expects a matrix, got " + w.shape().str());
  return w.matrix().cwiseAbs().colwise().sum().transpose();
}

Eigen::VectorXf ssa_scores(const Block& blk) {
  return (dva_scores(blk.weight(BlockWeight::Uq)) + dva_scores(blk.weight(BlockWeight::Uk)) +
          dva_scores(blk.weight(BlockWeight::Uv))) /
         3.0f;
}

Index dsp_attn_keep(Index n, int heads, double p) {
  require_sparsity(p, false);
  const Index keep = n - pruned_count(n, p);
  const Index rounded = (keep + heads - 1) / heads * heads;
  if (rounded < heads) throw ParameterError("over-pruning: fewer retained attention dims than heads");
  return std::min(rounded, n);
}

BlockDims dsp_block_dims(const Block& blk, double p) {
  const Index n = blk.attn_dim();
  const Index per_head = dsp_attn_keep(n, blk.heads, p) / blk.heads;
  const Index slice = n / blk.heads;
  const Eigen::VectorXf s = ssa_scores(blk);
  BlockDims dims;
  for (int h = 0; h < blk.heads; ++h) {
    auto chosen = top_indices(s, iota(h * slice, (h + 1) * slice), per_head);
    dims.ssa.insert(dims.ssa.end(), chosen.begin(), chosen.end());
  }
  const Eigen::VectorXf sm = dva_scores(blk.weight(BlockWeight::M1));
  dims.mlp = top_indices(sm, iota(0, blk.hidden_dim()), mlp_keep(blk.hidden_dim(), p));
  return dims;
}

PrunePlan l1p_plan(const Model& m, double p) {
  require_sparsity(p, true);
  PrunePlan plan;
  plan.kind = PruneKind::l1p;
  plan.sparsity = p;
  for (const auto& b : m.blocks) {
    std::array<Tensor<float>, 6> masks;
    for (int i = 0; i < 6; ++i) masks[i] = l1p_mask(b.weights[i], p);
    plan.masks.push_back(std::move(masks));
  }
  return plan;
}

PrunePlan dsp_plan(const Model& m, double p) {
  require_sparsity(p, false);
  PrunePlan plan;
  plan.kind = PruneKind::dsp;
  plan.sparsity = p;
  for (const auto& b : m.blocks) {
    plan.dims.push_back(dsp_block_dims(b, p));
    plan.ssa_scores.push_back(ssa_scores(b));
    plan.mlp_scores.push_back(dva_scores(b.weight(BlockWeight::M1)));
  }
  return plan;
}

PrunePlan random_plan(const Model& m, double p, PruneKind kind, std::uint64_t seed) {
  require_sparsity(p, kind == PruneKind::l1p);
  std::mt19937_64 rng(seed);
  PrunePlan plan;
  plan.kind = kind;
  plan.sparsity = p;
  plan.random = true;
  plan.seed = seed;
  for (const auto& b : m.blocks) {
    if (kind == PruneKind::l1p) {
      std::array<Tensor<float>, 6> masks;
      for (int i = 0; i < 6; ++i) {
        const Index total = b.weights[i].numel();
        std::vector<Index> order = iota(0, total);
        std::shuffle(order.begin(), order.end(), rng);
        ArrayX<float> mask = ArrayX<float>::Ones(total);
        for (Index j = 0; j < pruned_count(total, p); ++j) mask[order[static_cast<std::size_t>(j)]] = 0.0f;
        masks[i] = Tensor<float>(b.weights[i].shape(), std::move(mask));
      }
      plan.masks.push_back(std::move(masks));
    } else {
      const Index n = b.attn_dim();
      const Index per_head = dsp_attn_keep(n, b.heads, p) / b.heads;
      const Index slice = n / b.heads;
      BlockDims dims;
      for (int h = 0; h < b.heads; ++h) {
        std::vector<Index> cand = iota(h * slice, (h + 1) * slice);
        std::shuffle(cand.begin(), cand.end(), rng);
        cand.resize(static_cast<std::size_t>(per_head));
        std::sort(cand.begin(), cand.end());
        dims.ssa.insert(dims.ssa.end(), cand.begin(), cand.end());
      }
      std::vector<Index> cand = iota(0, b.hidden_dim());
      std::shuffle(cand.begin(), cand.end(), rng);
      cand.resize(static_cast<std::size_t>(mlp_keep(b.hidden_dim(), p)));
      std::sort(cand.begin(), cand.end());
      dims.mlp = std::move(cand);
      plan.dims.push_back(std::move(dims));
    }
  }
  return plan;
}

Model apply_plan(const Model& m, const PrunePlan& plan) {
  Model out = m.clone();
  if (plan.kind == PruneKind::l1p) {
    if (plan.masks.size() != out.blocks.size()) throw PlanError("plan has masks for a different number of blocks");
    for (std::size_t l = 0; l < out.blocks.size(); ++l) {
      auto& b = out.blocks[l];
      for (int i = 0; i < 6; ++i) {
        const Tensor<float>& mask = plan.masks[l][i];
        if (!mask.defined() || !(mask.shape() == b.weights[i].shape()))
          throw PlanError(std::string("mask geometry mismatch for ") + kBlockWeightNames[i] + " of block " +
                          std::to_string(l));
        b.masks[i] = b.masks[i].defined() ? Tensor<float>(mask.shape(), b.masks[i].value() * mask.value())
                                          : mask.detach();
      }
    }
    out.enforce_masks();
    return out;
  }

  if (plan.dims.size() != out.blocks.size()) throw PlanError("plan has dims for a different number of blocks");
  for (std::size_t l = 0; l < out.blocks.size(); ++l) {
    auto& b = out.blocks[l];
    const BlockDims& d = plan.dims[l];
    check_dims(d.ssa, b.attn_dim(), "ssa");
    check_dims(d.mlp, b.hidden_dim(), "mlp");
    const Index slice = b.attn_dim() / b.heads;
    std::vector<Index> per_head(static_cast<std::size_t>(b.heads), 0);
    for (Index i : d.ssa) ++per_head[static_cast<std::size_t>(i / slice)];
    if (std::adjacent_find(per_head.begin(), per_head.end(), std::not_equal_to<>()) != per_head.end())
      throw PlanError("ssa dims must keep the same count in every head");

    const auto slice_weight = [&](BlockWeight w, bool columns, const std::vector<Index>& idx) {
      const int i = static_cast<int>(w);
      b.weights[i] = columns ? select_columns(b.weights[i], idx) : select_rows(b.weights[i], idx);
      if (b.masks[i].defined()) b.masks[i] = columns ? select_columns(b.masks[i], idx) : select_rows(b.masks[i], idx);
    };
    slice_weight(BlockWeight::Uq, true, d.ssa);
    slice_weight(BlockWeight::Uk, true, d.ssa);
    slice_weight(BlockWeight::Uv, true, d.ssa);
    slice_weight(BlockWeight::M0, false, d.ssa);
    slice_weight(BlockWeight::M1, true, d.mlp);
    slice_weight(BlockWeight::M2, false, d.mlp);
    b.validate();
  }
  return out;
}

}  // namespace stlw
