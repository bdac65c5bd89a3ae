#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "stlw/model.hpp"

namespace stlw {

enum class PruneKind { l1p, dsp };

std::string to_string(PruneKind kind);
PruneKind parse_prune_kind(std::string_view text);

/// Retained dimension indices of one block, sorted ascending.
struct BlockDims {
  std::vector<Index> ssa;
  std::vector<Index> mlp;
  friend bool operator==(const BlockDims&, const BlockDims&) = default;
};

/// Output of a pruning strategy, applied to a model by apply_plan().
struct PrunePlan {
  PruneKind kind = PruneKind::l1p;
  double sparsity = 0.0;
  bool random = false;
  std::uint64_t seed = 0;
  /// l1p: per block, per BlockWeight, a 0/1 mask of the weight's shape.
  std::vector<std::array<Tensor<float>, 6>> masks;
  /// dsp: per block retained dims.
  std::vector<BlockDims> dims;
  /// dsp provenance: per block s_ssa and DVA(M1) (empty for random plans).
  std::vector<Eigen::VectorXf> ssa_scores;
  std::vector<Eigen::VectorXf> mlp_scores;
};

/// ceil(p * n), robust to representation error in p (0.3 * 10 is 3, not 4).
Index pruned_count(Index n, double p);

/// Zeroes exactly ceil(p * m * n) entries: the smallest |w|, ties broken by
/// row-major index. Returns the 0/1 keep mask.
Tensor<float> l1p_mask(const Tensor<float>& w, double p);

/// Column-wise L1 sums: the significance of each output dimension.
Eigen::VectorXf dva_scores(const Tensor<float>& w);

/// Mean of DVA(U_q), DVA(U_k), DVA(U_v).
Eigen::VectorXf ssa_scores(const Block& blk);

/// Attention width kept by DSP: n - ceil(p n), rounded up to a multiple of
/// `heads`. Throws ParameterError when nothing would be kept.
Index dsp_attn_keep(Index n, int heads, double p);

/// Top-scoring indices per head slice (ssa) and overall (mlp).
BlockDims dsp_block_dims(const Block& blk, double p);

PrunePlan l1p_plan(const Model& m, double p);
PrunePlan dsp_plan(const Model& m, double p);

/// Same geometry as the principled plan of `kind`, uniform-random selection.
PrunePlan random_plan(const Model& m, double p, PruneKind kind, std::uint64_t seed);

/// l1p: multiplies weights by masks and attaches the masks to the model so
/// they survive fine-tuning. dsp: physically slices the block matrices.
Model apply_plan(const Model& m, const PrunePlan& plan);

}  // namespace stlw
