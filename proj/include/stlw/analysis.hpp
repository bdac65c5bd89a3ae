#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "stlw/compensation.hpp"
#include "stlw/data.hpp"
#include "stlw/model.hpp"

namespace stlw {

// ---------------------------------------------------------------- rollout

/// One layer's attention, [H, P, P] row-major.
struct AttentionMap {
  Index heads = 0;
  Index patches = 0;
  ArrayX<double> values;

  double at(Index h, Index i, Index j) const { return values[(h * patches + i) * patches + j]; }
};

struct RolloutMask {
  Eigen::VectorXd values;  // length P, nonnegative
  double discard_ratio = 0.85;
  int layers = 0;
  Index heads = 0;
};

/// R = prod_l normalize_rows(mean_heads(A_l) + I), first layer applied first.
/// Negative entries are clipped to 0 before fusing.
Eigen::MatrixXd rollout_matrix(const std::vector<AttentionMap>& attn);

/// Column mean of the rollout matrix with the floor(discard_ratio * P)
/// smallest entries zeroed (ties broken toward the lower index).
RolloutMask attention_rollout(const std::vector<AttentionMap>& attn, double discard_ratio = 0.85);

/// Zeroes exactly floor(ratio * size) smallest entries.
Eigen::VectorXd discard_smallest(const Eigen::VectorXd& values, double ratio);

/// Final-step attention scores of sample `index` of `data`, one map per block.
std::vector<AttentionMap> collect_attention(const Model& m, const Dataset& data, Index index);

/// Nearest-neighbour expansion of a grid_h x grid_w mask by `patch` pixels,
/// then bilinear resampling to out_h x out_w. Row-major output.
Eigen::MatrixXd upsample_mask(const Eigen::VectorXd& mask, Index grid_h, Index grid_w, Index patch, Index out_h,
                              Index out_w);

/// Binary (P5) graymap, scaled so the maximum maps to 255.
void write_pgm(const Eigen::MatrixXd& image, const std::filesystem::path& path);
/// One grid row per CSV line.
void write_mask_csv(const Eigen::VectorXd& mask, Index grid_w, const std::filesystem::path& path);

// ----------------------------------------------------------- firing rates

struct FiringRates {
  std::vector<LayerRate> layers;
  double st_rate = 0;
  std::string to_csv() const;
};

FiringRates firing_rates(const Model& m, const Dataset& data);

// ------------------------------------------------------- current histogram

struct Histogram {
  std::vector<double> edges;    // bins + 1
  std::vector<double> density;  // integrates to 1
  double mean = 0;
  double variance = 0;
  Index samples = 0;

  double integral() const;
  std::string to_csv() const;
};

Histogram make_histogram(const ArrayX<double>& values, int bins);

/// Pre-neuron input currents at `layer`, e.g. "blocks.0.attn". The selector
/// "attn" pools every block's attention layer.
Histogram current_histogram(const Model& m, const Dataset& data, const std::string& layer, int bins = 50);

// ----------------------------------------------------------------- energy

struct EnergyModel {
  double e_mac = 4.6;  // pJ
  double e_ac = 0.9;   // pJ
  void validate() const;
};

/// Per-sample activity of one weight product.
struct SynapseActivity {
  std::string name;
  double rate = 0;    // mean input activation
  double inputs = 0;  // input elements per sample, all time steps
  Index fan_out = 0;
  bool spiking = true;
};

struct EnergyReport {
  double ac_ops = 0;
  double mac_ops = 0;
  double ac_pj = 0;
  double mac_pj = 0;
  double total_pj = 0;
  /// total / reference total; 0 without a reference.
  double ratio = 0;
  nlohmann::json to_json() const;
};

std::vector<SynapseActivity> synapse_activity(const Model& m, const Dataset& data);

/// AC ops = rate * inputs * fan_out over spiking products; MAC ops =
/// inputs * fan_out over real-valued ones.
EnergyReport energy_from_activity(const std::vector<SynapseActivity>& activity, const EnergyModel& em);

EnergyReport estimate_energy(const Model& m, const Dataset& data, const EnergyModel& em,
                             const Model* reference = nullptr);

// ------------------------------------------------------------ compression

struct CompressionReport {
  ParamCount before;
  ParamCount after;
  double cr_total = 0;  // percent
  double cr_st = 0;     // percent
  /// "total/st" with two decimals.
  std::string formatted() const;
  nlohmann::json to_json() const;
};

/// 100 * (1 - after / before).
double compression_ratio(double before, double after);
CompressionReport compression_report(const ParamCount& before, const ParamCount& after);
CompressionReport compression_report(const Model& before, const Model& after);

}  // namespace stlw
