#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "stlw/analysis.hpp"
#include "stlw/compensation.hpp"
#include "stlw/data.hpp"
#include "stlw/model.hpp"
#include "stlw/pruning.hpp"

namespace stlw {

enum class DatasetKind { synthetic, idx, csv };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::synthetic;
  SynthSpec synth;
  // idx: four files; csv: train/test files.
  std::string train_images, train_labels, test_images, test_labels;
  std::string train_csv, test_csv;
  int rows = 28;
  int cols = 28;
  int patch = 7;
};

struct AnalysisConfig {
  bool rollout = true;
  double discard_ratio = 0.85;
  Index rollout_sample = 0;
  bool firing_rates = true;
  bool histogram = true;
  std::string histogram_layer = "attn";
  int histogram_bins = 50;
  bool energy = true;
  EnergyModel energy_model;
};

struct SweepConfig {
  std::vector<double> ps = {0.0, 0.5, 0.8, 0.9};
  std::vector<PruneKind> kinds = {PruneKind::l1p, PruneKind::dsp};
  std::vector<std::uint64_t> seeds = {1};
};

/// Everything one run needs. Parsed strictly: unknown keys are errors.
struct ExperimentConfig {
  std::string architecture = "Spikformer-2-32-128";
  int heads = 2;
  double init_gain = 5.0;
  double tau = 2.0;
  double threshold = 1.0;
  ResetMode reset = ResetMode::soft;
  double surrogate_width = 1.0;
  int time_steps = 4;
  std::uint64_t seed = 1;
  Encoding encoding = Encoding::rate;
  DatasetConfig dataset;
  TrainConfig train;
  TrainConfig finetune;
  PruneKind prune_kind = PruneKind::l1p;
  double prune_p = 0.8;
  NeuronKind neuron = NeuronKind::slif;
  AnalysisConfig analysis;
  SweepConfig sweep;
  std::string output_dir = "runs/default";

  ExperimentConfig();
  nlohmann::json to_json() const;
  void validate() const;
};

/// Throws ConfigError on unknown keys, wrong types, or invalid values.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Independent seed for one consumer ("data", "init", "train", ...).
std::uint64_t derive_seed(std::uint64_t seed, const std::string& stream);

DataSplit load_data(const ExperimentConfig& cfg);
ModelConfig model_config(const ExperimentConfig& cfg, const DataSplit& data);

}  // namespace stlw
