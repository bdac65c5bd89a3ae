#pragma once

#include <string>

#include <json.hpp>

#include "stlw/checkpoint.hpp"
#include "stlw/compensation.hpp"
#include "stlw/config.hpp"

namespace stlw {

/// Pipeline stages shared by the CLI and in-process runs. Each stage is a
/// pure function of its inputs, so chaining through checkpoints reproduces
/// the in-process result exactly.
struct StageOutput {
  Model model;
  CheckpointMeta meta;
  RunLog log;
};

TrainConfig pretrain_config(const ExperimentConfig& cfg);
TrainConfig finetune_config(const ExperimentConfig& cfg);

Model init_model(const ExperimentConfig& cfg, const DataSplit& data);

StageOutput run_train(const ExperimentConfig& cfg, const DataSplit& data, const EpochCallback& on_epoch = {});

/// Prunes with the principled plan, or a random one of the same geometry.
StageOutput run_prune(const Checkpoint& in, PruneKind kind, double p, bool random, std::uint64_t seed,
                      const DataSplit& data);

/// Replaces neurons (LIF for ablation, sLIF otherwise) and fine-tunes under
/// the checkpoint's plan.
StageOutput run_compensate(const Checkpoint& in, NeuronKind neuron, const ExperimentConfig& cfg,
                           const DataSplit& data, const EpochCallback& on_epoch = {});

/// Accuracy, loss, firing rate, and parameter counts.
nlohmann::json run_eval(const Model& m, const DataSplit& data);

/// "<stage>-e<epoch>.stlw"
std::string checkpoint_name(const CheckpointMeta& meta);

}  // namespace stlw
