#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "stlw/data.hpp"
#include "stlw/model.hpp"
#include "stlw/pruning.hpp"

namespace stlw {

enum class TrainMode { pretrain, finetune };
enum class NeuronKind { lif, slif };

std::string to_string(TrainMode mode);
std::string to_string(NeuronKind kind);
NeuronKind parse_neuron_kind(const std::string& text);

struct TrainConfig {
  int epochs = 40;
  int batch_size = 32;
  double learning_rate = 2e-3;
  double weight_decay = 0.06;
  std::uint64_t seed = 0;
  /// Time steps expected in the data; 0 accepts whatever the data carries.
  int time_steps = 0;
  /// Cosine decay from learning_rate to 0 over the epochs.
  bool cosine = true;
  TrainMode mode = TrainMode::pretrain;

  void validate() const;
};

struct LayerRate {
  std::string name;
  double rate = 0;
};

struct EvalResult {
  double accuracy = 0;
  double loss = 0;
  std::vector<LayerRate> rates;
  /// Spikes over neurons across all encoder-block layers.
  double st_rate = 0;
};

/// Classification accuracy, mean cross-entropy, and firing rates on `data`.
EvalResult evaluate(const Model& m, const Dataset& data, int batch_size = 64);

struct LayerSnapshot {
  std::string name;
  double tau = 0;
  double u_th = 0;
  double rate = 0;
};

struct EpochRecord {
  int epoch = 0;
  std::string stage;
  double learning_rate = 0;
  double loss = 0;
  double train_accuracy = 0;
  double test_accuracy = 0;
  double st_rate = 0;
  std::vector<LayerSnapshot> layers;

  nlohmann::json to_json() const;
  static EpochRecord from_json(const nlohmann::json& j);
};

/// Append-only per-epoch history. Epoch numbers strictly increase.
class RunLog {
 public:
  void append(EpochRecord record);
  const std::vector<EpochRecord>& records() const { return records_; }
  bool empty() const { return records_.empty(); }
  std::size_t size() const { return records_.size(); }

  /// One JSON object per line.
  std::string to_jsonl() const;
  static RunLog from_jsonl(const std::string& text);
  void write_jsonl(const std::filesystem::path& path) const;

  /// First epoch whose test accuracy reaches `fraction` of the last epoch's;
  /// 0 for an empty log.
  int epochs_to_fraction(double fraction = 0.95) const;

 private:
  std::vector<EpochRecord> records_;
};

struct TrainResult {
  /// Snapshot with the best test accuracy (earliest on ties).
  Model model;
  RunLog log;
  int best_epoch = 0;
  double best_accuracy = 0;
  /// Model after the last epoch.
  Model last;
};

/// Raised when the loss or a gradient becomes non-finite. Carries the model
/// as it was after the last completed epoch.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, Model last_good, int epoch)
      : std::runtime_error(what), last_good_(std::move(last_good)), epoch_(epoch) {}
  const Model& last_good() const { return last_good_; }
  int epoch() const { return epoch_; }

 private:
  Model last_good_;
  int epoch_;
};

/// Called after each completed epoch with the current model.
using EpochCallback = std::function<void(const EpochRecord&, const Model&)>;

/// Surrogate-gradient training of every synaptic weight with frozen LIF
/// neurons.
TrainResult pretrain(const Model& m, const DataSplit& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Every spiking layer becomes learnable in tau and u_th, starting from the
/// current values.
Model replace_with_slif(const Model& m);
/// Freezes every spiking layer.
Model replace_with_lif(const Model& m);
Model with_neurons(const Model& m, NeuronKind kind);

/// Joint training of weights and whichever intrinsic parameters are
/// learnable. Masks are re-applied and intrinsics clamped after each step.
/// Throws PreconditionError if `plan` is not applied to `m`.
TrainResult finetune(const Model& m, const PrunePlan& plan, const DataSplit& data, const TrainConfig& cfg,
                     const EpochCallback& on_epoch = {});

/// True when `m` carries the masks or sliced geometry that `plan` prescribes.
bool plan_applied(const Model& m, const PrunePlan& plan);

struct SweepRow {
  PruneKind kind = PruneKind::l1p;
  double p = 0;
  std::uint64_t seed = 0;
  double acc_pruned = 0;
  double acc_lif = 0;
  double acc_slif = 0;
  int epochs_to_95pct = 0;      // sLIF run
  int epochs_to_95pct_lif = 0;  // LIF run
  double rate_lif = 0;
  double rate_slif = 0;
};

struct SweepReport {
  double baseline_accuracy = 0;
  double baseline_rate = 0;
  std::vector<SweepRow> rows;

  /// Header kind,p,seed,acc_pruned,acc_lif,acc_slif,epochs_to_95pct.
  std::string to_csv() const;
  /// Adds rows from another report; result is sorted by (kind, p, seed).
  void merge(const SweepReport& other);
};

/// For each (kind, p): prune the baseline, then fine-tune separately with LIF
/// and sLIF neurons using identical seeds and schedules. p = 0 skips
/// fine-tuning (the pruned model is the baseline).
SweepReport sparsity_sweep(const Model& baseline, const DataSplit& data, const TrainConfig& cfg,
                           const std::vector<double>& ps, const std::vector<PruneKind>& kinds);

}  // namespace stlw
