#include "stlw/workbench.hpp"

namespace stlw {

TrainConfig pretrain_config(const ExperimentConfig& cfg) {
  TrainConfig t = cfg.train;
  t.seed = derive_seed(cfg.seed, "train");
  t.time_steps = cfg.time_steps;
  t.mode = TrainMode::pretrain;
  return t;
}

TrainConfig finetune_config(const ExperimentConfig& cfg) {
  TrainConfig t = cfg.finetune;
  t.seed = derive_seed(cfg.seed, "finetune");
  t.time_steps = cfg.time_steps;
  t.mode = TrainMode::finetune;
  return t;
}

Model init_model(const ExperimentConfig& cfg, const DataSplit& data) {
  return Model::init(model_config(cfg, data), derive_seed(cfg.seed, "init"));
}

StageOutput run_train(const ExperimentConfig& cfg, const DataSplit& data, const EpochCallback& on_epoch) {
  TrainResult r = pretrain(init_model(cfg, data), data, pretrain_config(cfg), on_epoch);
  StageOutput out;
  out.model = std::move(r.model);
  out.log = std::move(r.log);
  out.meta.stage = "train";
  out.meta.epoch = r.best_epoch;
  out.meta.baseline = count_params(out.model);
  out.meta.metrics = run_eval(out.model, data);
  return out;
}

StageOutput run_prune(const Checkpoint& in, PruneKind kind, double p, bool random, std::uint64_t seed,
                      const DataSplit& data) {
  const PrunePlan plan = random ? random_plan(in.model, p, kind, seed)
                                : (kind == PruneKind::l1p ? l1p_plan(in.model, p) : dsp_plan(in.model, p));
  StageOutput out;
  out.model = apply_plan(in.model, plan);
  out.meta.stage = "prune";
  out.meta.epoch = in.meta.epoch;
  out.meta.baseline = in.meta.baseline ? *in.meta.baseline : count_params(in.model);
  out.meta.plan = plan;
  out.meta.metrics = run_eval(out.model, data);
  out.meta.metrics["compression"] = compression_report(*out.meta.baseline, count_params(out.model)).to_json();
  return out;
}

StageOutput run_compensate(const Checkpoint& in, NeuronKind neuron, const ExperimentConfig& cfg,
                           const DataSplit& data, const EpochCallback& on_epoch) {
  if (!in.meta.plan) throw PreconditionError("compensate needs a pruned checkpoint (no prune plan in metadata)");
  TrainResult r = finetune(with_neurons(in.model, neuron), *in.meta.plan, data, finetune_config(cfg), on_epoch);
  StageOutput out;
  out.model = std::move(r.model);
  out.log = std::move(r.log);
  out.meta.stage = "compensate-" + to_string(neuron);
  out.meta.epoch = r.best_epoch;
  out.meta.baseline = in.meta.baseline;
  out.meta.plan = in.meta.plan;
  out.meta.metrics = run_eval(out.model, data);
  out.meta.metrics["epochs_to_95pct"] = out.log.epochs_to_fraction(0.95);
  return out;
}

nlohmann::json run_eval(const Model& m, const DataSplit& data) {
  const EvalResult test = evaluate(m, data.test);
  const EvalResult train = evaluate(m, data.train);
  const ParamCount pc = count_params(m);
  return {{"test_accuracy", test.accuracy},
          {"test_loss", test.loss},
          {"train_accuracy", train.accuracy},
          {"st_rate", test.st_rate},
          {"params_total", pc.total},
          {"params_st", pc.st_blocks}};
}

std::string checkpoint_name(const CheckpointMeta& meta) {
  return meta.stage + "-e" + std::to_string(meta.epoch) + ".stlw";
}

}  // namespace stlw
