#include <doctest.h>

#include "oracles.hpp"
#include "stlw/compensation.hpp"

using namespace stlw;

namespace {

SynthSpec small_spec() {
  SynthSpec s;
  s.patches = 8;
  s.features = 4;
  s.active_patches = 2;
  s.time_steps = 3;
  s.train_size = 48;
  s.test_size = 32;
  return s;
}

ModelConfig small_model() {
  ModelConfig c;
  c.arch = {1, 8, 16};
  c.heads = 2;
  c.patches = 8;
  c.input_features = 4;
  c.num_classes = 4;
  c.time_steps = 3;
  return c;
}

TrainConfig quick(int epochs, double lr = 5e-3) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 16;
  t.learning_rate = lr;
  t.seed = 3;
  return t;
}

bool same_weights(const Model& a, const Model& b) {
  const auto wa = a.synaptic_weights(), wb = b.synaptic_weights();
  for (std::size_t i = 0; i < wa.size(); ++i)
    if (!(wa[i].value() == wb[i].value()).all()) return false;
  const auto ia = a.neuron_layers(), ib = b.neuron_layers();
  for (std::size_t i = 0; i < ia.size(); ++i)
    if (ia[i].second->tau.item() != ib[i].second->tau.item() || ia[i].second->u_th.item() != ib[i].second->u_th.item())
      return false;
  return true;
}

}  // namespace

TEST_CASE("replace_with_slif is forward-transparent and only flips learnability") {
  const Model m = Model::init(small_model(), 1);
  const DataSplit d = synth_dataset(small_spec(), 2);
  const Model s = replace_with_slif(m);
  const Tensor<float> x = d.test.all();
  CHECK((model_forward(x, m).value() == model_forward(x, s).value()).all());
  for (const auto& [name, p] : s.neuron_layers()) {
    CHECK(p->learns_tau());
    CHECK(p->learns_threshold());
  }
  for (const auto& [name, p] : m.neuron_layers()) CHECK_FALSE(p->learns_tau());
  CHECK(s.intrinsic_params().size() == 2 * s.neuron_layers().size());
  CHECK(replace_with_lif(s).intrinsic_params().empty());
}

TEST_CASE("zero epochs or zero learning rate leave the model unchanged") {
  const Model m = Model::init(small_model(), 4);
  const DataSplit d = synth_dataset(small_spec(), 4);
  const TrainResult none = pretrain(m, d, quick(0));
  CHECK(same_weights(none.model, m));
  CHECK(none.log.empty());
  CHECK(none.best_accuracy == evaluate(m, d.test).accuracy);

  TrainConfig frozen = quick(1, 0.0);
  frozen.weight_decay = 0.0;
  const Model masked = apply_plan(m, l1p_plan(m, 0.0));
  const TrainResult r2 = finetune(replace_with_slif(masked), l1p_plan(m, 0.0), d, frozen);
  CHECK(same_weights(r2.last, m));
}

TEST_CASE("sLIF fine-tuning moves tau and threshold, LIF does not") {
  const Model m = Model::init(small_model(), 5);
  const DataSplit d = synth_dataset(small_spec(), 5);
  const PrunePlan plan = dsp_plan(m, 0.5);
  const Model pruned = apply_plan(m, plan);
  const TrainResult s = finetune(replace_with_slif(pruned), plan, d, quick(1));
  const TrainResult l = finetune(replace_with_lif(pruned), plan, d, quick(1));
  int moved = 0;
  for (const auto& [name, p] : s.last.neuron_layers())
    if (p->tau.item() != 2.0f || p->u_th.item() != 1.0f) ++moved;
  CHECK(moved > 0);
  for (const auto& [name, p] : l.last.neuron_layers()) {
    CHECK(p->tau.item() == 2.0f);
    CHECK(p->u_th.item() == 1.0f);
  }
}

TEST_CASE("masks stay zero and intrinsics stay clamped through fine-tuning") {
  const Model m = Model::init(small_model(), 6);
  const DataSplit d = synth_dataset(small_spec(), 6);
  const PrunePlan plan = l1p_plan(m, 0.8);
  Model pruned = replace_with_slif(apply_plan(m, plan));
  TrainConfig cfg = quick(3, 0.5);  // large steps push intrinsics to their bounds
  const TrainResult r = finetune(pruned, plan, d, cfg);
  for (const auto& b : r.last.blocks)
    for (int i = 0; i < 6; ++i) CHECK((b.weights[i].value() * (1.0f - b.masks[i].value())).abs().maxCoeff() == 0.0f);
  for (const auto& [name, p] : r.last.neuron_layers()) {
    CHECK(p->tau.item() >= static_cast<float>(kTauMin));
    CHECK(p->tau.item() <= static_cast<float>(kTauMax));
    CHECK(p->u_th.item() >= static_cast<float>(kThresholdMin));
    CHECK(p->u_th.item() <= static_cast<float>(kThresholdMax));
  }
  CHECK(count_params(r.last).st_blocks == count_params(apply_plan(m, plan)).st_blocks);
}

TEST_CASE("finetune refuses a model the plan was not applied to") {
  const Model m = Model::init(small_model(), 7);
  const DataSplit d = synth_dataset(small_spec(), 7);
  CHECK_THROWS_AS(finetune(m, l1p_plan(m, 0.5), d, quick(1)), PreconditionError);
  CHECK_THROWS_AS(finetune(m, dsp_plan(m, 0.5), d, quick(1)), PreconditionError);
  CHECK(plan_applied(apply_plan(m, dsp_plan(m, 0.5)), dsp_plan(m, 0.5)));
}

TEST_CASE("training is deterministic and the run log round-trips") {
  const Model m = Model::init(small_model(), 8);
  const DataSplit d = synth_dataset(small_spec(), 8);
  int calls = 0;
  const TrainResult a = pretrain(m, d, quick(3), [&](const EpochRecord&, const Model&) { ++calls; });
  const TrainResult b = pretrain(m, d, quick(3));
  CHECK(calls == 3);
  CHECK(a.log.to_jsonl() == b.log.to_jsonl());
  CHECK(same_weights(a.last, b.last));
  REQUIRE(a.log.size() == 3);
  CHECK(a.log.records()[0].stage == "pretrain");
  CHECK(a.log.records()[0].layers.size() == a.last.neuron_layers().size());
  CHECK(a.best_accuracy == a.log.records()[static_cast<std::size_t>(a.best_epoch - 1)].test_accuracy);

  const RunLog back = RunLog::from_jsonl(a.log.to_jsonl());
  CHECK(back.to_jsonl() == a.log.to_jsonl());

  TrainConfig other = quick(3);
  other.seed = 4;
  CHECK(pretrain(m, d, other).log.to_jsonl() != a.log.to_jsonl());
}

TEST_CASE("pretraining reduces the loss and beats chance") {
  ModelConfig c = small_model();
  c.init_gain = 5.0;
  const Model m = Model::init(c, 9);
  SynthSpec s = small_spec();
  s.train_size = 128;
  const DataSplit d = synth_dataset(s, 9);
  const double before = evaluate(m, d.train).accuracy;
  const TrainResult r = pretrain(m, d, quick(15));
  CHECK(r.log.records().back().loss < r.log.records().front().loss);
  CHECK(r.log.records().back().train_accuracy > before);
  CHECK(r.log.records().back().train_accuracy >= 0.4);  // chance is 0.25
}

TEST_CASE("run log rules") {
  RunLog log;
  for (int e : {1, 2, 3}) {
    EpochRecord r;
    r.epoch = e;
    r.test_accuracy = e == 1 ? 0.5 : (e == 2 ? 0.96 : 1.0);
    log.append(r);
  }
  CHECK(log.epochs_to_fraction(0.95) == 2);
  CHECK(log.epochs_to_fraction(0.5) == 1);
  CHECK(RunLog{}.epochs_to_fraction() == 0);
  EpochRecord dup;
  dup.epoch = 3;
  CHECK_THROWS_AS(log.append(dup), PreconditionError);
}

TEST_CASE("evaluate reports accuracy, loss, and rates") {
  const Model m = Model::init(small_model(), 10);
  const DataSplit d = synth_dataset(small_spec(), 10);
  const EvalResult e = evaluate(m, d.test, 7);
  const EvalResult f = evaluate(m, d.test, 64);
  CHECK(e.accuracy == f.accuracy);
  CHECK(e.loss == doctest::Approx(f.loss).epsilon(1e-5));
  CHECK(e.rates.size() == 1 + 7);
  CHECK(e.st_rate >= 0.0);
  CHECK(e.st_rate <= 1.0);
  CHECK_THROWS_AS(evaluate(m, d.test, 0), ConfigError);
}

TEST_CASE("sweep rows cover every kind and sparsity, p = 0 reproduces the baseline") {
  const Model m = Model::init(small_model(), 11);
  const DataSplit d = synth_dataset(small_spec(), 11);
  const SweepReport r = sparsity_sweep(m, d, quick(1), {0.0, 0.5, 0.8}, {PruneKind::l1p, PruneKind::dsp});
  REQUIRE(r.rows.size() == 6);
  for (const auto& row : r.rows)
    if (row.p == 0.0) {
      CHECK(row.acc_pruned == r.baseline_accuracy);
      CHECK(row.acc_lif == r.baseline_accuracy);
      CHECK(row.acc_slif == r.baseline_accuracy);
    }
  const std::string csv = r.to_csv();
  CHECK(csv.rfind("kind,p,seed,acc_pruned,acc_lif,acc_slif,epochs_to_95pct\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);

  SweepReport merged;
  merged.merge(r);
  SweepReport other = r;
  for (auto& row : other.rows) row.seed = 0;
  merged.merge(other);
  CHECK(merged.rows.size() == 12);
  CHECK(merged.rows[0].seed == 0);
  CHECK(merged.rows[0].kind == PruneKind::l1p);
}

TEST_CASE("training config validation") {
  TrainConfig t;
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = {};
  t.learning_rate = -1;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  const Model m = Model::init(small_model(), 1);
  TrainConfig wrong_t = quick(1);
  wrong_t.time_steps = 5;
  CHECK_THROWS_AS(pretrain(m, synth_dataset(small_spec(), 1), wrong_t), ConfigError);
  CHECK_THROWS_AS(parse_neuron_kind("alif"), ConfigError);
}
