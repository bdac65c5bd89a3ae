#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "stlw/checkpoint.hpp"
#include "stlw/compensation.hpp"

using namespace stlw;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.arch = {2, 8, 16};
  c.heads = 2;
  c.patches = 6;
  c.input_features = 4;
  c.num_classes = 3;
  c.time_steps = 3;
  return c;
}

CheckpointMeta meta_for(const Model& m, const std::string& stage) {
  CheckpointMeta meta;
  meta.stage = stage;
  meta.epoch = 7;
  meta.metrics = {{"test_accuracy", 0.5}};
  meta.baseline = count_params(m);
  return meta;
}

void expect_same_logits(const Model& a, const Model& b) {
  const auto x = oracle::random_spikes({3, 5, 6, 4}, 0.4, 17);
  CHECK((model_forward(x, a).value() == model_forward(x, b).value()).all());
}

}  // namespace

TEST_CASE("save, load, save is byte-identical for every stage kind") {
  const Model m = Model::init(small_model(), 1);
  const Model slif = replace_with_slif(m);
  const PrunePlan l1 = l1p_plan(m, 0.7);
  const PrunePlan dsp = dsp_plan(m, 0.5);
  CheckpointMeta pm = meta_for(m, "prune");
  pm.plan = l1;
  CheckpointMeta dm = meta_for(m, "prune");
  dm.plan = dsp;
  for (const auto& [model, meta] : std::vector<std::pair<Model, CheckpointMeta>>{
           {m, meta_for(m, "train")}, {slif, meta_for(m, "compensate-slif")}, {apply_plan(m, l1), pm},
           {apply_plan(m, dsp), dm}}) {
    const std::string bytes = serialize_checkpoint(model, meta);
    const Checkpoint back = parse_checkpoint(bytes);
    CHECK(serialize_checkpoint(back.model, back.meta) == bytes);
    expect_same_logits(model, back.model);
    CHECK(back.meta.stage == meta.stage);
    CHECK(back.meta.epoch == 7);
    CHECK(back.meta.baseline->st_blocks == meta.baseline->st_blocks);
    CHECK(count_params(back.model).total == count_params(model).total);
    CHECK(back.model.intrinsic_params().size() == model.intrinsic_params().size());
  }
}

TEST_CASE("plans survive the round trip") {
  const Model m = Model::init(small_model(), 2);
  CheckpointMeta meta = meta_for(m, "prune");
  meta.plan = dsp_plan(m, 0.5);
  const Model pruned = apply_plan(m, *meta.plan);
  const Checkpoint back = parse_checkpoint(serialize_checkpoint(pruned, meta));
  REQUIRE(back.meta.plan);
  CHECK(back.meta.plan->dims == meta.plan->dims);
  CHECK(back.meta.plan->kind == PruneKind::dsp);
  CHECK(plan_applied(back.model, *back.meta.plan));

  meta.plan = l1p_plan(m, 0.5);
  const Checkpoint l1 = parse_checkpoint(serialize_checkpoint(apply_plan(m, *meta.plan), meta));
  REQUIRE(l1.meta.plan);
  CHECK((l1.meta.plan->masks[1][4].value() == meta.plan->masks[1][4].value()).all());
  CHECK(plan_applied(l1.model, *l1.meta.plan));
}

TEST_CASE("learned intrinsics and hard reset are restored") {
  ModelConfig c = small_model();
  c.reset = ResetMode::hard;
  Model m = replace_with_slif(Model::init(c, 3));
  m.blocks[1].neuron(BlockNeuron::attn).tau.mutable_value()[0] = 3.25f;
  m.blocks[0].neuron(BlockNeuron::m1).u_th.mutable_value()[0] = 0.625f;
  const Checkpoint back = parse_checkpoint(serialize_checkpoint(m, meta_for(m, "x")));
  CHECK(back.model.blocks[1].neuron(BlockNeuron::attn).tau.item() == 3.25f);
  CHECK(back.model.blocks[0].neuron(BlockNeuron::m1).u_th.item() == 0.625f);
  CHECK(back.model.blocks[0].neuron(BlockNeuron::q).reset == ResetMode::hard);
  CHECK(back.model.blocks[0].neuron(BlockNeuron::q).learns_tau());
}

TEST_CASE("file save is atomic and loads back") {
  const fs::path dir = fs::temp_directory_path() / "stlw_test_ckpt" / "nested";
  fs::remove_all(dir.parent_path());
  const Model m = Model::init(small_model(), 4);
  save_checkpoint(m, meta_for(m, "train"), dir / "a.stlw");
  CHECK(fs::exists(dir / "a.stlw"));
  CHECK_FALSE(fs::exists(dir / "a.stlw.tmp"));
  expect_same_logits(m, load_checkpoint(dir / "a.stlw").model);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.stlw"), LoadError);
}

TEST_CASE("corrupt checkpoints raise LoadError naming the field") {
  const Model m = Model::init(small_model(), 5);
  const std::string good = serialize_checkpoint(m, meta_for(m, "train"));

  std::string bad = good;
  bad[0] = 'X';
  CHECK_THROWS_WITH_AS(parse_checkpoint(bad), doctest::Contains("magic"), LoadError);

  bad = good;
  bad[4] = 9;
  CHECK_THROWS_WITH_AS(parse_checkpoint(bad), doctest::Contains("version"), LoadError);

  CHECK_THROWS_WITH_AS(parse_checkpoint(good.substr(0, 10)), doctest::Contains("metadata length"), LoadError);
  CHECK_THROWS_AS(parse_checkpoint(good.substr(0, good.size() - 3)), LoadError);
  CHECK_THROWS_WITH_AS(parse_checkpoint(good + "x"), doctest::Contains("trailing"), LoadError);

  for (std::size_t cut : {std::size_t{2}, std::size_t{30}, good.size() / 2, good.size() - 1})
    CHECK_THROWS_AS(parse_checkpoint(good.substr(0, cut)), LoadError);
}
