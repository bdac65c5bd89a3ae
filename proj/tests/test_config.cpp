#include <doctest.h>

#include "stlw/config.hpp"

using namespace stlw;
using nlohmann::json;

TEST_CASE("defaults are valid and round-trip through JSON") {
  const ExperimentConfig c;
  c.validate();
  const ExperimentConfig back = parse_experiment_config(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.architecture == "Spikformer-2-32-128");
  CHECK(back.time_steps == 4);
}

TEST_CASE("partial configs override only the given fields") {
  const ExperimentConfig c = parse_experiment_config(json::parse(R"({
    "seed": 9, "T": 3, "prune": {"kind": "dsp", "p": 0.5},
    "train": {"epochs": 2}, "sweep": {"kinds": ["dsp"], "seeds": [1, 2]}
  })"));
  CHECK(c.seed == 9);
  CHECK(c.time_steps == 3);
  CHECK(c.dataset.synth.time_steps == 3);
  CHECK(c.prune_kind == PruneKind::dsp);
  CHECK(c.train.epochs == 2);
  CHECK(c.train.batch_size == ExperimentConfig().train.batch_size);
  CHECK(c.sweep.kinds == std::vector<PruneKind>{PruneKind::dsp});
  CHECK(c.sweep.seeds.size() == 2);
}

TEST_CASE("unknown keys, wrong types, and bad values are rejected") {
  CHECK_THROWS_WITH_AS(parse_experiment_config(json::parse(R"({"lr": 1})")), doctest::Contains("unknown key 'lr'"),
                       ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(json::parse(R"({"train": {"epoch": 1}})")), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(json::parse(R"({"heads": "two"})")), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(json::parse(R"({"prune": {"p": 1.5}})")), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(json::parse(R"({"reset": "none"})")), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(json::parse(R"({"analysis": {"discard_ratio": 1.0}})")), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(json::parse(R"({"sweep": {"kinds": ["svd"]}})")), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(json::parse("[1]")), ConfigError);
  CHECK_THROWS_AS(load_experiment_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("derived seeds are stable and stream-separated") {
  CHECK(derive_seed(1, "data") == derive_seed(1, "data"));
  CHECK(derive_seed(1, "data") != derive_seed(1, "init"));
  CHECK(derive_seed(1, "data") != derive_seed(2, "data"));
}

TEST_CASE("load_data and model_config agree on geometry") {
  ExperimentConfig c;
  c.dataset.synth.train_size = 16;
  c.dataset.synth.test_size = 8;
  const DataSplit d = load_data(c);
  CHECK(d.train.size() == 16);
  const ModelConfig m = model_config(c, d);
  CHECK(m.patches == 16);
  CHECK(m.input_features == 16);
  CHECK(m.num_classes == 4);
  CHECK(m.arch.width == 32);
  const DataSplit again = load_data(c);
  CHECK((again.train.samples == d.train.samples).all());
}
