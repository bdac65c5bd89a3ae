#include <doctest.h>

#include "oracles.hpp"
#include "stlw/model.hpp"

using namespace stlw;

namespace {

ModelConfig small_config(int depth = 2, int width = 8, int mlp = 16, int heads = 2) {
  ModelConfig c;
  c.arch = {depth, width, mlp};
  c.heads = heads;
  c.patches = 5;
  c.input_features = 6;
  c.num_classes = 3;
  c.time_steps = 3;
  return c;
}

Tensor<double> random_input(const ModelConfig& c, Index batch, std::uint64_t seed) {
  return oracle::random_spikes({c.time_steps, batch, c.patches, c.input_features}, 0.4, seed).cast<double>();
}

}  // namespace

TEST_CASE("architecture names round-trip and reject malformed strings") {
  const Architecture a = Architecture::parse("Spikformer-8-512-2048");
  CHECK(a.depth == 8);
  CHECK(a.width == 512);
  CHECK(a.mlp_width == 2048);
  CHECK(a.name() == "Spikformer-8-512-2048");
  CHECK_THROWS_AS(Architecture::parse("Spikformer-8-512"), ConfigError);
  CHECK_THROWS_AS(Architecture::parse("Spikformer-8-x-2048"), ConfigError);
  CHECK_THROWS_AS(Architecture::parse("Vit-8-512-2048"), ConfigError);
  CHECK_THROWS_AS(Architecture::parse("Spikformer-0-512-2048"), ConfigError);
}

TEST_CASE("encoder-block parameter counts of the two reference architectures") {
  // 4 d^2 + 2 d d_m per block.
  for (auto [name, expected] : {std::pair<const char*, std::int64_t>{"Spikformer-8-512-2048", 25'165'824},
                                {"Spikformer-4-384-1536", 7'077'888}}) {
    ModelConfig c;
    c.arch = Architecture::parse(name);
    c.heads = 8;
    c.patches = 1;
    c.input_features = 1;
    c.num_classes = 2;
    const Model m = Model::init(c, 1);
    const ParamCount pc = count_params(m);
    const std::int64_t d = c.arch.width, dm = c.arch.mlp_width;
    CHECK(pc.st_blocks == c.arch.depth * (4 * d * d + 2 * d * dm));
    CHECK(pc.st_blocks == expected);
    CHECK(pc.total == pc.st_blocks + d + d + d * 2);
  }
}

TEST_CASE("model forward equals the independent scalar reference") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (ResetMode reset : {ResetMode::soft, ResetMode::hard}) {
      ModelConfig c = small_config();
      c.reset = reset;
      c.tau = 1.5 + 0.5 * static_cast<double>(seed);
      const auto m = STModel<double>::init(c, seed);
      const auto input = random_input(c, 4, seed + 100);
      const auto logits = model_forward(input, m);
      const auto ref = oracle::forward(m, input);
      REQUIRE(logits.shape() == Shape({4, 3}));
      for (Index b = 0; b < 4; ++b)
        for (Index k = 0; k < 3; ++k)
          CHECK(logits.value()[b * 3 + k] == doctest::Approx(ref[b][k]).epsilon(1e-9));
    }
  }
}

TEST_CASE("blocks spike at the default initialization gain") {
  ModelConfig c = small_config(2, 32, 128, 2);
  c.patches = 16;
  c.input_features = 16;
  c.time_steps = 4;
  const Model m = Model::init(c, 5);
  ForwardProbe<float> probe;
  model_forward(oracle::random_spikes({4, 8, 16, 16}, 0.3, 9), m, &probe);
  double spikes = 0;
  for (const auto& l : probe.layers)
    if (l.name.rfind("blocks.", 0) == 0) spikes += l.spike_sum;
  CHECK(spikes > 0);
  CHECK(probe.layer("blocks.1.attn").count == 4 * 8 * 16 * 32);
  CHECK_THROWS_AS(probe.layer("blocks.9.q"), LookupError);
}

TEST_CASE("probe records every spiking layer and synapse in forward order") {
  const ModelConfig c = small_config(1);
  const Model m = Model::init(c, 2);
  ForwardProbe<float> probe;
  probe.record_attention = true;
  model_forward(oracle::random_spikes({3, 2, 5, 6}, 0.5, 3), m, &probe);
  std::vector<std::string> names;
  for (const auto& l : probe.layers) names.push_back(l.name);
  CHECK(names == std::vector<std::string>{"embed", "blocks.0.q", "blocks.0.k", "blocks.0.v", "blocks.0.attn",
                                          "blocks.0.m0", "blocks.0.m1", "blocks.0.m2"});
  REQUIRE(probe.attention.size() == 1);
  CHECK(probe.attention[0].size() == 2 * 2 * 5 * 5);
  CHECK(probe.synapses.back().name == "head");
  CHECK_FALSE(probe.synapses.back().spiking);
}

TEST_CASE("validation catches shape errors") {
  ModelConfig c = small_config();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  Model m = Model::init(small_config(), 1);
  m.blocks[0].weight(BlockWeight::M0) = Tensor<float>::zeros({7, 8});
  CHECK_THROWS_AS(m.validate(), ConfigError);
  const Model ok = Model::init(small_config(), 1);
  CHECK_THROWS_AS(model_forward(oracle::random_spikes({3, 2, 5, 7}, 0.5, 1), ok), ConfigError);
}

TEST_CASE("masked elements are excluded from parameter counts and re-zeroed") {
  Model m = Model::init(small_config(1), 1);
  auto& b = m.blocks[0];
  ArrayX<float> mask = ArrayX<float>::Ones(64);
  mask.head(10).setZero();
  b.masks[0] = Tensor<float>(Shape{8, 8}, mask);
  const ParamCount before = count_params(Model::init(small_config(1), 1));
  CHECK(count_params(m).st_blocks == before.st_blocks - 10);
  m.enforce_masks();
  CHECK(b.weights[0].value().head(10).abs().sum() == 0.0f);
}

TEST_CASE("clone is deep and cast preserves values") {
  const Model m = Model::init(small_config(), 4);
  Model c = m.clone();
  c.blocks[0].weights[0].mutable_value()[0] += 1.0f;
  CHECK(c.blocks[0].weights[0].value()[0] != m.blocks[0].weights[0].value()[0]);
  const auto d = m.cast<double>();
  CHECK(d.embed.value().cast<float>().isApprox(m.embed.value(), 0.0f));
}
