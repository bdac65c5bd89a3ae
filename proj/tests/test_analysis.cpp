#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "stlw/analysis.hpp"

using namespace stlw;
namespace fs = std::filesystem;

namespace {

AttentionMap random_map(Index heads, Index patches, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 4.0);
  AttentionMap a;
  a.heads = heads;
  a.patches = patches;
  a.values.resize(heads * patches * patches);
  for (Index i = 0; i < a.values.size(); ++i) a.values[i] = u(rng);
  return a;
}

AttentionMap constant_map(Index heads, Index patches, double v) {
  return {heads, patches, ArrayX<double>::Constant(heads * patches * patches, v)};
}

ModelConfig small_model() {
  ModelConfig c;
  c.arch = {2, 8, 16};
  c.heads = 2;
  c.patches = 8;
  c.input_features = 4;
  c.num_classes = 4;
  c.time_steps = 3;
  return c;
}

SynthSpec small_spec() {
  SynthSpec s;
  s.patches = 8;
  s.features = 4;
  s.active_patches = 2;
  s.time_steps = 3;
  s.train_size = 16;
  s.test_size = 24;
  return s;
}

}  // namespace

TEST_CASE("rollout rows are stochastic on random stacks") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<AttentionMap> stack;
    for (int l = 0; l < 1 + trial % 4; ++l) stack.push_back(random_map(1 + trial % 3, 6, rng));
    const Eigen::MatrixXd R = rollout_matrix(stack);
    for (Index i = 0; i < 6; ++i) CHECK(std::abs(R.row(i).sum() - 1.0) <= 1e-5);
    CHECK(R.minCoeff() >= 0.0);
  }
}

TEST_CASE("rollout matches a hand-fused two-layer product") {
  std::mt19937_64 rng(2);
  const std::vector<AttentionMap> stack{random_map(2, 3, rng), random_map(2, 3, rng)};
  std::vector<Eigen::Matrix3d> fused;
  for (const auto& a : stack) {
    Eigen::Matrix3d f = Eigen::Matrix3d::Identity();
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 3; ++j) f(i, j) += (std::max(0.0, a.at(0, i, j)) + std::max(0.0, a.at(1, i, j))) / 2;
    for (Index i = 0; i < 3; ++i) f.row(i) /= f.row(i).sum();
    fused.push_back(f);
  }
  const Eigen::Matrix3d expected = fused[1] * fused[0];
  CHECK((rollout_matrix(stack) - expected).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("identity attention gives a uniform mask") {
  AttentionMap eye{2, 5, ArrayX<double>::Zero(50)};
  for (Index h = 0; h < 2; ++h)
    for (Index i = 0; i < 5; ++i) eye.values[(h * 5 + i) * 5 + i] = 1.0;
  const RolloutMask m = attention_rollout({eye, eye, eye}, 0.0);
  for (Index i = 0; i < 5; ++i) CHECK(m.values[i] == doctest::Approx(0.2).epsilon(1e-12));
  const RolloutMask z = attention_rollout({constant_map(1, 5, 0.0)}, 0.0);
  for (Index i = 0; i < 5; ++i) CHECK(z.values[i] == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("discard zeroes exactly floor(ratio * P) entries") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (Index p : {16, 49, 64, 196}) {
    Eigen::VectorXd v(p);
    for (Index i = 0; i < p; ++i) v[i] = u(rng);
    const Eigen::VectorXd out = discard_smallest(v, 0.85);
    const Index expected = static_cast<Index>(std::floor(0.85 * static_cast<double>(p)));
    CHECK((out.array() == 0.0).count() == expected);
    const double kept_min = (out.array() > 0).select(out.array(), 2.0).minCoeff();
    CHECK(((out.array() == 0.0) && (v.array() > kept_min)).count() == 0);
  }
  Eigen::VectorXd ties = Eigen::VectorXd::Constant(4, 1.0);
  const Eigen::VectorXd t = discard_smallest(ties, 0.5);
  CHECK(t[0] == 0.0);
  CHECK(t[1] == 0.0);
  CHECK(t[2] == 1.0);
  CHECK_THROWS_AS(discard_smallest(ties, 1.0), ParameterError);
  CHECK_THROWS_AS(rollout_matrix({}), DimensionError);
}

TEST_CASE("collected attention drives a rollout of the right size") {
  const Model m = Model::init(small_model(), 1);
  const DataSplit d = synth_dataset(small_spec(), 1);
  const auto maps = collect_attention(m, d.test, 3);
  REQUIRE(maps.size() == 2);
  CHECK(maps[0].heads == 2);
  CHECK(maps[0].patches == 8);
  const RolloutMask mask = attention_rollout(maps);
  CHECK(mask.values.size() == 8);
  CHECK((mask.values.array() == 0.0).count() >= 6);
  CHECK_THROWS_AS(collect_attention(m, d.test, 24), LookupError);
}

TEST_CASE("mask upsampling and image output") {
  Eigen::VectorXd mask(4);
  mask << 0, 1, 2, 3;
  const Eigen::MatrixXd near = upsample_mask(mask, 2, 2, 2, 4, 4);
  CHECK(near(0, 0) == 0.0);
  CHECK(near(1, 3) == 1.0);
  CHECK(near(3, 0) == 2.0);
  const Eigen::MatrixXd same = upsample_mask(Eigen::VectorXd::Constant(4, 0.7), 2, 2, 3, 5, 9);
  CHECK((same.array() - 0.7).abs().maxCoeff() <= 1e-12);
  const Eigen::MatrixXd up = upsample_mask(mask, 2, 2, 1, 4, 4);
  CHECK(up.minCoeff() >= 0.0);
  CHECK(up.maxCoeff() <= 3.0);

  const fs::path dir = fs::temp_directory_path() / "stlw_test_analysis";
  fs::create_directories(dir);
  write_pgm(near, dir / "m.pgm");
  std::ifstream in(dir / "m.pgm", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  CHECK(bytes.rfind("P5\n4 4\n255\n", 0) == 0);
  CHECK(bytes.size() == 11 + 16);
  CHECK(static_cast<unsigned char>(bytes.back()) == 255);
  write_mask_csv(mask, 2, dir / "m.csv");
  std::ifstream csv(dir / "m.csv");
  const std::string text((std::istreambuf_iterator<char>(csv)), {});
  CHECK(text == "0,1\n2,3\n");
}

TEST_CASE("histogram density integrates to one and tracks moments") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(1.5, 2.0);
  ArrayX<double> v(20000);
  for (Index i = 0; i < v.size(); ++i) v[i] = n(rng);
  const Histogram h = make_histogram(v, 50);
  CHECK(h.integral() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(h.mean == doctest::Approx(1.5).epsilon(0.05));
  CHECK(h.variance == doctest::Approx(4.0).epsilon(0.05));
  CHECK(h.edges.size() == 51);

  const Histogram point = make_histogram(ArrayX<double>::Constant(10, 3.0), 4);
  CHECK(point.integral() == doctest::Approx(1.0));
  CHECK(point.variance == 0.0);
  CHECK(point.edges.front() == 2.5);
  CHECK(point.edges.back() == 3.5);
  CHECK_THROWS_AS(make_histogram(ArrayX<double>(), 4), ParameterError);
  CHECK_THROWS_AS(make_histogram(v, 0), ParameterError);
}

TEST_CASE("current histograms pool attention layers and reject unknown names") {
  const Model m = Model::init(small_model(), 2);
  const DataSplit d = synth_dataset(small_spec(), 2);
  const Histogram all = current_histogram(m, d.test, "attn", 20);
  const Histogram one = current_histogram(m, d.test, "blocks.0.attn", 20);
  CHECK(all.samples == 2 * one.samples);
  CHECK(one.samples == 24 * 3 * 8 * 8);
  CHECK(all.integral() == doctest::Approx(1.0));
  CHECK_THROWS_AS(current_histogram(m, d.test, "blocks.5.attn"), LookupError);
}

TEST_CASE("energy accounting is linear in activity and constants") {
  const std::vector<SynapseActivity> act{{"a", 0.25, 100, 10, true}, {"b", 1.0, 8, 3, false}};
  const EnergyReport r = energy_from_activity(act, {4.6, 0.9});
  CHECK(r.ac_ops == doctest::Approx(250.0));
  CHECK(r.mac_ops == doctest::Approx(24.0));
  CHECK(r.total_pj == doctest::Approx(0.9 * 250 + 4.6 * 24));
  const EnergyReport r2 = energy_from_activity(act, {9.2, 1.8});
  CHECK(r2.total_pj == doctest::Approx(2 * r.total_pj));
  auto doubled = act;
  doubled[0].rate *= 2;
  CHECK(energy_from_activity(doubled, {4.6, 0.9}).ac_ops == doctest::Approx(500.0));
  CHECK_THROWS_AS(energy_from_activity(act, {0.0, 0.9}), ConfigError);
}

TEST_CASE("zero input: no embedding synaptic events, head still costs MACs") {
  const Model m = Model::init(small_model(), 3);
  SynthSpec s = small_spec();
  const DataSplit d = synth_dataset(s, 3);
  Dataset silent = d.test;
  silent.samples.setZero();
  const auto act = synapse_activity(m, silent);
  REQUIRE_FALSE(act.empty());
  CHECK(act.front().name == "embed");
  CHECK(act.front().rate == 0.0);
  CHECK(act.front().inputs == 3 * 8 * 4);
  CHECK(act.back().name == "head");
  CHECK_FALSE(act.back().spiking);
  const EnergyReport e = estimate_energy(m, silent, {}, &m);
  CHECK(e.ratio == doctest::Approx(1.0));
  CHECK(e.mac_ops == doctest::Approx(8.0 * 4));
}

TEST_CASE("compression ratios reproduce the reported table arithmetic") {
  // Whole model / encoder blocks, in millions.
  CHECK(compression_report(ParamCount{29'240'000, 25'170'000}, ParamCount{6'600'000, 2'520'000}).formatted() ==
        "77.43/89.99");
  CHECK(compression_report(ParamCount{9'320'000, 7'080'000}, ParamCount{2'960'000, 710'000}).formatted() ==
        "68.24/89.97");
  CHECK(compression_ratio(100, 100) == 0.0);
  CHECK_THROWS_AS(compression_ratio(0, 1), ParameterError);
}

TEST_CASE("l1p at p = 0.9 on the 8-512-2048 encoder keeps 2.52M weights") {
  const Index sq = 512 * 512, rect = 512 * 2048;
  const Index kept = 8 * (4 * (sq - pruned_count(sq, 0.9)) + 2 * (rect - pruned_count(rect, 0.9)));
  CHECK(kept == 2'516'560);
  CHECK(std::round(static_cast<double>(kept) / 1e4) / 100 == 2.52);
}

TEST_CASE("dsp at p = 0.5 halves every encoder matrix") {
  ModelConfig c = small_model();
  c.arch = {1, 64, 256};
  c.heads = 8;
  const Model m = Model::init(c, 1);
  const Model s = apply_plan(m, dsp_plan(m, 0.5));
  CHECK(count_params(s).st_blocks == 4 * 64 * 32 + 2 * 64 * 128);
  const CompressionReport r = compression_report(m, s);
  CHECK(r.cr_st == doctest::Approx(50.0));
}

TEST_CASE("firing-rate report lists every layer plus the encoder aggregate") {
  const Model m = Model::init(small_model(), 4);
  const DataSplit d = synth_dataset(small_spec(), 4);
  const FiringRates f = firing_rates(m, d.test);
  CHECK(f.layers.size() == 1 + 2 * 7);
  const std::string csv = f.to_csv();
  CHECK(csv.rfind("layer,rate\nembed,", 0) == 0);
  CHECK(csv.find("st_modules,") != std::string::npos);
  // Neuron-weighted mean: every block layer is 8 wide except m1 (16).
  double spikes = 0, count = 0;
  for (const auto& l : f.layers)
    if (l.name != "embed") {
      const double width = l.name.ends_with(".m1") ? 16 : 8;
      spikes += l.rate * width;
      count += width;
    }
  CHECK(f.st_rate == doctest::Approx(spikes / count));
}
