// Command-line front end: train, prune, compensate, eval, sweep, rollout,
// analyze, info. Exit codes: 0 success, 1 runtime failure, 2 usage/config.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stlw/analysis.hpp"
#include "stlw/checkpoint.hpp"
#include "stlw/config.hpp"
#include "stlw/workbench.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stlw;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON)");
  cmd->add_option("--seed", c.seed, "override the config seed");
  cmd->add_option("--out", c.out, "output directory");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_experiment_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

fs::path prepare_out(const ExperimentConfig& cfg) {
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void snapshot_config(const ExperimentConfig& cfg, const fs::path& dir) {
  write_text(dir / "config.json", cfg.to_json().dump(2) + "\n");
}

EpochCallback progress(const std::string& stage) {
  return [stage](const EpochRecord& r, const Model&) {
    std::fprintf(stderr, "[%s] epoch %d lr %.2e loss %.4f train %.4f test %.4f st_rate %.4f\n", stage.c_str(),
                 r.epoch, r.learning_rate, r.loss, r.train_accuracy, r.test_accuracy, r.st_rate);
  };
}

fs::path save_stage(const StageOutput& s, const fs::path& dir) {
  const fs::path path = dir / checkpoint_name(s.meta);
  save_checkpoint(s.model, s.meta, path);
  if (!s.log.empty()) s.log.write_jsonl(dir / (s.meta.stage + ".jsonl"));
  std::cout << "checkpoint: " << path.string() << "\n";
  return path;
}

Checkpoint need_checkpoint(const std::string& path) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  return load_checkpoint(path);
}

// Side length of the patch grid and of one patch, for mask export.
std::pair<Index, Index> grid_geometry(const ExperimentConfig& cfg, const Model& m) {
  if (cfg.dataset.kind != DatasetKind::synthetic) return {cfg.dataset.cols / cfg.dataset.patch, cfg.dataset.patch};
  const auto side = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(m.config.patches))));
  const auto patch = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(m.config.input_features))));
  if (side * side == m.config.patches && patch * patch == m.config.input_features) return {side, patch};
  return {m.config.patches, 1};
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Spiking-transformer pruning and compensation workbench"};
  app.require_subcommand(1);

  Common c;
  std::string checkpoint, reference, kind = "l1p", neuron = "slif", layer;
  double p = 0.5, discard = 0.85;
  bool random = false;
  std::optional<int> epochs;
  std::vector<double> ps;
  std::vector<std::string> kinds;
  Index sample = 0;

  auto* train = app.add_subcommand("train", "pretrain a fresh model with LIF neurons");
  add_common(train, c);
  train->add_option("--epochs", epochs, "override training epochs");

  auto* prune = app.add_subcommand("prune", "apply L1P or DSP pruning to a checkpoint");
  add_common(prune, c);
  prune->add_option("--checkpoint", checkpoint)->required();
  prune->add_option("--kind", kind)->check(CLI::IsMember({"l1p", "dsp"}));
  prune->add_option("--p", p, "pruning sparsity");
  prune->add_flag("--random", random, "random selection with the same geometry");

  auto* comp = app.add_subcommand("compensate", "replace neurons and fine-tune a pruned checkpoint");
  add_common(comp, c);
  comp->add_option("--checkpoint", checkpoint)->required();
  comp->add_option("--neuron", neuron)->check(CLI::IsMember({"lif", "slif"}));
  comp->add_option("--epochs", epochs, "override fine-tuning epochs");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, c);
  eval->add_option("--checkpoint", checkpoint)->required();

  auto* sweep = app.add_subcommand("sweep", "prune/compensate over sparsities and kinds");
  add_common(sweep, c);
  sweep->add_option("--checkpoint", checkpoint, "baseline (trained per seed when omitted)");
  sweep->add_option("--ps", ps)->delimiter(',');
  sweep->add_option("--kinds", kinds)->delimiter(',')->check(CLI::IsMember({"l1p", "dsp"}));
  sweep->add_option("--epochs", epochs, "override fine-tuning epochs");

  auto* roll = app.add_subcommand("rollout", "attention rollout mask for one test sample");
  add_common(roll, c);
  roll->add_option("--checkpoint", checkpoint)->required();
  roll->add_option("--discard-ratio", discard);
  roll->add_option("--sample", sample);

  auto* analyze = app.add_subcommand("analyze", "firing rates, current histogram, energy, compression");
  add_common(analyze, c);
  analyze->add_option("--checkpoint", checkpoint)->required();
  analyze->add_option("--reference", reference, "reference checkpoint for the energy ratio");
  analyze->add_option("--layer", layer, "histogram layer (default from config)");

  auto* info = app.add_subcommand("info", "architecture, parameter counts, compression");
  info->add_option("--checkpoint", checkpoint)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (*info) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const ParamCount pc = count_params(ck.model);
    json j = {{"architecture", ck.model.config.arch.name()},
              {"attn_dims", json::array()},
              {"mlp_dims", json::array()},
              {"stage", ck.meta.stage},
              {"epoch", ck.meta.epoch},
              {"params_total", pc.total},
              {"params_st", pc.st_blocks},
              {"metrics", ck.meta.metrics}};
    for (const auto& b : ck.model.blocks) {
      j["attn_dims"].push_back(b.attn_dim());
      j["mlp_dims"].push_back(b.hidden_dim());
    }
    if (ck.meta.baseline) {
      const auto cr = compression_report(*ck.meta.baseline, pc);
      j["compression"] = cr.to_json();
    }
    if (ck.meta.plan) j["plan"] = {{"kind", to_string(ck.meta.plan->kind)}, {"p", ck.meta.plan->sparsity},
                                   {"random", ck.meta.plan->random}};
    std::cout << j.dump(2) << "\n";
    return 0;
  }

  ExperimentConfig cfg = resolve(c);
  if (epochs) {
    if (*train) cfg.train.epochs = *epochs;
    else cfg.finetune.epochs = *epochs;
    cfg.validate();
  }
  const fs::path dir = prepare_out(cfg);
  snapshot_config(cfg, dir);

  if (*train) {
    const DataSplit data = load_data(cfg);
    try {
      const StageOutput s = run_train(cfg, data, progress("train"));
      save_stage(s, dir);
      std::cout << s.meta.metrics.dump() << "\n";
    } catch (const TrainingDiverged& e) {
      CheckpointMeta meta;
      meta.stage = "diverged";
      meta.epoch = e.epoch();
      save_checkpoint(e.last_good(), meta, dir / checkpoint_name(meta));
      throw;
    }
    return 0;
  }

  if (*prune) {
    const Checkpoint in = need_checkpoint(checkpoint);
    const DataSplit data = load_data(cfg);
    const StageOutput s = run_prune(in, parse_prune_kind(kind), p, random, derive_seed(cfg.seed, "prune"), data);
    save_stage(s, dir);
    write_text(dir / "compression.json", s.meta.metrics["compression"].dump(2) + "\n");
    std::cout << s.meta.metrics.dump() << "\n";
    return 0;
  }

  if (*comp) {
    const Checkpoint in = need_checkpoint(checkpoint);
    const DataSplit data = load_data(cfg);
    try {
      const StageOutput s = run_compensate(in, parse_neuron_kind(neuron), cfg, data, progress("compensate"));
      save_stage(s, dir);
      std::cout << s.meta.metrics.dump() << "\n";
    } catch (const TrainingDiverged& e) {
      CheckpointMeta meta = in.meta;
      meta.stage = "diverged";
      meta.epoch = e.epoch();
      save_checkpoint(e.last_good(), meta, dir / checkpoint_name(meta));
      throw;
    }
    return 0;
  }

  if (*eval) {
    const Checkpoint in = need_checkpoint(checkpoint);
    const json metrics = run_eval(in.model, load_data(cfg));
    write_text(dir / "eval.json", metrics.dump(2) + "\n");
    std::cout << metrics.dump() << "\n";
    return 0;
  }

  if (*sweep) {
    if (!ps.empty()) cfg.sweep.ps = ps;
    if (!kinds.empty()) {
      cfg.sweep.kinds.clear();
      for (const auto& k : kinds) cfg.sweep.kinds.push_back(parse_prune_kind(k));
    }
    if (c.seed) cfg.sweep.seeds = {*c.seed};
    cfg.validate();
    std::optional<Checkpoint> base;
    if (!checkpoint.empty()) base = load_checkpoint(checkpoint);
    SweepReport report;
    json runs = json::array();
    for (std::uint64_t seed : cfg.sweep.seeds) {
      ExperimentConfig sc = cfg;
      sc.seed = seed;
      const DataSplit data = load_data(sc);
      const Model baseline = base ? base->model : run_train(sc, data, progress("train")).model;
      const SweepReport r = sparsity_sweep(baseline, data, finetune_config(sc), sc.sweep.ps, sc.sweep.kinds);
      for (const auto& row : r.rows)
        runs.push_back({{"kind", to_string(row.kind)}, {"p", row.p}, {"seed", seed},
                        {"acc_pruned", row.acc_pruned}, {"acc_lif", row.acc_lif}, {"acc_slif", row.acc_slif},
                        {"epochs_to_95pct_slif", row.epochs_to_95pct}, {"epochs_to_95pct_lif", row.epochs_to_95pct_lif},
                        {"rate_lif", row.rate_lif}, {"rate_slif", row.rate_slif},
                        {"baseline_accuracy", r.baseline_accuracy}, {"baseline_rate", r.baseline_rate}});
      report.merge(r);
    }
    write_text(dir / "sweep.csv", report.to_csv());
    write_text(dir / "sweep.json", runs.dump(2) + "\n");
    std::cout << report.to_csv();
    return 0;
  }

  if (*roll) {
    const Checkpoint in = need_checkpoint(checkpoint);
    const DataSplit data = load_data(cfg);
    const RolloutMask mask = attention_rollout(collect_attention(in.model, data.test, sample), discard);
    const auto [grid_w, patch] = grid_geometry(cfg, in.model);
    const Index grid_h = mask.values.size() / grid_w;
    write_mask_csv(mask.values, grid_w, dir / "rollout.csv");
    write_pgm(upsample_mask(mask.values, grid_h, grid_w, patch, grid_h * patch, grid_w * patch),
              dir / "rollout.pgm");
    std::cout << "rollout: " << (dir / "rollout.pgm").string() << " " << (dir / "rollout.csv").string() << "\n";
    return 0;
  }

  if (*analyze) {
    const Checkpoint in = need_checkpoint(checkpoint);
    const DataSplit data = load_data(cfg);
    json report;
    if (cfg.analysis.firing_rates) {
      const FiringRates fr = firing_rates(in.model, data.test);
      write_text(dir / "firing_rates.csv", fr.to_csv());
      report["st_rate"] = fr.st_rate;
    }
    if (cfg.analysis.histogram) {
      const std::string sel = layer.empty() ? cfg.analysis.histogram_layer : layer;
      const Histogram h = current_histogram(in.model, data.test, sel, cfg.analysis.histogram_bins);
      write_text(dir / "current_histogram.csv", h.to_csv());
      report["current"] = {{"layer", sel}, {"mean", h.mean}, {"variance", h.variance}};
    }
    if (cfg.analysis.energy) {
      std::optional<Checkpoint> ref;
      if (!reference.empty()) ref = load_checkpoint(reference);
      const EnergyReport e =
          estimate_energy(in.model, data.test, cfg.analysis.energy_model, ref ? &ref->model : nullptr);
      write_text(dir / "energy.json", e.to_json().dump(2) + "\n");
      report["energy"] = e.to_json();
    }
    if (in.meta.baseline) {
      const auto cr = compression_report(*in.meta.baseline, count_params(in.model));
      write_text(dir / "compression.json", cr.to_json().dump(2) + "\n");
      report["compression"] = cr.to_json();
    }
    std::cout << report.dump(2) << "\n";
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const std::invalid_argument& e) {  // config, parameter, plan, usage errors
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
