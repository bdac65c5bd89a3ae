#include "stlw/config.hpp"

#include <fstream>
#include <set>

namespace stlw {

namespace {

using json = nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad type for '" + std::string(key) + "' in " + where);
  }
}

const char* to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::synthetic: return "synthetic";
    case DatasetKind::idx: return "idx";
    case DatasetKind::csv: return "csv";
  }
  return "synthetic";
}

DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "synthetic") return DatasetKind::synthetic;
  if (s == "idx") return DatasetKind::idx;
  if (s == "csv") return DatasetKind::csv;
  throw ConfigError("unknown dataset kind '" + s + "' (expected synthetic, idx or csv)");
}

json train_to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"weight_decay", t.weight_decay},
          {"cosine", t.cosine}};
}

TrainConfig train_from_json(const json& j, TrainConfig t, const std::string& where) {
  check_keys(j, {"epochs", "batch_size", "learning_rate", "weight_decay", "cosine"}, where);
  read(j, "epochs", t.epochs, where);
  read(j, "batch_size", t.batch_size, where);
  read(j, "learning_rate", t.learning_rate, where);
  read(j, "weight_decay", t.weight_decay, where);
  read(j, "cosine", t.cosine, where);
  return t;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  finetune.epochs = 20;
  finetune.learning_rate = 1e-3;
  finetune.mode = TrainMode::finetune;
}

json ExperimentConfig::to_json() const {
  const auto& s = dataset.synth;
  json ds = {{"kind", to_string(dataset.kind)}};
  if (dataset.kind == DatasetKind::synthetic) {
    ds.update({{"classes", s.classes},
               {"patches", s.patches},
               {"features", s.features},
               {"active_patches", s.active_patches},
               {"train_size", s.train_size},
               {"test_size", s.test_size},
               {"r_high", s.r_high},
               {"r_low", s.r_low}});
  } else {
    ds.update({{"rows", dataset.rows}, {"cols", dataset.cols}, {"patch", dataset.patch}});
    if (dataset.kind == DatasetKind::idx)
      ds.update({{"train_images", dataset.train_images},
                 {"train_labels", dataset.train_labels},
                 {"test_images", dataset.test_images},
                 {"test_labels", dataset.test_labels}});
    else
      ds.update({{"train_csv", dataset.train_csv}, {"test_csv", dataset.test_csv}});
  }
  std::vector<std::string> kinds;
  for (auto k : sweep.kinds) kinds.push_back(stlw::to_string(k));
  return {{"architecture", architecture},
          {"heads", heads},
          {"init_gain", init_gain},
          {"tau", tau},
          {"threshold", threshold},
          {"reset", reset == ResetMode::soft ? "soft" : "hard"},
          {"surrogate_width", surrogate_width},
          {"T", time_steps},
          {"seed", seed},
          {"encoding", stlw::to_string(encoding)},
          {"dataset", ds},
          {"train", train_to_json(train)},
          {"finetune", train_to_json(finetune)},
          {"prune", {{"kind", stlw::to_string(prune_kind)}, {"p", prune_p}}},
          {"neuron", stlw::to_string(neuron)},
          {"analysis",
           {{"rollout", analysis.rollout},
            {"discard_ratio", analysis.discard_ratio},
            {"rollout_sample", analysis.rollout_sample},
            {"firing_rates", analysis.firing_rates},
            {"histogram", analysis.histogram},
            {"histogram_layer", analysis.histogram_layer},
            {"histogram_bins", analysis.histogram_bins},
            {"energy", analysis.energy},
            {"e_mac", analysis.energy_model.e_mac},
            {"e_ac", analysis.energy_model.e_ac}}},
          {"sweep", {{"ps", sweep.ps}, {"kinds", kinds}, {"seeds", sweep.seeds}}},
          {"output_dir", output_dir}};
}

void ExperimentConfig::validate() const {
  Architecture::parse(architecture);
  if (time_steps < 1) throw ConfigError("T must be >= 1");
  if (dataset.kind == DatasetKind::synthetic) {
    dataset.synth.validate();
    if (dataset.synth.time_steps != time_steps) throw ConfigError("synthetic T must equal T");
  } else if (dataset.patch < 1 || dataset.rows % dataset.patch || dataset.cols % dataset.patch) {
    throw ConfigError("patch must divide rows and cols");
  }
  train.validate();
  finetune.validate();
  if (!(prune_p >= 0.0 && prune_p <= 1.0)) throw ConfigError("prune.p must lie in [0, 1]");
  if (!(analysis.discard_ratio >= 0.0 && analysis.discard_ratio < 1.0))
    throw ConfigError("discard_ratio must lie in [0, 1)");
  if (analysis.histogram_bins < 1) throw ConfigError("histogram_bins must be >= 1");
  analysis.energy_model.validate();
  for (double p : sweep.ps)
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("sweep ps must lie in [0, 1)");
  if (sweep.seeds.empty()) throw ConfigError("sweep needs at least one seed");
}

ExperimentConfig parse_experiment_config(const json& j) {
  const std::string top = "config";
  check_keys(j,
             {"architecture", "heads", "init_gain", "tau", "threshold", "reset", "surrogate_width", "T", "seed",
              "encoding", "dataset", "train", "finetune", "prune", "neuron", "analysis", "sweep", "output_dir"},
             top);
  ExperimentConfig c;
  read(j, "architecture", c.architecture, top);
  read(j, "heads", c.heads, top);
  read(j, "init_gain", c.init_gain, top);
  read(j, "tau", c.tau, top);
  read(j, "threshold", c.threshold, top);
  read(j, "surrogate_width", c.surrogate_width, top);
  read(j, "T", c.time_steps, top);
  read(j, "seed", c.seed, top);
  read(j, "output_dir", c.output_dir, top);
  if (j.contains("reset")) {
    std::string r;
    read(j, "reset", r, top);
    if (r != "soft" && r != "hard") throw ConfigError("reset must be soft or hard");
    c.reset = r == "soft" ? ResetMode::soft : ResetMode::hard;
  }
  if (j.contains("encoding")) {
    std::string e;
    read(j, "encoding", e, top);
    c.encoding = parse_encoding(e);
  }
  if (j.contains("neuron")) {
    std::string n;
    read(j, "neuron", n, top);
    c.neuron = parse_neuron_kind(n);
  }
  c.dataset.synth.time_steps = c.time_steps;
  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    const std::string where = "dataset";
    check_keys(d,
               {"kind", "classes", "patches", "features", "active_patches", "train_size", "test_size", "r_high",
                "r_low", "train_images", "train_labels", "test_images", "test_labels", "train_csv", "test_csv", "rows",
                "cols", "patch"},
               where);
    if (d.contains("kind")) {
      std::string k;
      read(d, "kind", k, where);
      c.dataset.kind = parse_dataset_kind(k);
    }
    auto& s = c.dataset.synth;
    read(d, "classes", s.classes, where);
    read(d, "patches", s.patches, where);
    read(d, "features", s.features, where);
    read(d, "active_patches", s.active_patches, where);
    read(d, "train_size", s.train_size, where);
    read(d, "test_size", s.test_size, where);
    read(d, "r_high", s.r_high, where);
    read(d, "r_low", s.r_low, where);
    read(d, "train_images", c.dataset.train_images, where);
    read(d, "train_labels", c.dataset.train_labels, where);
    read(d, "test_images", c.dataset.test_images, where);
    read(d, "test_labels", c.dataset.test_labels, where);
    read(d, "train_csv", c.dataset.train_csv, where);
    read(d, "test_csv", c.dataset.test_csv, where);
    read(d, "rows", c.dataset.rows, where);
    read(d, "cols", c.dataset.cols, where);
    read(d, "patch", c.dataset.patch, where);
  }
  if (j.contains("train")) c.train = train_from_json(j["train"], c.train, "train");
  if (j.contains("finetune")) c.finetune = train_from_json(j["finetune"], c.finetune, "finetune");
  if (j.contains("prune")) {
    const json& p = j["prune"];
    check_keys(p, {"kind", "p"}, "prune");
    if (p.contains("kind")) {
      std::string k;
      read(p, "kind", k, "prune");
      c.prune_kind = parse_prune_kind(k);
    }
    read(p, "p", c.prune_p, "prune");
  }
  if (j.contains("analysis")) {
    const json& a = j["analysis"];
    const std::string where = "analysis";
    check_keys(a,
               {"rollout", "discard_ratio", "rollout_sample", "firing_rates", "histogram", "histogram_layer",
                "histogram_bins", "energy", "e_mac", "e_ac"},
               where);
    read(a, "rollout", c.analysis.rollout, where);
    read(a, "discard_ratio", c.analysis.discard_ratio, where);
    read(a, "rollout_sample", c.analysis.rollout_sample, where);
    read(a, "firing_rates", c.analysis.firing_rates, where);
    read(a, "histogram", c.analysis.histogram, where);
    read(a, "histogram_layer", c.analysis.histogram_layer, where);
    read(a, "histogram_bins", c.analysis.histogram_bins, where);
    read(a, "energy", c.analysis.energy, where);
    read(a, "e_mac", c.analysis.energy_model.e_mac, where);
    read(a, "e_ac", c.analysis.energy_model.e_ac, where);
  }
  if (j.contains("sweep")) {
    const json& s = j["sweep"];
    check_keys(s, {"ps", "kinds", "seeds"}, "sweep");
    read(s, "ps", c.sweep.ps, "sweep");
    read(s, "seeds", c.sweep.seeds, "sweep");
    if (s.contains("kinds")) {
      std::vector<std::string> kinds;
      read(s, "kinds", kinds, "sweep");
      c.sweep.kinds.clear();
      for (const auto& k : kinds) c.sweep.kinds.push_back(parse_prune_kind(k));
    }
  }
  c.train.mode = TrainMode::pretrain;
  c.finetune.mode = TrainMode::finetune;
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_experiment_config(j);
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& stream) {
  // FNV-1a over the stream name, then a splitmix64 finalizer.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : stream) h = (h ^ ch) * 1099511628211ULL;
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (h | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

DataSplit load_data(const ExperimentConfig& cfg) {
  const std::uint64_t seed = derive_seed(cfg.seed, "data");
  switch (cfg.dataset.kind) {
    case DatasetKind::synthetic: {
      SynthSpec s = cfg.dataset.synth;
      s.time_steps = cfg.time_steps;
      return synth_dataset(s, seed);
    }
    case DatasetKind::idx: {
      DataSplit split;
      split.train = load_idx_images(cfg.dataset.train_images, cfg.dataset.train_labels, cfg.dataset.patch,
                                    cfg.encoding, cfg.time_steps, seed);
      split.test = load_idx_images(cfg.dataset.test_images, cfg.dataset.test_labels, cfg.dataset.patch, cfg.encoding,
                                   cfg.time_steps, seed + 1);
      return split;
    }
    case DatasetKind::csv: {
      DataSplit split;
      split.train = encode_images(read_image_csv(cfg.dataset.train_csv, cfg.dataset.rows, cfg.dataset.cols),
                                  cfg.dataset.patch, cfg.encoding, cfg.time_steps, seed);
      split.test = encode_images(read_image_csv(cfg.dataset.test_csv, cfg.dataset.rows, cfg.dataset.cols),
                                 cfg.dataset.patch, cfg.encoding, cfg.time_steps, seed + 1);
      return split;
    }
  }
  throw ConfigError("unknown dataset kind");
}

ModelConfig model_config(const ExperimentConfig& cfg, const DataSplit& data) {
  ModelConfig m;
  m.arch = Architecture::parse(cfg.architecture);
  m.heads = cfg.heads;
  m.patches = static_cast<int>(data.train.patches);
  m.input_features = static_cast<int>(data.train.features);
  m.num_classes = std::max(data.train.num_classes, data.test.num_classes);
  m.time_steps = cfg.time_steps;
  m.init_gain = cfg.init_gain;
  m.tau = cfg.tau;
  m.threshold = cfg.threshold;
  m.reset = cfg.reset;
  m.surrogate_width = cfg.surrogate_width;
  m.validate();
  return m;
}

}  // namespace stlw
