#include "stlw/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace stlw {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

using Records = std::map<std::string, Tensor<float>>;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const std::string& field) {
    need(sizeof(T), field);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string take(std::size_t n, const std::string& field) {
    need(n, field);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t offset() const { return pos_; }

 private:
  void need(std::size_t n, const std::string& field) const {
    if (bytes_.size() - pos_ < n)
      throw LoadError("checkpoint truncated while reading " + field + " at byte offset " + std::to_string(pos_));
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

const char* reset_name(ResetMode r) { return r == ResetMode::soft ? "soft" : "hard"; }

ResetMode parse_reset(const std::string& s) {
  if (s == "soft") return ResetMode::soft;
  if (s == "hard") return ResetMode::hard;
  throw ConfigError("unknown reset mode '" + s + "' (expected soft or hard)");
}

nlohmann::json plan_to_json(const PrunePlan& plan) {
  nlohmann::json j = {{"kind", to_string(plan.kind)},
                      {"sparsity", plan.sparsity},
                      {"random", plan.random},
                      {"seed", plan.seed}};
  if (plan.kind == PruneKind::dsp) {
    nlohmann::json dims = nlohmann::json::array();
    for (const auto& d : plan.dims) dims.push_back({{"ssa", d.ssa}, {"mlp", d.mlp}});
    j["dims"] = dims;
    const auto vec = [](const std::vector<Eigen::VectorXf>& v) {
      nlohmann::json a = nlohmann::json::array();
      for (const auto& s : v) a.push_back(std::vector<float>(s.data(), s.data() + s.size()));
      return a;
    };
    j["ssa_scores"] = vec(plan.ssa_scores);
    j["mlp_scores"] = vec(plan.mlp_scores);
  } else {
    j["blocks"] = plan.masks.size();
  }
  return j;
}

PrunePlan plan_from_json(const nlohmann::json& j, const Records& records) {
  PrunePlan plan;
  plan.kind = parse_prune_kind(j.at("kind").get<std::string>());
  plan.sparsity = j.at("sparsity").get<double>();
  plan.random = j.at("random").get<bool>();
  plan.seed = j.at("seed").get<std::uint64_t>();
  if (plan.kind == PruneKind::dsp) {
    for (const auto& d : j.at("dims"))
      plan.dims.push_back({d.at("ssa").get<std::vector<Index>>(), d.at("mlp").get<std::vector<Index>>()});
    const auto vec = [](const nlohmann::json& a) {
      std::vector<Eigen::VectorXf> out;
      for (const auto& s : a) {
        const auto v = s.get<std::vector<float>>();
        out.push_back(Eigen::Map<const Eigen::VectorXf>(v.data(), static_cast<Index>(v.size())));
      }
      return out;
    };
    plan.ssa_scores = vec(j.at("ssa_scores"));
    plan.mlp_scores = vec(j.at("mlp_scores"));
  } else {
    const auto blocks = j.at("blocks").get<std::size_t>();
    for (std::size_t l = 0; l < blocks; ++l) {
      std::array<Tensor<float>, 6> masks;
      for (int i = 0; i < 6; ++i) {
        const std::string name = "plan." + std::to_string(l) + "." + kBlockWeightNames[i];
        const auto it = records.find(name);
        if (it == records.end()) throw LoadError("missing tensor record " + name);
        masks[i] = it->second;
      }
      plan.masks.push_back(std::move(masks));
    }
  }
  return plan;
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"architecture", c.arch.name()},
          {"heads", c.heads},
          {"patches", c.patches},
          {"input_features", c.input_features},
          {"num_classes", c.num_classes},
          {"time_steps", c.time_steps},
          {"init_gain", c.init_gain},
          {"tau", c.tau},
          {"threshold", c.threshold},
          {"reset", reset_name(c.reset)},
          {"surrogate_width", c.surrogate_width}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.arch = Architecture::parse(j.at("architecture").get<std::string>());
  c.heads = j.at("heads").get<int>();
  c.patches = j.at("patches").get<int>();
  c.input_features = j.at("input_features").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.time_steps = j.at("time_steps").get<int>();
  c.init_gain = j.at("init_gain").get<double>();
  c.tau = j.at("tau").get<double>();
  c.threshold = j.at("threshold").get<double>();
  c.reset = parse_reset(j.at("reset").get<std::string>());
  c.surrogate_width = j.at("surrogate_width").get<double>();
  return c;
}

std::string serialize_checkpoint(const Model& m, const CheckpointMeta& meta) {
  m.validate();
  std::vector<std::pair<std::string, Tensor<float>>> records{{"embed", m.embed}, {"pos", m.pos}, {"head", m.head}};
  nlohmann::json blocks = nlohmann::json::array();
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    const auto& b = m.blocks[l];
    const std::string p = "blocks." + std::to_string(l) + ".";
    nlohmann::json masked = nlohmann::json::array();
    for (int i = 0; i < 6; ++i) {
      records.emplace_back(p + kBlockWeightNames[i], b.weights[i]);
      if (b.masks[i].defined()) {
        records.emplace_back(p + "mask." + kBlockWeightNames[i], b.masks[i]);
        masked.push_back(kBlockWeightNames[i]);
      }
    }
    blocks.push_back({{"heads", b.heads}, {"attn_scale", b.attn_scale}, {"masked", masked}});
  }
  nlohmann::json neurons = nlohmann::json::array();
  for (const auto& [name, n] : m.neuron_layers()) {
    records.emplace_back("neuron." + name + ".tau", n->tau);
    records.emplace_back("neuron." + name + ".u_th", n->u_th);
    neurons.push_back({{"name", name},
                       {"tau", n->tau.item()},
                       {"u_th", n->u_th.item()},
                       {"u_rest", n->u_rest},
                       {"reset", reset_name(n->reset)},
                       {"surrogate_width", n->surrogate_width},
                       {"learn_tau", n->learns_tau()},
                       {"learn_threshold", n->learns_threshold()}});
  }
  nlohmann::json j = {{"config", model_config_to_json(m.config)},
                      {"blocks", blocks},
                      {"neurons", neurons},
                      {"stage", meta.stage},
                      {"epoch", meta.epoch},
                      {"metrics", meta.metrics}};
  if (meta.baseline) j["baseline_params"] = {{"total", meta.baseline->total}, {"st_blocks", meta.baseline->st_blocks}};
  if (meta.plan) {
    j["plan"] = plan_to_json(*meta.plan);
    if (meta.plan->kind == PruneKind::l1p)
      for (std::size_t l = 0; l < meta.plan->masks.size(); ++l)
        for (int i = 0; i < 6; ++i)
          records.emplace_back("plan." + std::to_string(l) + "." + kBlockWeightNames[i], meta.plan->masks[l][i]);
  }

  const std::string header = j.dump();
  std::string out = "STLW";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, header.size());
  out += header;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& [name, t] : records) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (Index e : t.shape().extents()) put<std::uint64_t>(out, static_cast<std::uint64_t>(e));
    out.append(reinterpret_cast<const char*>(t.value().data()), static_cast<std::size_t>(t.numel()) * sizeof(float));
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(4, "magic") != "STLW") throw LoadError("bad magic: not an STLW checkpoint");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw LoadError("unsupported version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  const auto meta_len = in.get<std::uint64_t>("metadata length");
  if (meta_len > bytes.size()) throw LoadError("metadata length " + std::to_string(meta_len) + " exceeds file size");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in.take(static_cast<std::size_t>(meta_len), "metadata"));
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError(std::string("metadata is not valid JSON: ") + e.what());
  }

  Records records;
  const auto count = in.get<std::uint32_t>("record count");
  for (std::uint32_t r = 0; r < count; ++r) {
    const std::string field = "record " + std::to_string(r);
    const auto name_len = in.get<std::uint32_t>(field + " name length");
    const std::string name = in.take(name_len, field + " name");
    const auto rank = in.get<std::uint32_t>(field + " rank");
    if (rank > static_cast<std::uint32_t>(Shape::kMaxRank))
      throw LoadError("record '" + name + "' rank " + std::to_string(rank) + " exceeds 4");
    std::array<Index, Shape::kMaxRank> ext{};
    std::uint64_t numel = 1;
    for (std::uint32_t a = 0; a < rank; ++a) {
      const auto e = in.get<std::uint64_t>("record '" + name + "' shape");
      if (e > bytes.size()) throw LoadError("record '" + name + "' shape extent exceeds file size");
      ext[a] = static_cast<Index>(e);
      numel *= e;
    }
    if (numel > bytes.size()) throw LoadError("record '" + name + "' data exceeds file size");
    const std::string raw = in.take(static_cast<std::size_t>(numel) * sizeof(float), "record '" + name + "' data");
    ArrayX<float> values(static_cast<Index>(numel));
    std::memcpy(values.data(), raw.data(), raw.size());
    if (!records.emplace(name, Tensor<float>(Shape(std::span<const Index>(ext.data(), rank)), std::move(values))).second)
      throw LoadError("duplicate tensor record '" + name + "'");
  }
  if (!in.done()) throw LoadError("trailing bytes after record " + std::to_string(count));

  const auto take = [&](const std::string& name, bool grad) {
    const auto it = records.find(name);
    if (it == records.end()) throw LoadError("missing tensor record " + name);
    Tensor<float> t = it->second.clone();
    t.set_requires_grad(grad);
    return t;
  };

  Checkpoint ck;
  try {
    Model& m = ck.model;
    m.config = model_config_from_json(j.at("config"));
    m.embed = take("embed", true);
    m.pos = take("pos", true);
    m.head = take("head", true);
    const auto& blocks = j.at("blocks");
    if (static_cast<int>(blocks.size()) != m.config.arch.depth) throw LoadError("block count does not match depth");
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      Block b;
      const std::string p = "blocks." + std::to_string(l) + ".";
      b.heads = blocks[l].at("heads").get<int>();
      b.attn_scale = blocks[l].at("attn_scale").get<float>();
      for (int i = 0; i < 6; ++i) b.weights[i] = take(p + kBlockWeightNames[i], true);
      for (const auto& name : blocks[l].at("masked")) {
        const std::string n = name.get<std::string>();
        const auto pos = std::find(kBlockWeightNames.begin(), kBlockWeightNames.end(), n);
        if (pos == kBlockWeightNames.end()) throw LoadError("unknown masked weight " + n);
        b.masks[static_cast<std::size_t>(pos - kBlockWeightNames.begin())] = take(p + "mask." + n, false);
      }
      m.blocks.push_back(std::move(b));
    }
    auto layers = m.neuron_layers();
    const auto& neurons = j.at("neurons");
    if (neurons.size() != layers.size()) throw LoadError("neuron layer count does not match architecture");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& nj = neurons[i];
      if (nj.at("name").get<std::string>() != layers[i].first)
        throw LoadError("neuron layer " + std::to_string(i) + " is named " + nj.at("name").get<std::string>() +
                        ", expected " + layers[i].first);
      SLIFParams<float>& n = *layers[i].second;
      n.tau = take("neuron." + layers[i].first + ".tau", nj.at("learn_tau").get<bool>());
      n.u_th = take("neuron." + layers[i].first + ".u_th", nj.at("learn_threshold").get<bool>());
      n.u_rest = nj.at("u_rest").get<float>();
      n.reset = parse_reset(nj.at("reset").get<std::string>());
      n.surrogate_width = nj.at("surrogate_width").get<float>();
    }
    m.validate();

    ck.meta.stage = j.at("stage").get<std::string>();
    ck.meta.epoch = j.at("epoch").get<int>();
    ck.meta.metrics = j.at("metrics");
    if (j.contains("baseline_params"))
      ck.meta.baseline = ParamCount{j["baseline_params"].at("total").get<std::int64_t>(),
                                    j["baseline_params"].at("st_blocks").get<std::int64_t>()};
    if (j.contains("plan")) ck.meta.plan = plan_from_json(j["plan"], records);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed metadata: ") + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(std::string("inconsistent checkpoint: ") + e.what());
  } catch (const DimensionError& e) {
    throw LoadError(std::string("inconsistent checkpoint: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const Model& m, const CheckpointMeta& meta, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(m, meta);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

}  // namespace stlw
