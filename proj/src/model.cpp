#include "stlw/model.hpp"

#include <charconv>
#include <cmath>
#include <random>

namespace stlw {

Architecture Architecture::parse(std::string_view name) {
  constexpr std::string_view prefix = "Spikformer-";
  if (name.substr(0, prefix.size()) != prefix) throw ConfigError("architecture must look like Spikformer-L-d-dm");
  std::string_view rest = name.substr(prefix.size());
  std::array<int, 3> parts{};
  for (int i = 0; i < 3; ++i) {
    const auto dash = rest.find('-');
    if ((i < 2) == (dash == std::string_view::npos))
      throw ConfigError("architecture must look like Spikformer-L-d-dm, got " + std::string(name));
    const std::string_view field = rest.substr(0, dash);
    const auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), parts[i]);
    if (ec != std::errc() || end != field.data() + field.size() || parts[i] < 1)
      throw ConfigError("bad architecture field '" + std::string(field) + "' in " + std::string(name));
    rest = i < 2 ? rest.substr(dash + 1) : std::string_view{};
  }
  return {parts[0], parts[1], parts[2]};
}

std::string Architecture::name() const {
  return "Spikformer-" + std::to_string(depth) + "-" + std::to_string(width) + "-" + std::to_string(mlp_width);
}

void ModelConfig::validate() const {
  if (arch.depth < 1 || arch.width < 1 || arch.mlp_width < 1) throw ConfigError("architecture extents must be >= 1");
  if (heads < 1 || arch.width % heads != 0)
    throw ConfigError("width " + std::to_string(arch.width) + " not divisible by " + std::to_string(heads) + " heads");
  if (patches < 1 || input_features < 1 || time_steps < 1) throw ConfigError("patches, features, T must be >= 1");
  if (num_classes < 2) throw ConfigError("need at least two classes");
  if (!(init_gain > 0)) throw ConfigError("init_gain must be positive");
  if (tau < kTauMin || tau > kTauMax) throw ConfigError("tau out of range");
  if (threshold < kThresholdMin || threshold > kThresholdMax) throw ConfigError("threshold out of range");
  if (!(surrogate_width > 0)) throw ConfigError("surrogate width must be positive");
}

template <typename Scalar>
void STBlock<Scalar>::validate() const {
  for (const auto& w : weights)
    if (!w.defined() || w.rank() != 2) throw ConfigError("block weights must be matrices");
  const Index d = width();
  const Index dq = attn_dim();
  const Index dm = hidden_dim();
  const auto& s = [&](BlockWeight w) { return weight(w).shape(); };
  const bool chained = s(BlockWeight::Uk) == Shape{d, dq} && s(BlockWeight::Uv) == Shape{d, dq} &&
                       s(BlockWeight::M0) == Shape{dq, d} && s(BlockWeight::M1) == Shape{d, dm} &&
                       s(BlockWeight::M2) == Shape{dm, d};
  if (!chained) throw ConfigError("block matrices do not chain d -> d_q -> d -> d_m -> d");
  if (heads < 1 || dq % heads != 0)
    throw ConfigError("attention width " + std::to_string(dq) + " not divisible by " + std::to_string(heads) +
                      " heads");
  if (dm < 1) throw ConfigError("MLP hidden width must be >= 1");
  for (int i = 0; i < 6; ++i)
    if (masks[i].defined() && !(masks[i].shape() == weights[i].shape()))
      throw ConfigError(std::string("mask shape mismatch for ") + kBlockWeightNames[i]);
}

template <typename Scalar>
STBlock<Scalar> STBlock<Scalar>::clone() const {
  STBlock out = *this;
  for (int i = 0; i < 6; ++i) {
    out.weights[i] = weights[i].clone();
    out.masks[i] = masks[i].clone();
  }
  for (int i = 0; i < 7; ++i) out.neurons[i] = neurons[i].clone();
  return out;
}

namespace {

template <typename Scalar>
Tensor<Scalar> uniform_matrix(Index rows, Index cols, double gain, std::mt19937_64& rng) {
  const double bound = gain / std::sqrt(static_cast<double>(rows));
  std::uniform_real_distribution<double> dist(-bound, bound);
  ArrayX<Scalar> v(rows * cols);
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(dist(rng));
  return Tensor<Scalar>(Shape{rows, cols}, std::move(v), true);
}

template <typename Scalar>
SLIFParams<Scalar> lif_from(const ModelConfig& c) {
  return SLIFParams<Scalar>::make(static_cast<Scalar>(c.tau), static_cast<Scalar>(c.threshold), false, c.reset,
                                  static_cast<Scalar>(c.surrogate_width));
}

}  // namespace

template <typename Scalar>
STModel<Scalar> STModel<Scalar>::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const Index d = config.arch.width;
  const Index dm = config.arch.mlp_width;
  const double g = config.init_gain;

  STModel m;
  m.config = config;
  m.embed = uniform_matrix<Scalar>(config.input_features, d, g, rng);
  m.pos = uniform_matrix<Scalar>(config.patches, d, g, rng);
  m.embed_neuron = lif_from<Scalar>(config);
  for (int l = 0; l < config.arch.depth; ++l) {
    STBlock<Scalar> b;
    b.weight(BlockWeight::Uq) = uniform_matrix<Scalar>(d, d, g, rng);
    b.weight(BlockWeight::Uk) = uniform_matrix<Scalar>(d, d, g, rng);
    b.weight(BlockWeight::Uv) = uniform_matrix<Scalar>(d, d, g, rng);
    b.weight(BlockWeight::M0) = uniform_matrix<Scalar>(d, d, g, rng);
    b.weight(BlockWeight::M1) = uniform_matrix<Scalar>(d, dm, g, rng);
    b.weight(BlockWeight::M2) = uniform_matrix<Scalar>(dm, d, g, rng);
    for (auto& n : b.neurons) n = lif_from<Scalar>(config);
    b.heads = config.heads;
    b.attn_scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(d)));
    m.blocks.push_back(std::move(b));
  }
  m.head = uniform_matrix<Scalar>(d, config.num_classes, 1.0, rng);
  return m;
}

template <typename Scalar>
STModel<Scalar> STModel<Scalar>::clone() const {
  STModel out;
  out.config = config;
  out.embed = embed.clone();
  out.pos = pos.clone();
  out.embed_neuron = embed_neuron.clone();
  for (const auto& b : blocks) out.blocks.push_back(b.clone());
  out.head = head.clone();
  return out;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> STModel<Scalar>::synaptic_weights() const {
  std::vector<Tensor<Scalar>> out{embed, pos};
  for (const auto& b : blocks) out.insert(out.end(), b.weights.begin(), b.weights.end());
  out.push_back(head);
  return out;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> STModel<Scalar>::intrinsic_params() const {
  std::vector<Tensor<Scalar>> out;
  for (const auto& [name, layer] : neuron_layers()) {
    auto p = layer->trainable();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

template <typename Scalar>
std::vector<std::pair<std::string, SLIFParams<Scalar>*>> STModel<Scalar>::neuron_layers() {
  std::vector<std::pair<std::string, SLIFParams<Scalar>*>> out{{"embed", &embed_neuron}};
  for (std::size_t l = 0; l < blocks.size(); ++l)
    for (int n = 0; n < 7; ++n)
      out.emplace_back("blocks." + std::to_string(l) + "." + kBlockNeuronNames[n], &blocks[l].neurons[n]);
  return out;
}

template <typename Scalar>
std::vector<std::pair<std::string, const SLIFParams<Scalar>*>> STModel<Scalar>::neuron_layers() const {
  std::vector<std::pair<std::string, const SLIFParams<Scalar>*>> out;
  for (auto& [name, p] : const_cast<STModel*>(this)->neuron_layers()) out.emplace_back(name, p);
  return out;
}

template <typename Scalar>
void STModel<Scalar>::set_intrinsic_learnable(bool on) {
  for (auto& [name, p] : neuron_layers()) p->set_learnable(on, on);
}

template <typename Scalar>
void STModel<Scalar>::clamp_intrinsics() {
  for (auto& [name, p] : neuron_layers()) p->clamp();
}

template <typename Scalar>
void STModel<Scalar>::enforce_masks() {
  for (auto& b : blocks)
    for (int i = 0; i < 6; ++i)
      if (b.masks[i].defined()) b.weights[i].mutable_value() *= b.masks[i].value();
}

template <typename Scalar>
void STModel<Scalar>::validate() const {
  if (blocks.empty()) throw ConfigError("model needs at least one block");
  const Index d = embed.shape().back();
  for (const auto& b : blocks) {
    b.validate();
    if (b.width() != d) throw ConfigError("all blocks must share the embedding width");
  }
  if (!(pos.shape() == Shape{static_cast<Index>(config.patches), d}))
    throw ConfigError("position table shape " + pos.shape().str() + " does not match patches/width");
  if (!(head.shape() == Shape{d, static_cast<Index>(config.num_classes)}))
    throw ConfigError("classifier head shape " + head.shape().str() + " does not match width/classes");
}

template <typename Scalar>
const typename ForwardProbe<Scalar>::Layer& ForwardProbe<Scalar>::layer(std::string_view name) const {
  for (const auto& l : layers)
    if (l.name == name) return l;
  throw LookupError("no spiking layer named '" + std::string(name) + "'");
}

namespace {

template <typename Scalar>
Tensor<Scalar> spiking(const Tensor<Scalar>& current, const SLIFParams<Scalar>& p, ForwardProbe<Scalar>* probe,
                       const std::string& name) {
  Tensor<Scalar> spikes = layer_forward(current, p);
  if (probe) {
    typename ForwardProbe<Scalar>::Layer rec;
    rec.name = name;
    rec.spike_sum = spikes.value().template cast<double>().sum();
    rec.count = spikes.numel();
    if (probe->record_currents) rec.current = current.value();
    probe->layers.push_back(std::move(rec));
  }
  return spikes;
}

bool integral_nonnegative(const auto& values) {
  for (Index i = 0; i < values.size(); ++i)
    if (values[i] < 0 || values[i] != std::floor(values[i])) return false;
  return true;
}

template <typename Scalar>
Tensor<Scalar> project(const Tensor<Scalar>& x, const Tensor<Scalar>& w, ForwardProbe<Scalar>* probe,
                       const std::string& name) {
  if (probe)
    probe->synapses.push_back({name, x.value().template cast<double>().sum(), x.numel(), w.shape().back(),
                               integral_nonnegative(x.value())});
  return matmul(x, w);
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> ssa_forward(const Tensor<Scalar>& x, const STBlock<Scalar>& blk, ForwardProbe<Scalar>* probe,
                           const std::string& prefix) {
  if (blk.heads < 1 || blk.attn_dim() % blk.heads != 0)
    throw ConfigError("attention width " + std::to_string(blk.attn_dim()) + " not divisible by " +
                      std::to_string(blk.heads) + " heads");
  const auto& w = [&](BlockWeight id) -> const Tensor<Scalar>& { return blk.weight(id); };
  const auto& n = [&](BlockNeuron id) -> const SLIFParams<Scalar>& { return blk.neuron(id); };
  const std::string p = prefix + ".";

  Tensor<Scalar> q = spiking(project(x, w(BlockWeight::Uq), probe, p + "U_q"), n(BlockNeuron::q), probe, p + "q");
  Tensor<Scalar> k = spiking(project(x, w(BlockWeight::Uk), probe, p + "U_k"), n(BlockNeuron::k), probe, p + "k");
  Tensor<Scalar> v = spiking(project(x, w(BlockWeight::Uv), probe, p + "U_v"), n(BlockNeuron::v), probe, p + "v");

  ArrayX<Scalar> scores;
  const bool keep_scores = probe && probe->record_attention;
  Tensor<Scalar> current = multihead_attention(q, k, v, blk.heads, blk.attn_scale, keep_scores ? &scores : nullptr);
  if (probe) {
    const Index tokens = x.shape()[x.rank() - 2];
    probe->synapses.push_back({p + "QK^T", q.value().template cast<double>().sum(), q.numel(), tokens, true});
    probe->synapses.push_back({p + "AV", v.value().template cast<double>().sum(), v.numel(), tokens, true});
    if (keep_scores) {
      // Scores are laid out [T, B, H, N, N]; keep the final step.
      const Index steps = x.shape()[0];
      const Index per_step = scores.size() / steps;
      probe->attention.push_back(scores.segment((steps - 1) * per_step, per_step));
      probe->heads.push_back(blk.heads);
      probe->tokens = tokens;
    }
  }
  Tensor<Scalar> attn = spiking(current, n(BlockNeuron::attn), probe, p + "attn");
  return spiking(project(attn, w(BlockWeight::M0), probe, p + "M0"), n(BlockNeuron::m0), probe, p + "m0");
}

template <typename Scalar>
Tensor<Scalar> block_forward(const Tensor<Scalar>& x, const STBlock<Scalar>& blk, ForwardProbe<Scalar>* probe,
                             const std::string& prefix) {
  const std::string p = prefix + ".";
  Tensor<Scalar> mid = add(ssa_forward(x, blk, probe, prefix), x);
  Tensor<Scalar> hidden = spiking(project(mid, blk.weight(BlockWeight::M1), probe, p + "M1"),
                                  blk.neuron(BlockNeuron::m1), probe, p + "m1");
  Tensor<Scalar> mlp = spiking(project(hidden, blk.weight(BlockWeight::M2), probe, p + "M2"),
                               blk.neuron(BlockNeuron::m2), probe, p + "m2");
  return add(mlp, mid);
}

template <typename Scalar>
Tensor<Scalar> model_forward(const Tensor<Scalar>& input, const STModel<Scalar>& m, ForwardProbe<Scalar>* probe) {
  const auto& c = m.config;
  if (input.rank() != 4 || input.shape()[0] < 1 || input.shape()[2] != c.patches ||
      input.shape()[3] != m.embed.shape()[0])
    throw ConfigError("encoded input " + input.shape().str() + " does not match [T, B, " +
                      std::to_string(c.patches) + ", " + std::to_string(m.embed.shape()[0]) + "]");
  if (probe) probe->batch = input.shape()[1];
  Tensor<Scalar> x =
      spiking(add_broadcast(project(input, m.embed, probe, "embed"), m.pos), m.embed_neuron, probe, "embed");
  for (std::size_t l = 0; l < m.blocks.size(); ++l) x = block_forward(x, m.blocks[l], probe, "blocks." + std::to_string(l));
  static constexpr std::array<int, 2> kPoolAxes{0, 2};
  Tensor<Scalar> pooled = mean_over(x, std::span<const int>(kPoolAxes));
  if (probe)
    probe->synapses.push_back({"head", pooled.value().template cast<double>().sum(), pooled.numel(),
                               m.head.shape().back(), false});
  return matmul(pooled, m.head);
}

template <typename Scalar>
ParamCount count_params(const STModel<Scalar>& m) {
  ParamCount c;
  for (const auto& b : m.blocks)
    for (int i = 0; i < 6; ++i)
      c.st_blocks += b.masks[i].defined() ? static_cast<std::int64_t>((b.masks[i].value() != Scalar(0)).count())
                                          : static_cast<std::int64_t>(b.weights[i].numel());
  c.total = c.st_blocks + m.embed.numel() + m.pos.numel() + m.head.numel();
  return c;
}

template struct STBlock<float>;
template struct STBlock<double>;
template struct STModel<float>;
template struct STModel<double>;
template struct ForwardProbe<float>;
template struct ForwardProbe<double>;

#define STLW_INSTANTIATE_MODEL(S)                                                                              \
  template Tensor<S> ssa_forward(const Tensor<S>&, const STBlock<S>&, ForwardProbe<S>*, const std::string&);  \
  template Tensor<S> block_forward(const Tensor<S>&, const STBlock<S>&, ForwardProbe<S>*, const std::string&); \
  template Tensor<S> model_forward(const Tensor<S>&, const STModel<S>&, ForwardProbe<S>*);                    \
  template ParamCount count_params(const STModel<S>&);

STLW_INSTANTIATE_MODEL(float)
STLW_INSTANTIATE_MODEL(double)

}  // namespace stlw
