#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "stlw/neuron.hpp"
#include "stlw/tensor.hpp"

namespace stlw {

/// "Spikformer-L-d-d_m": L blocks, embedding width d, MLP hidden width d_m.
struct Architecture {
  int depth = 2;
  int width = 32;
  int mlp_width = 128;

  static Architecture parse(std::string_view name);
  std::string name() const;
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct ModelConfig {
  Architecture arch;
  int heads = 2;
  int patches = 16;
  int input_features = 16;
  int num_classes = 4;
  int time_steps = 4;
  double init_gain = 5.0;
  double tau = 2.0;
  double threshold = 1.0;
  ResetMode reset = ResetMode::soft;
  double surrogate_width = 1.0;

  void validate() const;
};

enum class BlockWeight : int { Uq, Uk, Uv, M0, M1, M2 };
enum class BlockNeuron : int { q, k, v, attn, m0, m1, m2 };

inline constexpr std::array<const char*, 6> kBlockWeightNames = {"U_q", "U_k", "U_v", "M0", "M1", "M2"};
inline constexpr std::array<const char*, 7> kBlockNeuronNames = {"q", "k", "v", "attn", "m0", "m1", "m2"};

/// One spiking-transformer encoder block: SSA (U_q, U_k, U_v, M0) and MLP
/// (M1, M2), each projection followed by its own spiking layer.
template <typename Scalar>
struct STBlock {
  std::array<Tensor<Scalar>, 6> weights;
  /// 0/1 masks for unstructured pruning; undefined entries are unmasked.
  std::array<Tensor<Scalar>, 6> masks;
  std::array<SLIFParams<Scalar>, 7> neurons;
  int heads = 1;
  /// Attention scaling, 1/sqrt(d) of the embedding width. Fixed at
  /// construction so structured slicing leaves it unchanged.
  Scalar attn_scale = 1;

  Tensor<Scalar>& weight(BlockWeight w) { return weights[static_cast<int>(w)]; }
  const Tensor<Scalar>& weight(BlockWeight w) const { return weights[static_cast<int>(w)]; }
  SLIFParams<Scalar>& neuron(BlockNeuron n) { return neurons[static_cast<int>(n)]; }
  const SLIFParams<Scalar>& neuron(BlockNeuron n) const { return neurons[static_cast<int>(n)]; }

  Index width() const { return weight(BlockWeight::Uq).shape()[0]; }
  Index attn_dim() const { return weight(BlockWeight::Uq).shape()[1]; }
  Index hidden_dim() const { return weight(BlockWeight::M1).shape()[1]; }

  /// Throws ConfigError unless the six matrices chain d -> d_q -> d -> d_m -> d.
  void validate() const;

  STBlock clone() const;

  template <typename To>
  STBlock<To> cast() const {
    STBlock<To> out;
    for (int i = 0; i < 6; ++i) {
      out.weights[i] = weights[i].template cast<To>();
      out.masks[i] = masks[i].template cast<To>();
    }
    for (int i = 0; i < 7; ++i) out.neurons[i] = neurons[i].template cast<To>();
    out.heads = heads;
    out.attn_scale = static_cast<To>(attn_scale);
    return out;
  }
};

template <typename Scalar>
struct STModel {
  ModelConfig config;
  Tensor<Scalar> embed;
  /// Learned per-patch offset [N, d] added to the embedding current.
  Tensor<Scalar> pos;
  SLIFParams<Scalar> embed_neuron;
  std::vector<STBlock<Scalar>> blocks;
  Tensor<Scalar> head;

  /// Fresh model with uniform(+-gain/sqrt(fan_in)) weights and LIF neurons.
  static STModel init(const ModelConfig& config, std::uint64_t seed);

  STModel clone() const;

  template <typename To>
  STModel<To> cast() const {
    STModel<To> out;
    out.config = config;
    out.embed = embed.template cast<To>();
    out.pos = pos.template cast<To>();
    out.embed_neuron = embed_neuron.template cast<To>();
    for (const auto& b : blocks) out.blocks.push_back(b.template cast<To>());
    out.head = head.template cast<To>();
    return out;
  }

  /// Embedding, position table, every block matrix, and the head.
  std::vector<Tensor<Scalar>> synaptic_weights() const;
  /// Learnable tau / u_th scalars of every spiking layer.
  std::vector<Tensor<Scalar>> intrinsic_params() const;

  /// Every spiking layer with its dotted name ("embed", "blocks.0.attn", ...).
  std::vector<std::pair<std::string, SLIFParams<Scalar>*>> neuron_layers();
  std::vector<std::pair<std::string, const SLIFParams<Scalar>*>> neuron_layers() const;

  void set_intrinsic_learnable(bool on);
  void clamp_intrinsics();
  /// Re-zeroes every masked weight.
  void enforce_masks();
  void validate() const;
};

/// Optional instrumentation filled in during a forward pass.
template <typename Scalar>
struct ForwardProbe {
  bool record_currents = false;
  bool record_attention = false;

  struct Layer {
    std::string name;
    double spike_sum = 0;
    Index count = 0;
    ArrayX<Scalar> current;  // pre-neuron input, only if record_currents
  };
  /// A product whose input is (a sum of) spike counts or real values.
  struct Synapse {
    std::string name;
    double input_sum = 0;  // sum of input activations
    Index input_count = 0;
    Index fan_out = 0;
    bool spiking = true;  // false: real-valued input, costed as MAC
  };

  std::vector<Layer> layers;
  std::vector<Synapse> synapses;
  /// Per block: scale * Q K^T at the final time step, [B, H, N, N].
  std::vector<ArrayX<Scalar>> attention;
  Index batch = 0;
  Index tokens = 0;
  std::vector<int> heads;

  const Layer& layer(std::string_view name) const;
};

/// Spiking self-attention: spike(x U) projections, softmax-free multi-head
/// product, spiking attention layer, then spike(x_attn M0).
template <typename Scalar>
Tensor<Scalar> ssa_forward(const Tensor<Scalar>& x, const STBlock<Scalar>& blk, ForwardProbe<Scalar>* probe = nullptr,
                           const std::string& prefix = "block");

/// x' = SSA(x) + x; out = spike(spike(x' M1) M2) + x'.
template <typename Scalar>
Tensor<Scalar> block_forward(const Tensor<Scalar>& x, const STBlock<Scalar>& blk,
                             ForwardProbe<Scalar>* probe = nullptr, const std::string& prefix = "block");

/// Encoded input [T, B, N, d_in] -> logits [B, classes].
template <typename Scalar>
Tensor<Scalar> model_forward(const Tensor<Scalar>& input, const STModel<Scalar>& m,
                             ForwardProbe<Scalar>* probe = nullptr);

struct ParamCount {
  std::int64_t total = 0;
  std::int64_t st_blocks = 0;
};

/// Weight elements; masked-out elements are not counted. `total` adds the
/// embedding, position table, and head to the encoder-block count.
template <typename Scalar>
ParamCount count_params(const STModel<Scalar>& m);

using Model = STModel<float>;
using Block = STBlock<float>;

}  // namespace stlw
