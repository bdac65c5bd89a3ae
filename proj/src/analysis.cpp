#include "stlw/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace stlw {

namespace {

void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

Eigen::MatrixXd rollout_matrix(const std::vector<AttentionMap>& attn) {
  if (attn.empty()) throw DimensionError("attention rollout needs at least one layer");
  const Index P = attn.front().patches;
  Eigen::MatrixXd R = Eigen::MatrixXd::Identity(P, P);
  for (const auto& a : attn) {
    if (a.patches != P || a.heads < 1 || a.values.size() != a.heads * a.patches * a.patches)
      throw DimensionError("attention maps must be [H, P, P] with a common P");
    Eigen::MatrixXd fused = Eigen::MatrixXd::Zero(P, P);
    for (Index h = 0; h < a.heads; ++h)
      for (Index i = 0; i < P; ++i)
        for (Index j = 0; j < P; ++j) fused(i, j) += std::max(0.0, a.at(h, i, j));
    fused /= static_cast<double>(a.heads);
    fused += Eigen::MatrixXd::Identity(P, P);
    const Eigen::VectorXd sums = fused.rowwise().sum();
    for (Index i = 0; i < P; ++i) fused.row(i) /= sums[i];
    R = fused * R;
  }
  return R;
}

Eigen::VectorXd discard_smallest(const Eigen::VectorXd& values, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ParameterError("discard_ratio must lie in [0, 1)");
  const Index n = values.size();
  const auto drop = static_cast<Index>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return values[a] < values[b]; });
  Eigen::VectorXd out = values;
  for (Index i = 0; i < drop; ++i) out[order[static_cast<std::size_t>(i)]] = 0.0;
  return out;
}

RolloutMask attention_rollout(const std::vector<AttentionMap>& attn, double discard_ratio) {
  const Eigen::MatrixXd R = rollout_matrix(attn);
  RolloutMask mask;
  mask.values = discard_smallest(R.colwise().mean().transpose(), discard_ratio);
  mask.discard_ratio = discard_ratio;
  mask.layers = static_cast<int>(attn.size());
  mask.heads = attn.front().heads;
  return mask;
}

std::vector<AttentionMap> collect_attention(const Model& m, const Dataset& data, Index index) {
  if (index < 0 || index >= data.size()) throw LookupError("sample index out of range");
  ForwardProbe<float> probe;
  probe.record_attention = true;
  const Index idx[] = {index};
  model_forward(data.batch(idx), m, &probe);
  std::vector<AttentionMap> out;
  for (std::size_t l = 0; l < probe.attention.size(); ++l) {
    AttentionMap a;
    a.heads = probe.heads[l];
    a.patches = probe.tokens;
    a.values = probe.attention[l].cast<double>();  // batch of one: [H, N, N]
    out.push_back(std::move(a));
  }
  return out;
}

Eigen::MatrixXd upsample_mask(const Eigen::VectorXd& mask, Index grid_h, Index grid_w, Index patch, Index out_h,
                              Index out_w) {
  if (grid_h * grid_w != mask.size()) throw DimensionError("mask length does not match the patch grid");
  if (patch < 1 || out_h < 1 || out_w < 1) throw DimensionError("upsample extents must be positive");
  const Index h = grid_h * patch;
  const Index w = grid_w * patch;
  Eigen::MatrixXd nearest(h, w);
  for (Index r = 0; r < h; ++r)
    for (Index c = 0; c < w; ++c) nearest(r, c) = mask[(r / patch) * grid_w + c / patch];
  if (out_h == h && out_w == w) return nearest;
  Eigen::MatrixXd out(out_h, out_w);
  for (Index r = 0; r < out_h; ++r) {
    const double y = std::clamp((static_cast<double>(r) + 0.5) * h / out_h - 0.5, 0.0, static_cast<double>(h - 1));
    const Index y0 = static_cast<Index>(std::floor(y));
    const Index y1 = std::min(y0 + 1, h - 1);
    const double fy = y - static_cast<double>(y0);
    for (Index c = 0; c < out_w; ++c) {
      const double x = std::clamp((static_cast<double>(c) + 0.5) * w / out_w - 0.5, 0.0, static_cast<double>(w - 1));
      const Index x0 = static_cast<Index>(std::floor(x));
      const Index x1 = std::min(x0 + 1, w - 1);
      const double fx = x - static_cast<double>(x0);
      out(r, c) = (1 - fy) * ((1 - fx) * nearest(y0, x0) + fx * nearest(y0, x1)) +
                  fy * ((1 - fx) * nearest(y1, x0) + fx * nearest(y1, x1));
    }
  }
  return out;
}

void write_pgm(const Eigen::MatrixXd& image, const std::filesystem::path& path) {
  const double peak = image.size() ? image.maxCoeff() : 0.0;
  std::string bytes = "P5\n" + std::to_string(image.cols()) + " " + std::to_string(image.rows()) + "\n255\n";
  for (Index r = 0; r < image.rows(); ++r)
    for (Index c = 0; c < image.cols(); ++c) {
      const double v = peak > 0 ? std::clamp(image(r, c) / peak, 0.0, 1.0) : 0.0;
      bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  atomic_write(path, bytes);
}

void write_mask_csv(const Eigen::VectorXd& mask, Index grid_w, const std::filesystem::path& path) {
  if (grid_w < 1 || mask.size() % grid_w != 0) throw DimensionError("mask length does not match grid width");
  std::ostringstream out;
  out.precision(10);
  for (Index i = 0; i < mask.size(); ++i) out << mask[i] << ((i + 1) % grid_w == 0 ? '\n' : ',');
  atomic_write(path, out.str());
}

std::string FiringRates::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "layer,rate\n";
  for (const auto& l : layers) out << l.name << ',' << l.rate << '\n';
  out << "st_modules," << st_rate << '\n';
  return out.str();
}

FiringRates firing_rates(const Model& m, const Dataset& data) {
  const EvalResult r = evaluate(m, data);
  return {r.rates, r.st_rate};
}

double Histogram::integral() const {
  double s = 0;
  for (std::size_t i = 0; i < density.size(); ++i) s += density[i] * (edges[i + 1] - edges[i]);
  return s;
}

std::string Histogram::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "lo,hi,density\n";
  for (std::size_t i = 0; i < density.size(); ++i) out << edges[i] << ',' << edges[i + 1] << ',' << density[i] << '\n';
  return out.str();
}

Histogram make_histogram(const ArrayX<double>& values, int bins) {
  if (bins < 1) throw ParameterError("histogram needs at least one bin");
  Histogram h;
  h.samples = values.size();
  if (values.size() == 0) throw ParameterError("histogram of an empty sample");
  double lo = values.minCoeff();
  double hi = values.maxCoeff();
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / bins;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i) h.edges[static_cast<std::size_t>(i)] = lo + width * i;
  h.edges.back() = hi;
  std::vector<double> counts(static_cast<std::size_t>(bins), 0.0);
  for (Index i = 0; i < values.size(); ++i) {
    auto b = static_cast<Index>(std::floor((values[i] - lo) / width));
    b = std::clamp<Index>(b, 0, bins - 1);
    counts[static_cast<std::size_t>(b)] += 1.0;
  }
  h.density.resize(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i)
    h.density[i] = counts[i] / (static_cast<double>(values.size()) * (h.edges[i + 1] - h.edges[i]));
  h.mean = values.mean();
  h.variance = (values - h.mean).square().mean();
  return h;
}

Histogram current_histogram(const Model& m, const Dataset& data, const std::string& layer, int bins) {
  std::vector<std::string> names;
  if (layer == "attn") {
    for (std::size_t l = 0; l < m.blocks.size(); ++l) names.push_back("blocks." + std::to_string(l) + ".attn");
  } else {
    bool known = false;
    for (const auto& [name, p] : m.neuron_layers()) known = known || name == layer;
    if (!known) throw LookupError("no spiking layer named '" + layer + "'");
    names.push_back(layer);
  }
  std::vector<double> values;
  for (Index start = 0; start < data.size(); start += 64) {
    std::vector<Index> idx;
    for (Index i = start; i < std::min<Index>(start + 64, data.size()); ++i) idx.push_back(i);
    ForwardProbe<float> probe;
    probe.record_currents = true;
    model_forward(data.batch(idx), m, &probe);
    for (const auto& name : names) {
      const auto& cur = probe.layer(name).current;
      values.insert(values.end(), cur.data(), cur.data() + cur.size());
    }
  }
  return make_histogram(Eigen::Map<const ArrayX<double>>(values.data(), static_cast<Index>(values.size())), bins);
}

void EnergyModel::validate() const {
  if (!(e_mac > 0) || !(e_ac > 0)) throw ConfigError("energy constants must be strictly positive");
}

nlohmann::json EnergyReport::to_json() const {
  return {{"ac_ops", ac_ops}, {"mac_ops", mac_ops}, {"ac_pj", ac_pj},
          {"mac_pj", mac_pj}, {"total_pj", total_pj}, {"ratio", ratio}};
}

std::vector<SynapseActivity> synapse_activity(const Model& m, const Dataset& data) {
  std::vector<SynapseActivity> out;
  std::vector<double> sums;
  std::vector<double> counts;
  for (Index start = 0; start < data.size(); start += 64) {
    std::vector<Index> idx;
    for (Index i = start; i < std::min<Index>(start + 64, data.size()); ++i) idx.push_back(i);
    ForwardProbe<float> probe;
    model_forward(data.batch(idx), m, &probe);
    if (out.empty()) {
      for (const auto& s : probe.synapses) out.push_back({s.name, 0, 0, s.fan_out, s.spiking});
      sums.assign(out.size(), 0.0);
      counts.assign(out.size(), 0.0);
    }
    for (std::size_t i = 0; i < probe.synapses.size(); ++i) {
      sums[i] += probe.synapses[i].input_sum;
      counts[i] += static_cast<double>(probe.synapses[i].input_count);
      out[i].spiking = out[i].spiking && probe.synapses[i].spiking;
    }
  }
  const double n = static_cast<double>(std::max<Index>(data.size(), 1));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].rate = counts[i] > 0 ? sums[i] / counts[i] : 0.0;
    out[i].inputs = counts[i] / n;
  }
  return out;
}

EnergyReport energy_from_activity(const std::vector<SynapseActivity>& activity, const EnergyModel& em) {
  em.validate();
  EnergyReport r;
  for (const auto& s : activity) {
    const double fan = static_cast<double>(s.fan_out);
    if (s.spiking)
      r.ac_ops += s.rate * s.inputs * fan;
    else
      r.mac_ops += s.inputs * fan;
  }
  r.ac_pj = em.e_ac * r.ac_ops;
  r.mac_pj = em.e_mac * r.mac_ops;
  r.total_pj = r.ac_pj + r.mac_pj;
  return r;
}

EnergyReport estimate_energy(const Model& m, const Dataset& data, const EnergyModel& em, const Model* reference) {
  EnergyReport r = energy_from_activity(synapse_activity(m, data), em);
  if (reference) {
    const EnergyReport ref = energy_from_activity(synapse_activity(*reference, data), em);
    r.ratio = ref.total_pj > 0 ? r.total_pj / ref.total_pj : 0.0;
  }
  return r;
}

double compression_ratio(double before, double after) {
  if (!(before > 0)) throw ParameterError("compression ratio needs a positive reference count");
  return 100.0 * (1.0 - after / before);
}

std::string CompressionReport::formatted() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f/%.2f", cr_total, cr_st);
  return buf;
}

nlohmann::json CompressionReport::to_json() const {
  return {{"params_before", before.total}, {"params_after", after.total}, {"st_params_before", before.st_blocks},
          {"st_params_after", after.st_blocks}, {"cr_total_pct", cr_total}, {"cr_st_pct", cr_st},
          {"cr", formatted()}};
}

CompressionReport compression_report(const ParamCount& before, const ParamCount& after) {
  CompressionReport r;
  r.before = before;
  r.after = after;
  r.cr_total = compression_ratio(static_cast<double>(before.total), static_cast<double>(after.total));
  r.cr_st = compression_ratio(static_cast<double>(before.st_blocks), static_cast<double>(after.st_blocks));
  return r;
}

CompressionReport compression_report(const Model& before, const Model& after) {
  return compression_report(count_params(before), count_params(after));
}

}  // namespace stlw
