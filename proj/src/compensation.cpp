#include "stlw/compensation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>

#include "stlw/ops.hpp"
#include "stlw/optimizer.hpp"

namespace stlw {

std::string to_string(TrainMode mode) { return mode == TrainMode::pretrain ? "pretrain" : "finetune"; }
std::string to_string(NeuronKind kind) { return kind == NeuronKind::lif ? "lif" : "slif"; }

NeuronKind parse_neuron_kind(const std::string& text) {
  if (text == "lif") return NeuronKind::lif;
  if (text == "slif") return NeuronKind::slif;
  throw ConfigError("unknown neuron kind '" + text + "' (expected lif or slif)");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (time_steps < 0) throw ConfigError("T must be >= 0");
}

namespace {

std::vector<Index> range(Index begin, Index end) {
  std::vector<Index> out(static_cast<std::size_t>(end - begin));
  std::iota(out.begin(), out.end(), begin);
  return out;
}

int argmax_row(const RowMatrix<float>& logits, Index row) {
  Index best = 0;
  logits.row(row).maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

EvalResult evaluate(const Model& m, const Dataset& data, int batch_size) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  EvalResult r;
  if (data.size() == 0) return r;
  std::map<std::string, std::pair<double, Index>> totals;
  std::vector<std::string> order;
  Index correct = 0;
  double loss_sum = 0;
  for (Index start = 0; start < data.size(); start += batch_size) {
    const auto idx = range(start, std::min<Index>(start + batch_size, data.size()));
    ForwardProbe<float> probe;
    const Tensor<float> logits = model_forward(data.batch(idx), m, &probe);
    const auto labels = data.batch_labels(idx);
    loss_sum += static_cast<double>(cross_entropy(logits, std::span<const int>(labels)).item()) *
                static_cast<double>(idx.size());
    const RowMatrix<float> lm = logits.matrix();
    for (Index i = 0; i < lm.rows(); ++i)
      if (argmax_row(lm, i) == labels[static_cast<std::size_t>(i)]) ++correct;
    for (const auto& layer : probe.layers) {
      auto [it, fresh] = totals.try_emplace(layer.name, 0.0, Index{0});
      if (fresh) order.push_back(layer.name);
      it->second.first += layer.spike_sum;
      it->second.second += layer.count;
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  r.loss = loss_sum / static_cast<double>(data.size());
  double st_spikes = 0, st_count = 0;
  for (const auto& name : order) {
    const auto& [spikes, count] = totals[name];
    r.rates.push_back({name, count ? spikes / static_cast<double>(count) : 0.0});
    if (name.rfind("blocks.", 0) == 0) {
      st_spikes += spikes;
      st_count += static_cast<double>(count);
    }
  }
  r.st_rate = st_count > 0 ? st_spikes / st_count : 0.0;
  return r;
}

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json layers_json = nlohmann::json::array();
  for (const auto& l : layers) layers_json.push_back({{"name", l.name}, {"tau", l.tau}, {"u_th", l.u_th}, {"rate", l.rate}});
  return {{"epoch", epoch},
          {"stage", stage},
          {"lr", learning_rate},
          {"loss", loss},
          {"train_acc", train_accuracy},
          {"test_acc", test_accuracy},
          {"st_rate", st_rate},
          {"layers", layers_json}};
}

EpochRecord EpochRecord::from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.stage = j.at("stage").get<std::string>();
  r.learning_rate = j.at("lr").get<double>();
  r.loss = j.at("loss").get<double>();
  r.train_accuracy = j.at("train_acc").get<double>();
  r.test_accuracy = j.at("test_acc").get<double>();
  r.st_rate = j.at("st_rate").get<double>();
  for (const auto& l : j.at("layers"))
    r.layers.push_back({l.at("name").get<std::string>(), l.at("tau").get<double>(), l.at("u_th").get<double>(),
                        l.at("rate").get<double>()});
  return r;
}

void RunLog::append(EpochRecord record) {
  if (!records_.empty() && record.epoch <= records_.back().epoch)
    throw PreconditionError("run log epochs must strictly increase");
  records_.push_back(std::move(record));
}

std::string RunLog::to_jsonl() const {
  std::string out;
  for (const auto& r : records_) out += r.to_json().dump() + "\n";
  return out;
}

RunLog RunLog::from_jsonl(const std::string& text) {
  RunLog log;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) log.append(EpochRecord::from_json(nlohmann::json::parse(line)));
  return log;
}

void RunLog::write_jsonl(const std::filesystem::path& path) const {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << to_jsonl();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

int RunLog::epochs_to_fraction(double fraction) const {
  if (records_.empty()) return 0;
  const double target = fraction * records_.back().test_accuracy;
  for (const auto& r : records_)
    if (r.test_accuracy >= target - 1e-12) return r.epoch;
  return records_.back().epoch;
}

Model replace_with_slif(const Model& m) {
  Model out = m.clone();
  out.set_intrinsic_learnable(true);
  return out;
}

Model replace_with_lif(const Model& m) {
  Model out = m.clone();
  out.set_intrinsic_learnable(false);
  return out;
}

Model with_neurons(const Model& m, NeuronKind kind) {
  return kind == NeuronKind::slif ? replace_with_slif(m) : replace_with_lif(m);
}

namespace {

EpochRecord snapshot(const Model& m, int epoch, TrainMode mode, double lr, double loss, const EvalResult& train,
                     const EvalResult& test) {
  EpochRecord r;
  r.epoch = epoch;
  r.stage = to_string(mode);
  r.learning_rate = lr;
  r.loss = loss;
  r.train_accuracy = train.accuracy;
  r.test_accuracy = test.accuracy;
  r.st_rate = test.st_rate;
  std::map<std::string, double> rates;
  for (const auto& lr_ : test.rates) rates[lr_.name] = lr_.rate;
  for (const auto& [name, p] : m.neuron_layers())
    r.layers.push_back({name, static_cast<double>(p->tau.item()), static_cast<double>(p->u_th.item()), rates[name]});
  return r;
}

TrainResult train_loop(Model m, const DataSplit& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  m.validate();
  if (cfg.time_steps > 0 && data.train.time_steps != cfg.time_steps)
    throw ConfigError("data has T=" + std::to_string(data.train.time_steps) + " but config expects T=" +
                      std::to_string(cfg.time_steps));
  if (data.train.size() == 0) throw ConfigError("empty training set");

  TrainResult result;
  result.model = m.clone();
  result.last = m.clone();
  if (cfg.epochs == 0) {
    result.best_accuracy = evaluate(m, data.test.size() ? data.test : data.train).accuracy;
    return result;
  }

  AdamWConfig opt_cfg;
  opt_cfg.learning_rate = cfg.learning_rate;
  opt_cfg.weight_decay = cfg.weight_decay;
  AdamW<float> opt(opt_cfg);
  opt.add_params(m.synaptic_weights());
  const auto intrinsic = m.intrinsic_params();
  if (!intrinsic.empty()) opt.add_params(intrinsic, 0.0);

  std::mt19937_64 rng(cfg.seed);
  std::vector<Index> order = range(0, data.train.size());
  Model last_good = m.clone();
  double best = -1;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = cfg.cosine ? 0.5 * cfg.learning_rate *
                                       (1.0 + std::cos(std::numbers::pi * (epoch - 1) / static_cast<double>(cfg.epochs)))
                                 : cfg.learning_rate;
    opt.set_learning_rate(lr);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::span<const Index> idx(order.data() + start,
                                         std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size)));
        const auto labels = data.train.batch_labels(idx);
        Tape<float> tape;
        Tape<float>::Scope scope(tape);
        const Tensor<float> loss = cross_entropy(model_forward(data.train.batch(idx), m), std::span<const int>(labels));
        if (!std::isfinite(loss.item())) throw NonFiniteError("non-finite loss");
        backward(loss);
        opt.step();
        m.enforce_masks();
        m.clamp_intrinsics();
        loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
      }
    } catch (const NonFiniteError& e) {
      throw TrainingDiverged(std::string("training diverged in epoch ") + std::to_string(epoch) + ": " + e.what(),
                             std::move(last_good), epoch - 1);
    }

    const EvalResult train_eval = evaluate(m, data.train);
    const EvalResult test_eval = evaluate(m, data.test.size() ? data.test : data.train);
    EpochRecord rec = snapshot(m, epoch, cfg.mode, lr, loss_sum / static_cast<double>(order.size()), train_eval,
                               test_eval);
    result.log.append(rec);
    last_good = m.clone();
    if (test_eval.accuracy > best) {
      best = test_eval.accuracy;
      result.best_epoch = epoch;
      result.best_accuracy = best;
      result.model = m.clone();
    }
    if (on_epoch) on_epoch(rec, m);
  }
  result.last = std::move(m);
  return result;
}

}  // namespace

TrainResult pretrain(const Model& m, const DataSplit& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  TrainConfig c = cfg;
  c.mode = TrainMode::pretrain;
  return train_loop(replace_with_lif(m), data, c, on_epoch);
}

bool plan_applied(const Model& m, const PrunePlan& plan) {
  if (plan.kind == PruneKind::l1p) {
    if (plan.masks.size() != m.blocks.size()) return false;
    for (std::size_t l = 0; l < m.blocks.size(); ++l)
      for (int i = 0; i < 6; ++i) {
        const auto& mask = m.blocks[l].masks[i];
        const auto& want = plan.masks[l][i];
        if (!mask.defined() || !want.defined() || !(mask.shape() == want.shape())) return false;
        // The model mask may be stricter (earlier masks compose), never looser.
        if (((want.value() == 0.0f) && (mask.value() != 0.0f)).any()) return false;
        if (((mask.value() == 0.0f) && (m.blocks[l].weights[i].value() != 0.0f)).any()) return false;
      }
    return true;
  }
  if (plan.dims.size() != m.blocks.size()) return false;
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    const auto& b = m.blocks[l];
    if (b.attn_dim() != static_cast<Index>(plan.dims[l].ssa.size()) ||
        b.hidden_dim() != static_cast<Index>(plan.dims[l].mlp.size()))
      return false;
  }
  return true;
}

TrainResult finetune(const Model& m, const PrunePlan& plan, const DataSplit& data, const TrainConfig& cfg,
                     const EpochCallback& on_epoch) {
  if (!plan_applied(m, plan)) throw PreconditionError("finetune requires a model with the prune plan applied");
  TrainConfig c = cfg;
  c.mode = TrainMode::finetune;
  return train_loop(m.clone(), data, c, on_epoch);
}

std::string SweepReport::to_csv() const {
  std::ostringstream out;
  out.precision(9);
  out << "kind,p,seed,acc_pruned,acc_lif,acc_slif,epochs_to_95pct\n";
  for (const auto& r : rows)
    out << to_string(r.kind) << ',' << r.p << ',' << r.seed << ',' << r.acc_pruned << ',' << r.acc_lif << ','
        << r.acc_slif << ',' << r.epochs_to_95pct << '\n';
  return out.str();
}

void SweepReport::merge(const SweepReport& other) {
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return std::tie(a.kind, a.p, a.seed) < std::tie(b.kind, b.p, b.seed);
  });
}

SweepReport sparsity_sweep(const Model& baseline, const DataSplit& data, const TrainConfig& cfg,
                           const std::vector<double>& ps, const std::vector<PruneKind>& kinds) {
  SweepReport report;
  const EvalResult base = evaluate(baseline, data.test);
  report.baseline_accuracy = base.accuracy;
  report.baseline_rate = base.st_rate;
  const Model lif_base = replace_with_lif(baseline);
  for (PruneKind kind : kinds)
    for (double p : ps) {
      const PrunePlan plan = kind == PruneKind::l1p ? l1p_plan(lif_base, p) : dsp_plan(lif_base, p);
      const Model pruned = apply_plan(lif_base, plan);
      const EvalResult pe = evaluate(pruned, data.test);
      SweepRow row;
      row.kind = kind;
      row.p = p;
      row.seed = cfg.seed;
      row.acc_pruned = pe.accuracy;
      if (p == 0.0) {
        row.acc_lif = row.acc_slif = pe.accuracy;
        row.rate_lif = row.rate_slif = pe.st_rate;
      } else {
        const TrainResult lif = finetune(replace_with_lif(pruned), plan, data, cfg);
        const TrainResult slif = finetune(replace_with_slif(pruned), plan, data, cfg);
        row.acc_lif = lif.best_accuracy;
        row.acc_slif = slif.best_accuracy;
        row.epochs_to_95pct = slif.log.epochs_to_fraction(0.95);
        row.epochs_to_95pct_lif = lif.log.epochs_to_fraction(0.95);
        row.rate_lif = evaluate(lif.model, data.test).st_rate;
        row.rate_slif = evaluate(slif.model, data.test).st_rate;
      }
      report.rows.push_back(row);
    }
  return report;
}

}  // namespace stlw
