// SPDX-License-Identifier: Apache-2.0
#include "vitatt/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "vitatt/csv.hpp"
#include "vitatt/error.hpp"
#include "vitatt/log.hpp"
#include "vitatt/ops.hpp"

namespace vitatt {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double ratio_or(std::size_t num, std::size_t den, double fallback) {
  return den == 0 ? fallback : static_cast<double>(num) / static_cast<double>(den);
}

// Mean over defined values; NaN if none.
double defined_mean(const std::vector<double>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : v) {
    if (std::isnan(x)) continue;
    s += x;
    ++n;
  }
  return n == 0 ? kNaN : s / static_cast<double>(n);
}

}  // namespace

// ---- config ----

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be at least 1");
  if (batch_size < 2) throw std::invalid_argument("train config: batch_size must be at least 2");
  if (!(lr_encoder >= 0.0) || !(lr_other >= 0.0)) {
    throw std::invalid_argument("train config: learning rates must be non-negative");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
    throw std::invalid_argument("train config: invalid Adam betas/eps");
  }
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train config: weight_decay must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},         {"batch_size", batch_size}, {"lr_encoder", lr_encoder},
          {"lr_other", lr_other},     {"weight_decay", weight_decay}, {"beta1", beta1},
          {"beta2", beta2},           {"eps", eps},               {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "lr_encoder") c.lr_encoder = value.get<double>();
      else if (key == "lr_other") c.lr_other = value.get<double>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "eps") c.eps = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw std::invalid_argument("train config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- sampling ----

std::vector<double> class_weights(std::span<const std::size_t> labels, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t y : labels) {
    if (y >= num_classes) throw std::out_of_range("class_weights: label out of range");
    ++counts[y];
  }
  std::vector<double> w(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) {
      throw std::invalid_argument("class_weights: class " + std::to_string(c) + " has no samples");
    }
    w[c] = static_cast<double>(labels.size()) / (static_cast<double>(num_classes) * static_cast<double>(counts[c]));
  }
  return w;
}

WeightedSampler::WeightedSampler(std::span<const std::size_t> labels, std::span<const double> weights,
                                 std::uint64_t seed)
    : rng_(seed) {
  double total = 0.0;
  cumulative_.reserve(labels.size());
  for (std::size_t y : labels) {
    const double w = weights[y];
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("sampler weights must be finite and >= 0");
    total += w;
    cumulative_.push_back(total);
  }
  if (!(total > 0.0)) throw std::invalid_argument("sampler weights are all zero");
}

std::size_t WeightedSampler::next() {
  const double u = rng_.uniform() * cumulative_.back();
  // first index whose cumulative weight exceeds u; zero-weight entries never win
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  return static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cumulative_.begin(),
                                                           static_cast<std::ptrdiff_t>(cumulative_.size()) - 1));
}

std::vector<std::size_t> WeightedSampler::draw(std::size_t n) {
  std::vector<std::size_t> out(n);
  for (auto& i : out) i = next();
  return out;
}

// ---- Adam ----

Adam::Adam(std::vector<NamedTensor> params, const TrainConfig& c)
    : params_(std::move(params)),
      lr_encoder_(c.lr_encoder),
      lr_other_(c.lr_other),
      beta1_(c.beta1),
      beta2_(c.beta2),
      eps_(c.eps),
      weight_decay_(c.weight_decay) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

double Adam::lr(ParamGroup group) const {
  return group == ParamGroup::kEncoder ? lr_encoder_ : lr_other_;
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k].tensor;
    const double lr = this->lr(params_[k].group);
    auto x = p.mutable_data();
    const bool has = p.has_grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double g = (has ? p.grad()[i] : 0.0) + weight_decay_ * x[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

// ---- metrics ----

double auc_mann_whitney(std::span<const double> scores, const std::vector<bool>& positive) {
  if (positive.size() != scores.size()) throw DimensionError("auc_mann_whitney: length mismatch");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (bool b : positive) n_pos += b;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return kNaN;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // rank sum of positives with average ranks over ties (ranks are 1-based)
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k)
      if (positive[order[k]]) rank_sum += avg_rank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

MetricsReport compute_metrics(std::span<const std::size_t> labels, std::span<const double> probs,
                              const std::vector<std::string>& classes) {
  const std::size_t n = labels.size(), c_count = classes.size();
  if (probs.size() != n * c_count) throw DimensionError("compute_metrics: probs must be [N x C]");
  std::vector<std::size_t> pred(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = probs.subspan(i * c_count, c_count);
    pred[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (labels[i] >= c_count) throw std::out_of_range("compute_metrics: label out of range");
  }
  MetricsReport r;
  r.classes = classes;
  r.samples = n;
  std::vector<double> acc, pre, sen, spe, auc;
  for (std::size_t c = 0; c < c_count; ++c) {
    ClassMetrics m;
    std::vector<double> scores(n);
    std::vector<bool> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      const bool is = labels[i] == c, said = pred[i] == c;
      m.tp += is && said;
      m.fp += !is && said;
      m.fn += is && !said;
      m.tn += !is && !said;
      scores[i] = probs[i * c_count + c];
      pos[i] = is;
    }
    m.acc = ratio_or(m.tp + m.tn, n, kNaN);
    m.pre = ratio_or(m.tp, m.tp + m.fp, 0.0);
    m.sen = ratio_or(m.tp, m.tp + m.fn, kNaN);
    m.spe = ratio_or(m.tn, m.tn + m.fp, kNaN);
    m.auc = auc_mann_whitney(scores, pos);
    if (std::isnan(m.sen) || std::isnan(m.spe)) {
      warn("class '" + classes[c] + "' lacks " + (std::isnan(m.sen) ? "positives" : "negatives") +
           " in the evaluated set; its undefined metrics are excluded from the macro average");
    }
    acc.push_back(m.acc);
    pre.push_back(m.pre);
    sen.push_back(m.sen);
    spe.push_back(m.spe);
    auc.push_back(m.auc);
    r.per_class.push_back(m);
  }
  r.acc = defined_mean(acc);
  r.pre = defined_mean(pre);
  r.sen = defined_mean(sen);
  r.spe = defined_mean(spe);
  r.auc = defined_mean(auc);
  return r;
}

MetricsReport average_reports(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw std::invalid_argument("average_reports: no reports");
  MetricsReport out;
  out.classes = reports[0].classes;
  out.per_class.resize(out.classes.size());
  for (const auto& r : reports) out.samples += r.samples;
  auto mean_of = [&](auto get) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(get(r));
    return defined_mean(v);
  };
  for (std::size_t c = 0; c < out.classes.size(); ++c) {
    ClassMetrics& m = out.per_class[c];
    for (const auto& r : reports) {
      m.tp += r.per_class[c].tp;
      m.fp += r.per_class[c].fp;
      m.tn += r.per_class[c].tn;
      m.fn += r.per_class[c].fn;
    }
    m.acc = mean_of([&](const MetricsReport& r) { return r.per_class[c].acc; });
    m.pre = mean_of([&](const MetricsReport& r) { return r.per_class[c].pre; });
    m.sen = mean_of([&](const MetricsReport& r) { return r.per_class[c].sen; });
    m.spe = mean_of([&](const MetricsReport& r) { return r.per_class[c].spe; });
    m.auc = mean_of([&](const MetricsReport& r) { return r.per_class[c].auc; });
  }
  out.acc = mean_of([](const MetricsReport& r) { return r.acc; });
  out.pre = mean_of([](const MetricsReport& r) { return r.pre; });
  out.sen = mean_of([](const MetricsReport& r) { return r.sen; });
  out.spe = mean_of([](const MetricsReport& r) { return r.spe; });
  out.auc = mean_of([](const MetricsReport& r) { return r.auc; });
  return out;
}

std::string MetricsReport::csv_header(const std::vector<std::string>& classes) {
  std::vector<std::string> h{"metric", "model"};
  h.insert(h.end(), classes.begin(), classes.end());
  h.push_back("avg");
  return csv_line(h) + "\n";
}

std::string MetricsReport::csv_rows(const std::string& model) const {
  auto fmt = [](double v) { return std::isnan(v) ? std::string("nan") : format_double(v); };
  std::string out;
  const std::pair<const char*, double ClassMetrics::*> metrics[] = {
      {"ACC", &ClassMetrics::acc}, {"PRE", &ClassMetrics::pre}, {"SEN", &ClassMetrics::sen},
      {"SPE", &ClassMetrics::spe}, {"AUC", &ClassMetrics::auc}};
  const double macro[] = {acc, pre, sen, spe, auc};
  for (std::size_t k = 0; k < 5; ++k) {
    std::vector<std::string> row{metrics[k].first, model};
    for (const auto& m : per_class) row.push_back(fmt(m.*(metrics[k].second)));
    row.push_back(fmt(macro[k]));
    out += csv_line(row) + "\n";
  }
  return out;
}

std::string MetricsReport::confusion_csv() const {
  std::string out = "class,TP,FP,TN,FN\n";
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const auto& m = per_class[c];
    out += csv_line({classes[c], std::to_string(m.tp), std::to_string(m.fp), std::to_string(m.tn),
                     std::to_string(m.fn)}) +
           "\n";
  }
  return out;
}

// ---- inference ----

std::vector<double> predict_proba(VitAttParams& params, const ModelConfig& config,
                                  std::span<const Sample> samples, std::span<const std::size_t> indices,
                                  const MetadataSchema& schema, std::size_t batch_size) {
  NoGradGuard guard;
  std::vector<double> out;
  out.reserve(indices.size() * config.num_classes);
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto chunk = indices.subspan(start, std::min(batch_size, indices.size() - start));
    const ForwardTrace tr = forward(make_batch(samples, chunk, schema), params, config, Mode::kEval);
    const Tensor probs = softmax_rows(tr.logits);
    out.insert(out.end(), probs.data().begin(), probs.data().end());
  }
  return out;
}

MetricsReport evaluate(VitAttParams& params, const ModelConfig& config, std::span<const Sample> samples,
                       std::span<const std::size_t> indices, const MetadataSchema& schema) {
  const std::vector<double> probs = predict_proba(params, config, samples, indices, schema);
  std::vector<std::size_t> labels;
  labels.reserve(indices.size());
  for (std::size_t i : indices) labels.push_back(samples[i].label);
  return compute_metrics(labels, probs, schema.classes);
}

// ---- training ----

std::string TrainResult::history_csv() const {
  std::string out = "epoch,train_loss,val_macro_acc\n";
  for (const auto& e : history) {
    out += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," +
           (std::isnan(e.val_macro_acc) ? std::string("nan") : format_double(e.val_macro_acc)) + "\n";
  }
  return out;
}

TrainResult train(const ModelConfig& config, const TrainConfig& tc, const Dataset& data,
                  std::span<const std::size_t> train_indices, std::span<const std::size_t> val_indices,
                  const EpochCallback& on_epoch) {
  config.validate();
  tc.validate();
  if (train_indices.empty()) throw DataError("train: empty training split");
  if (!config.image_only && (config.num_metadata_slots != data.schema.num_fields() ||
                             config.metadata_width != data.schema.slot_width())) {
    throw DimensionError("train: model expects " + std::to_string(config.num_metadata_slots) + "x" +
                         std::to_string(config.metadata_width) + " metadata, dataset encodes " +
                         std::to_string(data.schema.num_fields()) + "x" +
                         std::to_string(data.schema.slot_width()));
  }
  const std::size_t classes = config.num_classes;
  if (classes != data.schema.num_classes()) throw DimensionError("train: class count differs from dataset");

  // every random choice of the run derives from this one generator
  Rng run(tc.seed);
  const std::uint64_t init_seed = run.next_u64();
  const std::uint64_t sampler_seed = run.next_u64();

  std::vector<std::size_t> train_labels;
  for (std::size_t i : train_indices) train_labels.push_back(data.samples.at(i).label);
  const std::vector<double> weights = class_weights(train_labels, classes);
  WeightedSampler sampler(train_labels, weights, sampler_seed);

  TrainResult result;
  VitAttParams params = VitAttParams::init(config, init_seed);
  Adam adam(params.named(config), tc);
  const std::size_t batches = (train_indices.size() + tc.batch_size - 1) / tc.batch_size;
  if (val_indices.empty()) warn("train: no validation split; keeping the last epoch");

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<std::size_t> idx, labels;
      for (std::size_t k : sampler.draw(tc.batch_size)) {
        idx.push_back(train_indices[k]);
        labels.push_back(train_labels[k]);
      }
      const Batch batch = make_batch(data.samples, idx, data.schema);
      adam.zero_grad();
      const Tensor loss =
          cross_entropy_weighted(forward(batch, params, config, Mode::kTrain).logits, labels, weights);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("training diverged: loss " + format_double(value) + " at epoch " +
                           std::to_string(epoch) + ", batch " + std::to_string(b + 1));
      }
      backward(loss);
      adam.step();
      loss_sum += value;
    }
    adam.zero_grad();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    if (!val_indices.empty()) {
      ScopedWarningHandler quiet([](const std::string&) {});
      rec.val_macro_acc = evaluate(params, config, data.samples, val_indices, data.schema).acc;
    }
    result.history.push_back(rec);
    const bool better = val_indices.empty() || result.best_epoch == 0 ||
                        rec.val_macro_acc > result.best_val_macro_acc;
    if (better) {
      result.best_epoch = epoch;
      result.best_val_macro_acc = rec.val_macro_acc;
      result.best = params.clone(config);
    }
    if (on_epoch) on_epoch(rec);
  }
  result.last = std::move(params);
  return result;
}

}  // namespace vitatt
