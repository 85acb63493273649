// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vitatt/data.hpp"
#include "vitatt/model.hpp"
#include "vitatt/random.hpp"

namespace vitatt {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  double lr_encoder = 3e-5;
  double lr_other = 1e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;  // throws std::invalid_argument
  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
};

// w_c = N / (C·n_c). Throws std::invalid_argument when a class is empty.
std::vector<double> class_weights(std::span<const std::size_t> labels, std::size_t num_classes);

// Draws sample indices with replacement, P(i) ∝ class_weights[labels[i]].
class WeightedSampler {
 public:
  WeightedSampler(std::span<const std::size_t> labels, std::span<const double> class_weights,
                  std::uint64_t seed);
  std::size_t next();
  std::vector<std::size_t> draw(std::size_t n);

 private:
  std::vector<double> cumulative_;
  Rng rng_;
};

// Bias-corrected Adam with one learning rate per parameter group. Weight decay,
// when nonzero, is added to the gradient (L2). Parameters without a gradient
// are treated as having a zero gradient.
class Adam {
 public:
  Adam(std::vector<NamedTensor> params, const TrainConfig& config);

  void step();
  void zero_grad();
  std::size_t steps() const { return t_; }
  double lr(ParamGroup group) const;

 private:
  std::vector<NamedTensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_encoder_, lr_other_, beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
};

struct ClassMetrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double acc = 0, pre = 0, sen = 0, spe = 0, auc = 0;  // NaN when undefined
};

struct MetricsReport {
  std::vector<std::string> classes;
  std::vector<ClassMetrics> per_class;
  double acc = 0, pre = 0, sen = 0, spe = 0, auc = 0;  // macro averages
  std::size_t samples = 0;

  // Header "metric,model,<classes…>,avg"; one row each for ACC, PRE, SEN,
  // SPE and AUC.
  std::string csv_rows(const std::string& model) const;
  static std::string csv_header(const std::vector<std::string>& classes);
  // class,TP,FP,TN,FN
  std::string confusion_csv() const;
};

// Mann–Whitney AUC of `scores` for positives vs negatives with average ranks
// for ties. NaN when either side is empty.
double auc_mann_whitney(std::span<const double> scores, const std::vector<bool>& positive);

// probs is [N×C] row-major. Hard predictions are the first argmax. PRE is 0
// without predicted positives. SEN and AUC are NaN for a class without
// support, SPE and AUC for a class without negatives; macro averages skip NaN
// with a warning.
MetricsReport compute_metrics(std::span<const std::size_t> labels, std::span<const double> probs,
                              const std::vector<std::string>& classes);

// Per-class and macro metrics averaged over runs, NaN entries skipped.
MetricsReport average_reports(std::span<const MetricsReport> reports);

// Softmax class probabilities [N×C] in eval mode, batched, without a tape.
std::vector<double> predict_proba(VitAttParams& params, const ModelConfig& config,
                                  std::span<const Sample> samples, std::span<const std::size_t> indices,
                                  const MetadataSchema& schema, std::size_t batch_size = 64);

MetricsReport evaluate(VitAttParams& params, const ModelConfig& config, std::span<const Sample> samples,
                       std::span<const std::size_t> indices, const MetadataSchema& schema);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_macro_acc = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  VitAttParams best;    // parameters at best_epoch
  VitAttParams last;    // parameters after the final epoch
  std::size_t best_epoch = 0;
  double best_val_macro_acc = std::numeric_limits<double>::quiet_NaN();
  std::vector<EpochRecord> history;

  // epoch,train_loss,val_macro_acc
  std::string history_csv() const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Weighted cross-entropy with weighted sampling and Adam; ⌈N/batch⌉ batches of
// batch_size draws per epoch. The checkpoint kept is the epoch with the best
// validation macro accuracy, the earlier one on ties (the last epoch when
// there is no validation split). Throws NumericError on a non-finite loss.
TrainResult train(const ModelConfig& config, const TrainConfig& train_config, const Dataset& data,
                  std::span<const std::size_t> train_indices, std::span<const std::size_t> val_indices,
                  const EpochCallback& on_epoch = {});

}  // namespace vitatt
