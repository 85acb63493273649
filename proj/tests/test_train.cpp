// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>
#include <numeric>

#include "doctest.h"
#include "vitatt/checkpoint.hpp"
#include "vitatt/error.hpp"
#include "vitatt/log.hpp"
#include "vitatt/synthetic.hpp"
#include "vitatt/train.hpp"

using namespace vitatt;

namespace {

struct Oracle {
  std::vector<std::size_t> tp, fp, tn, fn;
  std::vector<double> auc;
};

// Confusion counts by explicit enumeration and AUC by counting every
// (positive, negative) pair, ties contributing one half.
Oracle brute_force(const std::vector<std::size_t>& labels, const std::vector<double>& probs, std::size_t c_count) {
  const std::size_t n = labels.size();
  Oracle o{std::vector<std::size_t>(c_count), std::vector<std::size_t>(c_count),
           std::vector<std::size_t>(c_count), std::vector<std::size_t>(c_count), {}};
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t pred = 0;
    for (std::size_t c = 1; c < c_count; ++c)
      if (probs[i * c_count + c] > probs[i * c_count + pred]) pred = c;
    for (std::size_t c = 0; c < c_count; ++c) {
      if (labels[i] == c && pred == c) ++o.tp[c];
      if (labels[i] != c && pred == c) ++o.fp[c];
      if (labels[i] != c && pred != c) ++o.tn[c];
      if (labels[i] == c && pred != c) ++o.fn[c];
    }
  }
  for (std::size_t c = 0; c < c_count; ++c) {
    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] != c) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (labels[j] == c) continue;
        ++pairs;
        const double a = probs[i * c_count + c], b = probs[j * c_count + c];
        wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
      }
    }
    o.auc.push_back(pairs ? wins / static_cast<double>(pairs) : std::nan(""));
  }
  return o;
}

SyntheticDataset overfit_set(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.samples_per_class = {50, 50, 50};
  spec.informative_fields = 4;
  spec.seed = seed;
  return generate_synthetic(spec);
}

ModelConfig config_for(const Dataset& d) {
  ModelConfig c = ModelConfig::tiny();
  c.num_classes = d.schema.num_classes();
  c.num_metadata_slots = d.schema.num_fields();
  c.metadata_width = d.schema.slot_width();
  return c;
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

TEST_CASE("class_weights") {
  CHECK(class_weights(std::vector<std::size_t>{0, 1, 2, 0, 1, 2}, 3) == std::vector<double>{1.0, 1.0, 1.0});
  const std::vector<std::size_t> labels{0, 0, 0, 1};
  const auto w = class_weights(labels, 2);
  CHECK(w[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(w[1] == 2.0);
  double mean = 0.0;
  for (std::size_t y : labels) mean += w[y];
  CHECK(mean / 4.0 == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(class_weights(std::vector<std::size_t>{0, 0}, 2), std::invalid_argument);
}

TEST_CASE("weighted sampler statistics") {
  // 60/30/10 class mix
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 100; ++i) labels.push_back(i < 60 ? 0 : (i < 90 ? 1 : 2));
  const std::size_t n = 10000;
  auto frequencies = [&](const std::vector<double>& w, std::uint64_t seed) {
    WeightedSampler s(labels, w, seed);
    std::vector<double> f(3, 0.0);
    for (std::size_t i : s.draw(n)) f[labels[i]] += 1.0;
    return f;
  };
  auto within_3_sigma = [&](const std::vector<double>& counts, const std::vector<double>& p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double sigma = std::sqrt(static_cast<double>(n) * p[c] * (1.0 - p[c]));
      CHECK(std::abs(counts[c] - static_cast<double>(n) * p[c]) <= 3.0 * sigma);
    }
  };
  within_3_sigma(frequencies({1.0, 1.0, 1.0}, 1), {0.6, 0.3, 0.1});
  within_3_sigma(frequencies(class_weights(labels, 3), 2), {1.0 / 3, 1.0 / 3, 1.0 / 3});
  const auto only = frequencies({0.0, 1.0, 0.0}, 3);
  CHECK(only[1] == static_cast<double>(n));

  WeightedSampler a(labels, std::vector<double>{1, 2, 3}, 9), b(labels, std::vector<double>{1, 2, 3}, 9);
  CHECK(a.draw(500) == b.draw(500));
  CHECK_THROWS_AS(WeightedSampler(labels, std::vector<double>{0, 0, 0}, 1), std::invalid_argument);
}

TEST_CASE("Adam") {
  TrainConfig tc;
  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor p({3}, {0.5, -1.0, 2.0}, true);
    p.mutable_grad();  // zeros
    Adam adam({{"p", p, ParamGroup::kOther}}, tc);
    for (int i = 0; i < 5; ++i) adam.step();
    CHECK(std::vector<double>(p.data().begin(), p.data().end()) == std::vector<double>{0.5, -1.0, 2.0});
  }
  SUBCASE("first step on a unit gradient moves by the learning rate") {
    tc.lr_other = 0.1;
    Tensor p({1}, {0.0}, true);
    p.mutable_grad()[0] = 1.0;
    Adam adam({{"p", p, ParamGroup::kOther}}, tc);
    adam.step();
    CHECK(p.at(0) == doctest::Approx(-0.1).epsilon(1e-7));
    CHECK(p.at(0) == -0.1 / (1.0 + 1e-8));
  }
  SUBCASE("parameter groups use their own rates") {
    Tensor enc({1}, {0.0}, true), head({1}, {0.0}, true);
    enc.mutable_grad()[0] = 1.0;
    head.mutable_grad()[0] = 1.0;
    Adam adam({{"enc", enc, ParamGroup::kEncoder}, {"head", head, ParamGroup::kOther}}, tc);
    adam.step();
    CHECK(enc.at(0) == doctest::Approx(-3e-5).epsilon(1e-7));
    CHECK(head.at(0) == doctest::Approx(-1e-4).epsilon(1e-7));
  }
}

TEST_CASE("metrics against brute-force oracles") {
  Rng rng(21);
  const std::vector<std::string> classes{"a", "b", "c", "d"};
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 5 + rng.below(60);
    std::vector<std::size_t> labels(n);
    std::vector<double> probs(n * 4);
    for (auto& y : labels) y = rng.below(4);
    // coarse scores so ties occur
    for (auto& p : probs) p = static_cast<double>(rng.below(8)) / 8.0;
    ScopedWarningHandler quiet([](const std::string&) {});
    const MetricsReport r = compute_metrics(labels, probs, classes);
    const Oracle o = brute_force(labels, probs, 4);
    for (std::size_t c = 0; c < 4; ++c) {
      const auto& m = r.per_class[c];
      CHECK(m.tp == o.tp[c]);
      CHECK(m.fp == o.fp[c]);
      CHECK(m.tn == o.tn[c]);
      CHECK(m.fn == o.fn[c]);
      if (std::isnan(o.auc[c])) CHECK(std::isnan(m.auc));
      else CHECK(std::abs(m.auc - o.auc[c]) < 1e-9);
      if (m.tp + m.fn > 0) CHECK(m.sen + static_cast<double>(m.fn) / static_cast<double>(m.tp + m.fn) == doctest::Approx(1.0).epsilon(1e-15));
    }
  }
}

TEST_CASE("metric examples and invariants") {
  const std::vector<std::string> two{"neg", "pos"};
  SUBCASE("perfect predictions") {
    const std::vector<std::size_t> y{0, 1, 0, 1};
    const std::vector<double> p{0.9, 0.1, 0.2, 0.8, 0.7, 0.3, 0.4, 0.6};
    const MetricsReport r = compute_metrics(y, p, two);
    for (double v : {r.acc, r.pre, r.sen, r.spe, r.auc}) CHECK(v == 1.0);
  }
  SUBCASE("all-one-class predictor") {
    const std::vector<std::size_t> y{0, 1, 0, 1};
    const std::vector<double> p{0.9, 0.1, 0.8, 0.2, 0.7, 0.3, 0.6, 0.4};
    const MetricsReport r = compute_metrics(y, p, two);
    CHECK(r.per_class[0].sen == 1.0);
    CHECK(r.per_class[1].sen == 0.0);
    CHECK(r.per_class[0].acc == 0.5);
    CHECK(r.per_class[1].acc == 0.5);
    CHECK(r.per_class[1].pre == 0.0);
  }
  SUBCASE("absent class is NaN and excluded from the macro average") {
    const std::vector<std::size_t> y{0, 0, 1, 1};
    const std::vector<double> p{0.8, 0.1, 0.1, 0.2, 0.5, 0.3, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4};
    std::vector<std::string> warnings;
    ScopedWarningHandler h([&](const std::string& w) { warnings.push_back(w); });
    const MetricsReport r = compute_metrics(y, p, {"a", "b", "c"});
    CHECK(std::isnan(r.per_class[2].sen));
    CHECK(std::isnan(r.per_class[2].auc));
    CHECK(warnings.size() == 1);
    CHECK(r.sen == (r.per_class[0].sen + r.per_class[1].sen) / 2.0);
    CHECK(r.acc == (r.per_class[0].acc + r.per_class[1].acc + r.per_class[2].acc) / 3.0);
  }
  SUBCASE("AUC is unchanged by strictly monotone transforms") {
    Rng rng(4);
    std::vector<std::size_t> y(300);
    std::vector<double> p(900), q(900);
    for (auto& v : y) v = rng.below(3);
    for (std::size_t i = 0; i < 900; ++i) {
      p[i] = static_cast<double>(rng.below(50)) / 50.0;
      q[i] = std::exp(3.0 * p[i]) - 7.0;
    }
    const MetricsReport a = compute_metrics(y, p, {"a", "b", "c"}), b = compute_metrics(y, q, {"a", "b", "c"});
    for (std::size_t c = 0; c < 3; ++c) CHECK(a.per_class[c].auc == b.per_class[c].auc);
  }
  SUBCASE("hard metrics ignore the softmax temperature") {
    Rng rng(5);
    std::vector<std::size_t> y(200);
    std::vector<double> logits(600);
    for (auto& v : y) v = rng.below(3);
    for (auto& v : logits) v = rng.normal();
    auto softmax_t = [&](double t) {
      std::vector<double> out(600);
      for (std::size_t i = 0; i < 200; ++i) {
        double mx = std::max({logits[3 * i], logits[3 * i + 1], logits[3 * i + 2]}), z = 0.0;
        for (std::size_t c = 0; c < 3; ++c) z += out[3 * i + c] = std::exp((logits[3 * i + c] - mx) / t);
        for (std::size_t c = 0; c < 3; ++c) out[3 * i + c] /= z;
      }
      return out;
    };
    const MetricsReport a = compute_metrics(y, softmax_t(1.0), {"a", "b", "c"});
    const MetricsReport b = compute_metrics(y, softmax_t(0.3), {"a", "b", "c"});
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(a.per_class[c].acc == b.per_class[c].acc);
      CHECK(a.per_class[c].pre == b.per_class[c].pre);
      CHECK(a.per_class[c].sen == b.per_class[c].sen);
      CHECK(a.per_class[c].spe == b.per_class[c].spe);
    }
  }
  SUBCASE("CSV layout") {
    const std::vector<std::size_t> y{0, 1};
    const std::vector<double> p{0.9, 0.1, 0.2, 0.8};
    const MetricsReport r = compute_metrics(y, p, two);
    CHECK(MetricsReport::csv_header(two) == "metric,model,neg,pos,avg\n");
    CHECK(r.csv_rows("vitatt").rfind("ACC,vitatt,1,1,1\nPRE,vitatt,1,1,1\n", 0) == 0);
    CHECK(r.confusion_csv() == "class,TP,FP,TN,FN\nneg,1,0,1,0\npos,1,0,1,0\n");
    const MetricsReport reports[] = {r, r};
    CHECK(average_reports(reports).acc == 1.0);
  }
}

TEST_CASE("training loop") {
  const SyntheticDataset syn = overfit_set(1);
  const Dataset& d = syn.dataset;
  const ModelConfig cfg = config_for(d);
  const auto all = iota_n(d.samples.size());
  ScopedWarningHandler quiet([](const std::string&) {});

  SUBCASE("loss decreases over the first 10 epochs") {
    TrainConfig tc;
    tc.epochs = 10;
    tc.seed = 3;
    const TrainResult r = train(cfg, tc, d, all, all);
    REQUIRE(r.history.size() == 10);
    int rises = 0;
    for (std::size_t e = 1; e < 10; ++e) rises += r.history[e].train_loss >= r.history[e - 1].train_loss;
    CHECK(rises <= 2);
    CHECK(r.history.back().train_loss < r.history.front().train_loss);
  }
  SUBCASE("zero learning rate leaves parameters and loss unchanged") {
    TrainConfig tc;
    tc.epochs = 2;
    tc.lr_encoder = 0.0;
    tc.lr_other = 0.0;
    tc.seed = 4;
    const TrainResult r = train(cfg, tc, d, all, all);
    Rng run(tc.seed);
    VitAttParams init = VitAttParams::init(cfg, run.next_u64());
    const auto a = init.named(cfg), b = r.last.named(cfg);
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK(std::memcmp(a[i].tensor.data().data(), b[i].tensor.data().data(), a[i].tensor.numel() * 8) == 0);
    VitAttParams last = r.last.clone(cfg);
    const std::vector<std::size_t> idx{0, 50, 100, 7};
    const std::vector<std::size_t> labels{d.samples[0].label, d.samples[50].label, d.samples[100].label, d.samples[7].label};
    const std::vector<double> w{1.0, 1.0, 1.0};
    NoGradGuard g;
    const double l0 = cross_entropy_weighted(forward(make_batch(d.samples, idx, d.schema), init, cfg, Mode::kTrain).logits, labels, w).item();
    const double l1 = cross_entropy_weighted(forward(make_batch(d.samples, idx, d.schema), last, cfg, Mode::kTrain).logits, labels, w).item();
    CHECK(l0 == l1);
  }
  SUBCASE("same seed gives identical history and checkpoint bytes") {
    TrainConfig tc;
    tc.epochs = 3;
    tc.seed = 5;
    const TrainResult a = train(cfg, tc, d, all, all), b = train(cfg, tc, d, all, all);
    CHECK(a.history_csv() == b.history_csv());
    CHECK(serialize_checkpoint(cfg, a.best) == serialize_checkpoint(cfg, b.best));
    tc.seed = 6;
    CHECK(train(cfg, tc, d, all, all).history_csv() != a.history_csv());
  }
  SUBCASE("best epoch follows validation accuracy, earlier on ties") {
    TrainConfig tc;
    tc.epochs = 6;
    tc.seed = 7;
    const TrainResult r = train(cfg, tc, d, all, all);
    double best = -1.0;
    std::size_t epoch = 0;
    for (const auto& e : r.history)
      if (e.val_macro_acc > best) {
        best = e.val_macro_acc;
        epoch = e.epoch;
      }
    CHECK(r.best_epoch == epoch);
    CHECK(r.best_val_macro_acc == best);
    VitAttParams copy = r.best.clone(cfg);
    CHECK(evaluate(copy, cfg, d.samples, all, d.schema).acc == best);
  }
  SUBCASE("non-finite loss aborts") {
    Dataset bad = d;
    std::vector<double> px(bad.samples[0].image.data().begin(), bad.samples[0].image.data().end());
    for (auto& v : px) v = std::nan("");
    for (auto& s : bad.samples) s.image = Tensor(s.image.shape(), px);
    TrainConfig tc;
    tc.epochs = 1;
    CHECK_THROWS_AS(train(cfg, tc, bad, all, all), NumericError);
  }
  SUBCASE("config validation") {
    TrainConfig tc;
    tc.epochs = 0;
    CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
    CHECK_THROWS_AS(TrainConfig::from_json({{"epochz", 3}}), std::invalid_argument);
    TrainConfig j = TrainConfig::from_json(TrainConfig{}.to_json());
    CHECK(j.lr_encoder == 3e-5);
    CHECK(j.lr_other == 1e-4);
    CHECK(j.epochs == 200);
    CHECK(j.batch_size == 16);
  }
}
