// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "vitatt/error.hpp"
#include "vitatt/log.hpp"
#include "vitatt/project.hpp"
#include "vitatt/random.hpp"
#include "vitatt/synthetic.hpp"

using namespace vitatt;

namespace {

// Gaussian blobs with centers spaced `gap` apart along the first axis.
struct Blobs {
  std::vector<double> x;
  std::vector<std::size_t> labels;
};

Blobs make_blobs(std::size_t per_class, std::size_t classes, std::size_t dim, double gap,
                 double sigma, std::uint64_t seed) {
  Rng rng(seed);
  Blobs b;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t q = 0; q < dim; ++q) {
        const double center = q == 0 ? gap * static_cast<double>(c) : 0.0;
        b.x.push_back(center + sigma * rng.normal());
      }
      b.labels.push_back(c);
    }
  return b;
}

// Random orthogonal matrix by Gram-Schmidt on Gaussian columns.
std::vector<double> random_rotation(std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> q(dim * dim);
  for (auto& v : q) v = rng.normal();
  for (std::size_t c = 0; c < dim; ++c) {
    for (std::size_t prev = 0; prev < c; ++prev) {
      double dot = 0.0;
      for (std::size_t r = 0; r < dim; ++r) dot += q[r * dim + c] * q[r * dim + prev];
      for (std::size_t r = 0; r < dim; ++r) q[r * dim + c] -= dot * q[r * dim + prev];
    }
    double norm = 0.0;
    for (std::size_t r = 0; r < dim; ++r) norm += q[r * dim + c] * q[r * dim + c];
    norm = std::sqrt(norm);
    for (std::size_t r = 0; r < dim; ++r) q[r * dim + c] /= norm;
  }
  return q;
}

double euclid(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t q = 0; q < dim; ++q) s += (a[q] - b[q]) * (a[q] - b[q]);
  return std::sqrt(s);
}

double nearest_centroid_accuracy(const std::vector<double>& y, const std::vector<std::size_t>& labels,
                                 std::size_t classes, std::size_t dim) {
  const std::size_t n = labels.size();
  std::vector<double> cent(classes * dim, 0.0);
  std::vector<double> count(classes, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    count[labels[i]] += 1.0;
    for (std::size_t q = 0; q < dim; ++q) cent[labels[i] * dim + q] += y[i * dim + q];
  }
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t q = 0; q < dim; ++q) cent[c * dim + q] /= count[c];
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (euclid(&y[i * dim], &cent[c * dim], dim) < euclid(&y[i * dim], &cent[best * dim], dim)) best = c;
    hits += best == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

std::size_t kl_increases(const std::vector<double>& kl) {
  std::size_t bumps = 0;
  for (std::size_t t = kl.size() / 2 + 1; t < kl.size(); ++t) bumps += kl[t] > kl[t - 1];
  return bumps;
}

ModelConfig config_for(const Dataset& d) {
  ModelConfig c = ModelConfig::tiny();
  c.num_classes = d.schema.num_classes();
  c.num_metadata_slots = d.schema.num_fields();
  c.metadata_width = d.schema.slot_width();
  return c;
}

SyntheticDataset small_set() {
  SyntheticSpec spec;
  spec.samples_per_class = {6, 6, 6};
  spec.informative_fields = 4;
  spec.seed = 11;
  return generate_synthetic(spec);
}

}  // namespace

TEST_CASE("silhouette: hand-computed line example") {
  // Points 0, 1 | 10, 11 on a line.
  const std::vector<double> x{0.0, 1.0, 10.0, 11.0};
  const std::vector<std::size_t> labels{0, 0, 1, 1};
  // point 0: a=1, b=(10+11)/2; point 1: a=1, b=(9+10)/2; symmetric for the others.
  const double s0 = (10.5 - 1.0) / 10.5, s1 = (9.5 - 1.0) / 9.5;
  CHECK(silhouette(x, 4, 1, labels) == doctest::Approx((2 * s0 + 2 * s1) / 4).epsilon(1e-14));
}

TEST_CASE("silhouette: singleton cluster scores zero") {
  const std::vector<double> x{0.0, 1.0, 5.0};
  const std::vector<std::size_t> labels{0, 0, 7};
  // points 0 and 1: a=1, b=5 and 4; point 2 contributes 0.
  const double expected = ((5.0 - 1.0) / 5.0 + (4.0 - 1.0) / 4.0) / 3.0;
  CHECK(silhouette(x, 3, 1, labels) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("silhouette: distant tight blobs score above 0.9") {
  const Blobs b = make_blobs(50, 2, 8, 100.0, 1.0, 3);
  CHECK(silhouette(b.x, 100, 8, b.labels) > 0.9);
}

TEST_CASE("silhouette: shuffled labels score near zero") {
  const Blobs b = make_blobs(100, 2, 8, 10.0, 1.0, 4);
  std::vector<std::size_t> labels = b.labels;
  Rng rng(5);
  rng.shuffle(labels.begin(), labels.end());
  CHECK(std::abs(silhouette(b.x, 200, 8, labels)) < 0.1);
}

TEST_CASE("silhouette: identical points across two labels score at most zero") {
  const std::vector<double> x(10 * 4, 0.25);
  const std::vector<std::size_t> labels{0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  CHECK(silhouette(x, 10, 4, labels) <= 0.0);
}

TEST_CASE("silhouette: preconditions") {
  const std::vector<double> x{0.0, 1.0, 2.0};
  CHECK_THROWS_AS(silhouette(x, 3, 1, std::vector<std::size_t>{1, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(silhouette(x, 3, 1, std::vector<std::size_t>{0, 1}), DimensionError);
}

TEST_CASE("tsne affinities: symmetric, non-negative, unit mass, calibrated rows") {
  const Blobs b = make_blobs(30, 3, 10, 4.0, 1.0, 7);
  const std::size_t n = 90, dim = 10;
  TsneOptions opt;
  opt.perplexity = 20.0;
  const Affinities aff = tsne_affinities(b.x, n, dim, opt);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(aff.p[i * n + i] == 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      CHECK(aff.p[i * n + j] >= 0.0);
      CHECK(aff.p[i * n + j] == aff.p[j * n + i]);
      total += aff.p[i * n + j];
    }
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(aff.max_entropy_error < 1e-4);

  // Rebuild each conditional row from the returned bandwidth and take its
  // Shannon entropy directly.
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> w;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = euclid(&b.x[i * dim], &b.x[j * dim], dim);
      w.push_back(std::exp(-aff.beta[i] * d * d));
    }
    const double s = std::accumulate(w.begin(), w.end(), 0.0);
    double h = 0.0;
    for (double v : w)
      if (v > 0.0) h -= (v / s) * std::log(v / s);
    CHECK(std::abs(h - std::log(opt.perplexity)) < 1e-4);
  }
}

TEST_CASE("tsne: separated blobs stay separable and KL settles") {
  const Blobs b = make_blobs(50, 2, 16, 10.0, 1.0, 8);
  const TsneResult r = tsne_3d(b.x, 100, 16);
  REQUIRE(r.coords.size() == 300);
  REQUIRE(r.kl.size() == 1000);
  CHECK(nearest_centroid_accuracy(r.coords, b.labels, 2, 3) == 1.0);
  CHECK(kl_increases(r.kl) <= 5);
  CHECK(r.kl.back() < r.kl[250]);
}

TEST_CASE("tsne: symmetric simplex maps to equal distances") {
  // Regular tetrahedron vertices.
  const std::vector<double> x{1, 1, 1, 1, -1, -1, -1, 1, -1, -1, -1, 1};
  TsneOptions opt;
  opt.perplexity = 1.2;
  std::size_t warnings = 0;
  TsneResult r;
  {
    // Every row is equidistant, so calibration cannot reach the target.
    ScopedWarningHandler h([&](const std::string&) { ++warnings; });
    r = tsne_3d(x, 4, 3, opt);
  }
  CHECK(warnings == 1);
  std::vector<double> dist;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j) dist.push_back(euclid(&r.coords[i * 3], &r.coords[j * 3], 3));
  const auto [lo, hi] = std::minmax_element(dist.begin(), dist.end());
  CHECK(*hi / *lo < 1.1);
}

TEST_CASE("tsne: fixed seed is bitwise reproducible") {
  const Blobs b = make_blobs(20, 3, 6, 3.0, 1.0, 9);
  TsneOptions opt;
  opt.perplexity = 10.0;
  opt.iterations = 300;
  opt.seed = 42;
  const TsneResult a = tsne_3d(b.x, 60, 6, opt);
  const TsneResult c = tsne_3d(b.x, 60, 6, opt);
  CHECK(a.coords == c.coords);
  CHECK(a.kl == c.kl);
  opt.seed = 43;
  CHECK(tsne_3d(b.x, 60, 6, opt).coords != a.coords);
}

TEST_CASE("tsne: silhouette of the output is invariant to input rotation") {
  const std::size_t n = 90, dim = 12;
  const Blobs b = make_blobs(30, 3, dim, 3.0, 1.0, 10);
  const std::vector<double> q = random_rotation(dim, 11);
  std::vector<double> rotated(n * dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < dim; ++r)
      for (std::size_t c = 0; c < dim; ++c) rotated[i * dim + r] += q[r * dim + c] * b.x[i * dim + c];
  TsneOptions opt;
  opt.perplexity = 20.0;
  const double s0 = silhouette(tsne_3d(b.x, n, dim, opt).coords, n, 3, b.labels);
  const double s1 = silhouette(tsne_3d(rotated, n, dim, opt).coords, n, 3, b.labels);
  CHECK(std::abs(s0 - s1) < 0.05);
}

TEST_CASE("tsne: exact duplicates are jittered") {
  Blobs b = make_blobs(10, 2, 5, 5.0, 1.0, 12);
  const std::vector<double> copy = b.x;
  b.x.insert(b.x.end(), copy.begin(), copy.end());
  TsneOptions opt;
  opt.perplexity = 5.0;
  opt.iterations = 200;
  const Affinities aff = tsne_affinities(b.x, 40, 5, opt);
  CHECK(aff.jittered == 20);
  CHECK(aff.max_entropy_error < 1e-4);
  const TsneResult r = tsne_3d(b.x, 40, 5, opt);
  CHECK(std::all_of(r.coords.begin(), r.coords.end(), [](double v) { return std::isfinite(v); }));
}

TEST_CASE("tsne: preconditions") {
  const std::vector<double> x(3 * 2, 0.5);
  CHECK_THROWS_AS(tsne_3d(x, 3, 2), std::invalid_argument);
  const Blobs b = make_blobs(10, 3, 4, 3.0, 1.0, 13);
  TsneOptions opt;
  opt.perplexity = 10.0;  // N/3 = 10
  CHECK_THROWS_AS(tsne_3d(b.x, 30, 4, opt), std::invalid_argument);
  opt.perplexity = 5.0;
  std::vector<double> bad = b.x;
  bad[7] = std::nan("");
  CHECK_THROWS_AS(tsne_3d(bad, 30, 4, opt), NumericError);
  CHECK_THROWS_AS(tsne_3d(b.x, 30, 5, opt), DimensionError);
}

TEST_CASE("collect_embeddings: one row per sample in index order") {
  const SyntheticDataset syn = small_set();
  const ModelConfig config = config_for(syn.dataset);
  VitAttParams params = VitAttParams::init(config, 1);
  const std::vector<std::size_t> idx{5, 0, 17, 3, 9};
  const EmbeddingPair e = collect_embeddings(params, config, syn.dataset.samples, idx, syn.dataset.schema, 2);
  for (const EmbeddingSet* s : {&e.pre, &e.post}) {
    CHECK(s->rows() == 5);
    CHECK(s->dim == config.embed_dim);
    CHECK(s->vectors.size() == 5 * config.embed_dim);
    for (std::size_t r = 0; r < 5; ++r) {
      CHECK(s->ids[r] == syn.dataset.samples[idx[r]].id);
      CHECK(s->labels[r] == syn.dataset.samples[idx[r]].label);
    }
  }
  CHECK(e.pre.stage == Stage::kPreFusion);
  CHECK(e.post.stage == Stage::kPostFusion);
  // Batch size does not change the rows.
  const EmbeddingPair whole = collect_embeddings(params, config, syn.dataset.samples, idx, syn.dataset.schema);
  CHECK(whole.post.vectors == e.post.vectors);
}

TEST_CASE("collect_embeddings: zeroed fusion output projection leaves pre == post") {
  const SyntheticDataset syn = small_set();
  const ModelConfig config = config_for(syn.dataset);
  VitAttParams params = VitAttParams::init(config, 2);
  for (auto& v : params.fusion.wo.mutable_data()) v = 0.0;
  for (auto& v : params.fusion.bo.mutable_data()) v = 0.0;
  std::vector<std::size_t> idx(syn.dataset.samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  const EmbeddingPair e = collect_embeddings(params, config, syn.dataset.samples, idx, syn.dataset.schema);
  CHECK(e.pre.vectors == e.post.vectors);
}

TEST_CASE("collect_embeddings: metadata perturbation moves post but not pre") {
  const SyntheticDataset syn = small_set();
  const ModelConfig config = config_for(syn.dataset);
  VitAttParams params = VitAttParams::init(config, 3);
  std::vector<Sample> samples = syn.dataset.samples;
  const std::vector<std::size_t> idx{0};
  const EmbeddingPair before = collect_embeddings(params, config, samples, idx, syn.dataset.schema);
  const MetadataSchema& schema = syn.dataset.schema;
  const FieldSpec& field = schema.fields[0];
  double& v = samples[0].metadata[0];
  if (field.kind == FieldKind::kContinuous) {
    v = v > 0.5 * (field.min + field.max) ? field.min : field.max;
  } else if (field.kind == FieldKind::kBinary) {
    v = v == 1.0 ? 0.0 : 1.0;
  } else {
    v = v == 0.0 ? 1.0 : 0.0;
  }
  const EmbeddingPair after = collect_embeddings(params, config, samples, idx, schema);
  CHECK(after.pre.vectors == before.pre.vectors);
  double moved = 0.0;
  for (std::size_t i = 0; i < after.post.vectors.size(); ++i)
    moved = std::max(moved, std::abs(after.post.vectors[i] - before.post.vectors[i]));
  CHECK(moved > 1e-9);
}

TEST_CASE("collect_embeddings: image-only model has identical stages") {
  const SyntheticDataset syn = small_set();
  ModelConfig config = config_for(syn.dataset);
  config.image_only = true;
  VitAttParams params = VitAttParams::init(config, 4);
  const std::vector<std::size_t> idx{1, 2, 3};
  const EmbeddingPair e = collect_embeddings(params, config, syn.dataset.samples, idx, syn.dataset.schema);
  CHECK(e.pre.vectors == e.post.vectors);
}

TEST_CASE("projection_csv layout") {
  EmbeddingSet s;
  s.stage = Stage::kPostFusion;
  s.dim = 2;
  s.vectors = {0, 0, 1, 1};
  s.labels = {1, 0};
  s.ids = {"a", "b,c"};
  const std::vector<double> coords{0.5, 1, -2, 3, 4, 5};
  CHECK(projection_csv(s, coords, {"neg", "pos"}) ==
        "id,x,y,z,label,stage\na,0.5,1,-2,pos,post_fusion\n\"b,c\",3,4,5,neg,post_fusion\n");
  CHECK(projection_csv(s, coords, {"neg", "pos"}, false).rfind("a,", 0) == 0);
  CHECK_THROWS_AS(projection_csv(s, std::vector<double>{1, 2}, {}), DimensionError);
}
