// SPDX-License-Identifier: Apache-2.0
#include "vitatt/project.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "vitatt/csv.hpp"
#include "vitatt/error.hpp"
#include "vitatt/kernels.hpp"
#include "vitatt/log.hpp"
#include "vitatt/random.hpp"
#include "vitatt/tensor.hpp"

namespace vitatt {

std::string_view stage_name(Stage stage) {
  return stage == Stage::kPreFusion ? "pre_fusion" : "post_fusion";
}

EmbeddingPair collect_embeddings(VitAttParams& params, const ModelConfig& config,
                                 std::span<const Sample> samples,
                                 std::span<const std::size_t> indices,
                                 const MetadataSchema& schema, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("collect_embeddings: batch_size must be positive");
  NoGradGuard guard;
  EmbeddingPair out;
  out.pre.stage = Stage::kPreFusion;
  out.post.stage = Stage::kPostFusion;
  out.pre.dim = out.post.dim = config.embed_dim;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto chunk = indices.subspan(start, std::min(batch_size, indices.size() - start));
    const ForwardTrace tr = forward(make_batch(samples, chunk, schema), params, config, Mode::kEval);
    const auto pre = tr.pre_fusion_cls.data();
    const auto post = tr.post_fusion_cls.data();
    out.pre.vectors.insert(out.pre.vectors.end(), pre.begin(), pre.end());
    out.post.vectors.insert(out.post.vectors.end(), post.begin(), post.end());
    for (std::size_t i : chunk) {
      for (EmbeddingSet* s : {&out.pre, &out.post}) {
        s->labels.push_back(samples[i].label);
        s->ids.push_back(samples[i].id);
      }
    }
  }
  return out;
}

void TsneOptions::validate(std::size_t n) const {
  if (n < 4) throw std::invalid_argument("tsne: need at least 4 points, got " + std::to_string(n));
  if (!(perplexity > 0.0) || !(perplexity < static_cast<double>(n) / 3.0)) {
    throw std::invalid_argument("tsne: perplexity must lie in (0, N/3) for N=" + std::to_string(n));
  }
  if (!(exaggeration >= 1.0) || !(learning_rate > 0.0) || !(min_gain > 0.0) || !(init_stddev > 0.0) ||
      !(entropy_tolerance > 0.0)) {
    throw std::invalid_argument("tsne: invalid optimizer settings");
  }
}

namespace {

constexpr double kDuplicateJitter = 1e-10;
constexpr int kMaxBisection = 200;

std::vector<double> transpose(std::span<const double> x, std::size_t n, std::size_t dim) {
  std::vector<double> t(n * dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t q = 0; q < dim; ++q) t[q * n + i] = x[i * dim + q];
  return t;
}

// Returns |H − target| after calibrating row i in place.
double calibrate_row(std::span<const double> d, std::size_t i, double target, double tolerance,
                     double& beta, std::span<double> row) {
  const std::size_t n = d.size();
  double dmin = std::numeric_limits<double>::infinity(), dsum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    dmin = std::min(dmin, d[j]);
  }
  for (std::size_t j = 0; j < n; ++j)
    if (j != i) dsum += d[j] - dmin;
  beta = dsum > 0.0 ? static_cast<double>(n - 1) / dsum : 1.0;
  double lo = 0.0, hi = std::numeric_limits<double>::infinity();
  double err = std::numeric_limits<double>::infinity();
  for (int it = 0; it < kMaxBisection; ++it) {
    double s = 0.0, sd = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) {
        row[j] = 0.0;
        continue;
      }
      const double shifted = d[j] - dmin;
      row[j] = std::exp(-beta * shifted);
      s += row[j];
      sd += shifted * row[j];
    }
    const double h = std::log(s) + beta * sd / s;
    err = std::abs(h - target);
    for (std::size_t j = 0; j < n; ++j) row[j] /= s;
    if (err < tolerance) break;
    if (h > target) {
      lo = beta;
      beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
    } else {
      hi = beta;
      beta = 0.5 * (beta + lo);
    }
  }
  return err;
}

}  // namespace

Affinities tsne_affinities(std::span<const double> points, std::size_t n, std::size_t dim,
                           const TsneOptions& options) {
  options.validate(n);
  if (points.size() != n * dim) throw DimensionError("tsne: points size does not match N×dim");
  for (double v : points)
    if (!std::isfinite(v)) throw NumericError("tsne: non-finite input coordinate");

  std::vector<double> x(points.begin(), points.end());
  std::vector<double> d(n * n);
  kernels::pairwise_sq_dists(n, dim, transpose(x, n, dim), d);

  Affinities out;
  Rng jitter_rng(options.seed ^ 0x6a09e667f3bcc909ULL);
  for (std::size_t i = 1; i < n; ++i) {
    bool duplicate = false;
    for (std::size_t j = 0; j < i && !duplicate; ++j) duplicate = d[i * n + j] == 0.0;
    if (!duplicate) continue;
    for (std::size_t q = 0; q < dim; ++q) x[i * dim + q] += kDuplicateJitter * jitter_rng.normal();
    ++out.jittered;
  }
  if (out.jittered > 0) kernels::pairwise_sq_dists(n, dim, transpose(x, n, dim), d);

  std::vector<double> cond(n * n);
  out.beta.assign(n, 1.0);
  const double target = std::log(options.perplexity);
  std::size_t unconverged = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double err = calibrate_row(std::span<const double>(d).subspan(i * n, n), i, target,
                                     options.entropy_tolerance, out.beta[i],
                                     std::span<double>(cond).subspan(i * n, n));
    out.max_entropy_error = std::max(out.max_entropy_error, err);
    if (!(err < options.entropy_tolerance)) ++unconverged;
  }
  // Equidistant neighbourhoods have an entropy that no bandwidth can move.
  if (unconverged > 0) {
    warn("tsne: perplexity calibration missed the target for " + std::to_string(unconverged) +
         " point(s), max entropy error " + format_double(out.max_entropy_error));
  }

  out.p.assign(n * n, 0.0);
  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out.p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) * scale;
  return out;
}

TsneResult tsne_3d(std::span<const double> points, std::size_t n, std::size_t dim,
                   const TsneOptions& options) {
  constexpr std::size_t k = 3;
  const Affinities aff = tsne_affinities(points, n, dim, options);
  const std::vector<double>& p = aff.p;

  TsneResult out;
  out.max_entropy_error = aff.max_entropy_error;
  out.kl.reserve(options.iterations);

  Rng rng(options.seed);
  std::vector<double> y(n * k);
  for (auto& v : y) v = options.init_stddev * rng.normal();
  std::vector<double> update(n * k, 0.0), gains(n * k, 1.0), grad(n * k);
  std::vector<double> d(n * n), num(n * n);

  for (std::size_t it = 0; it < options.iterations; ++it) {
    const bool early = it < options.exaggeration_iterations;
    const double ex = early ? options.exaggeration : 1.0;
    const double momentum = early ? options.initial_momentum : options.final_momentum;

    kernels::pairwise_sq_dists(n, k, transpose(y, n, k), d);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double v = i == j ? 0.0 : 1.0 / (1.0 + d[i * n + j]);
        num[i * n + j] = v;
        z += v;
      }

    double kl = 0.0;
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double pij = p[i * n + j];
        const double q = std::max(num[i * n + j] / z, std::numeric_limits<double>::min());
        if (pij > 0.0) kl += pij * std::log(pij / q);
        const double coef = 4.0 * (ex * pij - num[i * n + j] / z) * num[i * n + j];
        for (std::size_t c = 0; c < k; ++c) grad[i * k + c] += coef * (y[i * k + c] - y[j * k + c]);
      }
    }
    out.kl.push_back(kl);

    for (std::size_t e = 0; e < n * k; ++e) {
      const bool same_sign = (grad[e] > 0.0) == (update[e] > 0.0);
      gains[e] = same_sign ? gains[e] * 0.8 : gains[e] + 0.2;
      gains[e] = std::max(gains[e], options.min_gain);
      update[e] = momentum * update[e] - options.learning_rate * gains[e] * grad[e];
      y[e] += update[e];
    }
    for (std::size_t c = 0; c < k; ++c) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += y[i * k + c];
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) y[i * k + c] -= mean;
    }
    if (!std::isfinite(kl) || !std::all_of(y.begin(), y.end(), [](double v) { return std::isfinite(v); })) {
      throw NumericError("tsne: diverged at iteration " + std::to_string(it));
    }
  }
  out.coords = std::move(y);
  return out;
}

TsneResult tsne_3d(const EmbeddingSet& set, const TsneOptions& options) {
  return tsne_3d(set.vectors, set.rows(), set.dim, options);
}

double silhouette(std::span<const double> points, std::size_t n, std::size_t dim,
                  std::span<const std::size_t> labels) {
  if (points.size() != n * dim || labels.size() != n) {
    throw DimensionError("silhouette: points/labels size mismatch");
  }
  std::map<std::size_t, std::size_t> cluster_of;
  for (std::size_t l : labels) cluster_of.emplace(l, 0);
  if (cluster_of.size() < 2) throw std::invalid_argument("silhouette: need at least two labels");
  std::size_t next = 0;
  for (auto& [label, idx] : cluster_of) idx = next++;
  const std::size_t c = cluster_of.size();
  std::vector<std::size_t> cl(n), size(c, 0);
  for (std::size_t i = 0; i < n; ++i) ++size[cl[i] = cluster_of[labels[i]]];

  std::vector<double> d(n * n);
  kernels::pairwise_sq_dists(n, dim, transpose(points, n, dim), d);

  double total = 0.0;
  std::vector<double> sums(c);
  for (std::size_t i = 0; i < n; ++i) {
    if (size[cl[i]] < 2) continue;
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sums[cl[j]] += std::sqrt(d[i * n + j]);
    const double a = sums[cl[i]] / static_cast<double>(size[cl[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < c; ++k)
      if (k != cl[i]) b = std::min(b, sums[k] / static_cast<double>(size[k]));
    const double m = std::max(a, b);
    if (m > 0.0) total += (b - a) / m;
  }
  return total / static_cast<double>(n);
}

std::string projection_csv(const EmbeddingSet& set, std::span<const double> coords,
                           const std::vector<std::string>& class_names, bool header) {
  if (coords.size() != set.rows() * 3) throw DimensionError("projection_csv: expected N×3 coordinates");
  std::string out = header ? "id,x,y,z,label,stage\n" : "";
  const std::string stage(stage_name(set.stage));
  for (std::size_t i = 0; i < set.rows(); ++i) {
    const std::size_t l = set.labels[i];
    const std::string label = l < class_names.size() ? class_names[l] : std::to_string(l);
    const std::string id = i < set.ids.size() ? set.ids[i] : std::to_string(i);
    out += csv_line({id, format_double(coords[i * 3]), format_double(coords[i * 3 + 1]),
                     format_double(coords[i * 3 + 2]), label, stage}) + "\n";
  }
  return out;
}

}  // namespace vitatt
