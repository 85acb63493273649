// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vitatt/data.hpp"
#include "vitatt/model.hpp"

namespace vitatt {

enum class Stage { kPreFusion, kPostFusion };

std::string_view stage_name(Stage stage);  // "pre_fusion" / "post_fusion"

// Class-token embeddings of N samples, one row each.
struct EmbeddingSet {
  Stage stage = Stage::kPreFusion;
  std::size_t dim = 0;
  std::vector<double> vectors;  // N×dim, row-major
  std::vector<std::size_t> labels;
  std::vector<std::string> ids;

  std::size_t rows() const { return labels.size(); }
};

struct EmbeddingPair {
  EmbeddingSet pre;
  EmbeddingSet post;
};

// Runs the model in eval mode without gradients and reads the class-token row
// just before and just after the fusion layer. For image-only models the two
// sets coincide.
EmbeddingPair collect_embeddings(VitAttParams& params, const ModelConfig& config,
                                 std::span<const Sample> samples,
                                 std::span<const std::size_t> indices,
                                 const MetadataSchema& schema, std::size_t batch_size = 64);

struct TsneOptions {
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  double exaggeration = 12.0;
  std::size_t exaggeration_iterations = 250;
  double learning_rate = 200.0;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  double min_gain = 0.01;
  double init_stddev = 1e-4;
  double entropy_tolerance = 1e-5;  // nats
  std::uint64_t seed = 0;

  void validate(std::size_t n) const;
};

struct Affinities {
  std::vector<double> p;           // N×N symmetric joint probabilities
  std::vector<double> beta;        // per-point precision 1/(2σ²)
  double max_entropy_error = 0.0;  // max_i |H(P_i) − ln perplexity|
  std::size_t jittered = 0;        // points moved to break exact duplicates
};

// Perplexity-calibrated Gaussian affinities, symmetrized and normalized.
Affinities tsne_affinities(std::span<const double> points, std::size_t n, std::size_t dim,
                           const TsneOptions& options);

struct TsneResult {
  std::vector<double> coords;  // N×3
  std::vector<double> kl;      // KL(P‖Q) entering each iteration, unexaggerated P
  double max_entropy_error = 0.0;
};

// Exact O(N²) t-SNE to three dimensions. Throws std::invalid_argument when
// N < 4 or perplexity ≥ N/3, NumericError on non-finite input or divergence.
TsneResult tsne_3d(std::span<const double> points, std::size_t n, std::size_t dim,
                   const TsneOptions& options = {});
TsneResult tsne_3d(const EmbeddingSet& set, const TsneOptions& options = {});

// Mean silhouette under Euclidean distance. Points in singleton clusters score
// 0, as do points whose a and b are both 0. Throws std::invalid_argument with
// fewer than two distinct labels.
double silhouette(std::span<const double> points, std::size_t n, std::size_t dim,
                  std::span<const std::size_t> labels);

// "id,x,y,z,label,stage" rows; labels written as class names.
std::string projection_csv(const EmbeddingSet& set, std::span<const double> coords,
                           const std::vector<std::string>& class_names, bool header = true);

}  // namespace vitatt
