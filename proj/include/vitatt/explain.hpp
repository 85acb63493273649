// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "vitatt/data.hpp"
#include "vitatt/image_io.hpp"
#include "vitatt/model.hpp"

namespace vitatt {

struct RelevancyMap {
  std::size_t target_class = 0;
  std::size_t grid_size = 0;
  std::vector<double> image_grid;        // grid², row-major, in [0,1]
  std::vector<double> metadata_scores;   // M, in [0,1]
  std::vector<double> raw_token_scores;  // T: class-token row of R, unnormalized
};

// Ā = mean over heads of max(0, ∇A ⊙ A) for one sample, [n×n] row-major.
// Throws std::invalid_argument ("trace not recorded with gradients") when the
// record carries no gradient.
std::vector<double> gradient_weighted_attention(const AttentionRecord& record,
                                                std::size_t sample);

// Relevancy matrix R [T×T] after the first `layers` attention records. R starts
// as the identity; a record over n tokens applies R[:n,:] += Ā·R[:n,:], so
// encoder layers touch the image block and the fusion layer all of R.
std::vector<double> relevancy_matrix(const ForwardTrace& trace, std::size_t tokens,
                                     std::size_t sample = 0,
                                     std::size_t layers = std::numeric_limits<std::size_t>::max());

// Class-token row of R split into the patch grid and metadata slots, each
// entry min-max normalized over all non-class tokens. A constant row maps to
// all ones when positive and all zeros otherwise.
RelevancyMap relevancy_propagate(const ForwardTrace& trace, const ModelConfig& config,
                                 std::size_t target_class, std::size_t sample = 0);

// Forward pass in eval mode with attention recording, backward from
// logits[target_class], then propagation. `single` holds one sample. Parameter
// gradients are cleared before returning.
RelevancyMap explain_sample(const Batch& single, VitAttParams& params,
                            const ModelConfig& config, std::size_t target_class);

struct ClassRelevancy {
  std::vector<std::string> classes;
  std::vector<std::string> fields;
  std::vector<std::size_t> support;      // samples per class
  std::vector<double> scores;            // C×M; NaN rows for empty classes
  std::vector<std::string> annotations;  // C×M metadata value summaries

  double at(std::size_t c, std::size_t m) const { return scores[c * fields.size() + m]; }
  // Header "class,support,<fields…>"; empty classes print "nan".
  std::string scores_csv() const;
  std::string annotations_csv() const;
};

// Averages each sample's metadata scores into the row of its label and
// summarizes the metadata values per cell: binary fields count true values,
// continuous fields report the mean, categorical fields the modal level.
// maps[i] belongs to samples[i].
ClassRelevancy class_average_metadata_relevancy(std::span<const RelevancyMap> maps,
                                                std::span<const Sample> samples,
                                                const MetadataSchema& schema);

// Explains every sample of `samples` for its true class, then averages.
ClassRelevancy class_average_metadata_relevancy(VitAttParams& params, const ModelConfig& config,
                                                std::span<const Sample> samples,
                                                const MetadataSchema& schema);

// Heat color of a score in [0,1]: blue at 0, red at 1.
std::array<double, 3> heat_color(double v);
inline constexpr double kOverlayAlpha = 0.5;

// Nearest-neighbor upscaled grid blended over the [3×H×W] base image; values
// are quantized to 8 bits so that the written file reads back identically.
Image saliency_overlay(const RelevancyMap& map, const Tensor& base_image);
void render_saliency(const RelevancyMap& map, const Tensor& base_image,
                     const std::filesystem::path& path);

}  // namespace vitatt
