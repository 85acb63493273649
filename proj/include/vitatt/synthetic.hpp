// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "vitatt/data.hpp"

namespace vitatt {

// Generator settings. The image shows a colored square whose position and
// hue encode a visual group; informative metadata fields encode a key. With
// fusion_necessity the label is group + G·key with G = ⌈C/2⌉, so pairs of
// classes share one image distribution and only metadata separates them.
// Without it both modalities encode the label directly.
struct SyntheticSpec {
  std::size_t num_classes = 3;
  std::vector<std::size_t> samples_per_class{50, 50, 50};
  std::size_t image_size = 32;
  std::size_t informative_fields = 4;
  std::size_t noise_fields = 0;
  bool fusion_necessity = false;
  double binary_flip = 0.05;   // chance an informative binary field lies
  double level_flip = 0.05;    // chance an informative categorical field lies
  double continuous_noise = 0.05;
  double pixel_noise = 0.08;
  std::uint64_t seed = 1;

  std::size_t num_groups() const;
  std::size_t num_keys() const;
  std::size_t group_of(std::size_t label) const;
  std::size_t key_of(std::size_t label) const;

  void validate() const;  // throws std::invalid_argument
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

struct SyntheticDataset {
  Dataset dataset;
  nlohmann::json manifest;
  std::vector<std::string> informative;  // field names carrying the key
  std::vector<std::string> noise;        // label-independent field names
};

// Deterministic in the spec (seed included). Field order in the schema is a
// seeded shuffle of informative and noise fields.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

// Pixel box [y0,y1)×[x0,x1) of the square drawn for `group`.
struct BlobBox {
  std::size_t y0, y1, x0, x1;
};
BlobBox blob_box(std::size_t group, std::size_t num_groups, std::size_t image_size);

// Dataset files plus manifest.json.
void write_synthetic(const SyntheticDataset& synthetic, const std::filesystem::path& dir);

}  // namespace vitatt
