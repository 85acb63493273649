// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vitatt/model.hpp"
#include "vitatt/random.hpp"

namespace vitatt::testing {

// Random images in [0,1] and one-hot metadata rows, shaped for `config`.
inline Batch random_batch(const ModelConfig& config, std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t img = config.channels * config.image_size * config.image_size;
  std::vector<double> images(size * img);
  for (auto& v : images) v = rng.uniform();
  Batch batch;
  batch.images = Tensor({size, config.channels, config.image_size, config.image_size},
                        std::move(images));
  if (!config.image_only) {
    const std::size_t m = config.num_metadata_slots, w = config.metadata_width;
    std::vector<double> meta(size * m * w, 0.0);
    for (std::size_t s = 0; s < size * m; ++s) meta[s * w + rng.below(w)] = 1.0;
    batch.metadata = Tensor({size, m, w}, std::move(meta));
  }
  return batch;
}

// Parameters with larger weights than the 0.02 initialization, so every
// gradient path carries signal in numerical checks.
inline VitAttParams scaled_params(const ModelConfig& config, std::uint64_t seed,
                                  double stddev) {
  VitAttParams p = VitAttParams::init(config, seed);
  Rng rng(seed + 1);
  for (auto& nt : p.named(config)) {
    for (auto& v : nt.tensor.mutable_data()) v += rng.normal(0.0, stddev);
  }
  return p;
}

}  // namespace vitatt::testing
