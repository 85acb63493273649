// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "vitatt/tensor.hpp"

namespace vitatt {

// Channel-major pixels scaled to [0,1].
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;  // [channels × height × width]

  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }
};

// Reads P2/P3/P5/P6 portable any-maps; grey maps come back with one channel.
// Throws DataError for a missing file or an unsupported/garbled header.
Image read_pnm(const std::filesystem::path& path);

// Writes an 8-bit binary PPM (P6) from a [3×H×W] tensor or image in [0,1];
// values are clamped and rounded to the nearest level.
void write_ppm(const std::filesystem::path& path, const Image& image);
void write_ppm(const std::filesystem::path& path, const Tensor& chw);

// Largest centered square.
Image center_crop_square(const Image& image);

// Bilinear resampling with half-pixel centers and edge clamping.
Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);

// Grey images are replicated to three channels.
Tensor image_to_tensor(const Image& image, std::size_t channels);

}  // namespace vitatt
