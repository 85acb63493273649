// SPDX-License-Identifier: Apache-2.0
#include "vitatt/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "vitatt/error.hpp"

namespace vitatt {
namespace {

class PnmReader {
 public:
  PnmReader(std::string bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}

  // Next header integer; skips whitespace and # comments.
  std::size_t header_int() {
    for (;;) {
      while (pos_ < bytes_.size() && std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
      if (pos_ < bytes_.size() && bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
        continue;
      }
      break;
    }
    std::size_t v = 0, digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      v = v * 10 + static_cast<std::size_t>(bytes_[pos_++] - '0');
      if (++digits > 9) fail("header value too large");
    }
    if (digits == 0) fail("malformed header");
    return v;
  }

  // The single whitespace byte that separates a binary header from pixels.
  void skip_one_space() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_])))
      fail("malformed header");
    ++pos_;
  }

  std::size_t binary_sample(bool wide) {
    if (pos_ + (wide ? 2 : 1) > bytes_.size()) fail("truncated pixel data");
    const auto b = [&](std::size_t i) { return static_cast<unsigned char>(bytes_[i]); };
    std::size_t v = b(pos_);
    if (wide) v = (v << 8) | b(pos_ + 1);
    pos_ += wide ? 2 : 1;
    return v;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(name_ + ": " + what);
  }

  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
  std::string name_;
  std::size_t pos_ = 2;
};

double resample_at(const Image& img, std::size_t c, double y, double x) {
  // half-pixel centers, edge clamping
  const double fy = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const double fx = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const auto y0 = static_cast<std::size_t>(fy), x0 = static_cast<std::size_t>(fx);
  const std::size_t y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
  const double wy = fy - static_cast<double>(y0), wx = fx - static_cast<double>(x0);
  const double top = img.at(c, y0, x0) * (1.0 - wx) + img.at(c, y0, x1) * wx;
  const double bottom = img.at(c, y1, x0) * (1.0 - wx) + img.at(c, y1, x1) * wx;
  return top * (1.0 - wy) + bottom * wy;
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  PnmReader r(std::string{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()},
              path.string());
  const std::string& b = r.bytes();
  if (b.size() < 2 || b[0] != 'P' || (b[1] != '2' && b[1] != '3' && b[1] != '5' && b[1] != '6')) {
    r.fail("unsupported image format (expected a PGM or PPM file)");
  }
  const bool ascii = b[1] == '2' || b[1] == '3';
  Image img;
  img.channels = (b[1] == '3' || b[1] == '6') ? 3 : 1;
  img.width = r.header_int();
  img.height = r.header_int();
  const std::size_t maxval = r.header_int();
  if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 65535) r.fail("invalid header");
  if (!ascii) r.skip_one_space();

  const std::size_t n = img.width * img.height;
  img.pixels.assign(img.channels * n, 0.0);
  const auto scale = static_cast<double>(maxval);
  // Files interleave channels per pixel; Image is channel-major.
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t c = 0; c < img.channels; ++c) {
      const std::size_t v = ascii ? r.header_int() : r.binary_sample(maxval > 255);
      if (v > maxval) r.fail("sample exceeds maxval");
      img.pixels[c * n + p] = static_cast<double>(v) / scale;
    }
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 3) throw DimensionError("write_ppm needs 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  const std::size_t n = image.width * image.height;
  std::string bytes(3 * n, '\0');
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(image.pixels[c * n + p], 0.0, 1.0);
      bytes[3 * p + c] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

void write_ppm(const std::filesystem::path& path, const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3) {
    throw DimensionError("write_ppm expects [3xHxW], got " + shape_str(chw.shape()));
  }
  Image img{3, chw.dim(1), chw.dim(2), std::vector<double>(chw.data().begin(), chw.data().end())};
  write_ppm(path, img);
}

Image center_crop_square(const Image& image) {
  const std::size_t side = std::min(image.height, image.width);
  const std::size_t y0 = (image.height - side) / 2, x0 = (image.width - side) / 2;
  Image out{image.channels, side, side, std::vector<double>(image.channels * side * side)};
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x)
        out.pixels[(c * side + y) * side + x] = image.at(c, y0 + y, x0 + x);
  return out;
}

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
  if (height == image.height && width == image.width) return image;
  Image out{image.channels, height, width, std::vector<double>(image.channels * height * width)};
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        out.pixels[(c * height + y) * width + x] =
            resample_at(image, c, (static_cast<double>(y) + 0.5) * sy - 0.5,
                        (static_cast<double>(x) + 0.5) * sx - 0.5);
  return out;
}

Tensor image_to_tensor(const Image& image, std::size_t channels) {
  if (image.channels == channels) {
    return Tensor({channels, image.height, image.width}, image.pixels);
  }
  if (image.channels == 1) {
    std::vector<double> v;
    v.reserve(channels * image.pixels.size());
    for (std::size_t c = 0; c < channels; ++c) v.insert(v.end(), image.pixels.begin(), image.pixels.end());
    return Tensor({channels, image.height, image.width}, std::move(v));
  }
  throw DataError("image has " + std::to_string(image.channels) + " channels, model expects " +
                  std::to_string(channels));
}

}  // namespace vitatt
