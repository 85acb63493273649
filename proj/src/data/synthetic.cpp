// SPDX-License-Identifier: Apache-2.0
#include "vitatt/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "vitatt/error.hpp"
#include "vitatt/random.hpp"

namespace vitatt {
namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Fully saturated hue on the color wheel.
std::array<double, 3> hue_rgb(double h) {
  const double x = h * 6.0;
  const auto sector = static_cast<int>(x) % 6;
  const double f = x - std::floor(x);
  switch (sector) {
    case 0: return {1.0, f, 0.0};
    case 1: return {1.0 - f, 1.0, 0.0};
    case 2: return {0.0, 1.0, f};
    case 3: return {0.0, 1.0 - f, 1.0};
    case 4: return {f, 0.0, 1.0};
    default: return {1.0, 0.0, 1.0 - f};
  }
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

std::size_t bits_for(std::size_t k) {
  std::size_t b = 1;
  while ((std::size_t{1} << b) < k) ++b;
  return b;
}

}  // namespace

std::size_t SyntheticSpec::num_groups() const {
  return fusion_necessity ? ceil_div(num_classes, 2) : num_classes;
}
std::size_t SyntheticSpec::num_keys() const {
  return fusion_necessity ? ceil_div(num_classes, num_groups()) : num_classes;
}
std::size_t SyntheticSpec::group_of(std::size_t label) const { return label % num_groups(); }
std::size_t SyntheticSpec::key_of(std::size_t label) const {
  return fusion_necessity ? label / num_groups() : label;
}

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw std::invalid_argument("synthetic spec needs at least 2 classes");
  if (samples_per_class.size() != num_classes) {
    throw std::invalid_argument("samples_per_class needs one count per class");
  }
  if (image_size < 8) throw std::invalid_argument("synthetic image_size must be at least 8");
  if (informative_fields == 0) throw std::invalid_argument("need at least one informative field");
  for (double p : {binary_flip, level_flip})
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("flip probabilities must lie in [0,1]");
  if (continuous_noise < 0.0 || pixel_noise < 0.0) throw std::invalid_argument("noise must be >= 0");
}

nlohmann::json SyntheticSpec::to_json() const {
  return {{"num_classes", num_classes},
          {"samples_per_class", samples_per_class},
          {"image_size", image_size},
          {"informative_fields", informative_fields},
          {"noise_fields", noise_fields},
          {"fusion_necessity", fusion_necessity},
          {"binary_flip", binary_flip},
          {"level_flip", level_flip},
          {"continuous_noise", continuous_noise},
          {"pixel_noise", pixel_noise},
          {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "num_classes") s.num_classes = value.get<std::size_t>();
      else if (key == "samples_per_class") {
        if (value.is_array()) s.samples_per_class = value.get<std::vector<std::size_t>>();
        else s.samples_per_class.assign(1, value.get<std::size_t>());
      } else if (key == "image_size") s.image_size = value.get<std::size_t>();
      else if (key == "informative_fields") s.informative_fields = value.get<std::size_t>();
      else if (key == "noise_fields") s.noise_fields = value.get<std::size_t>();
      else if (key == "fusion_necessity") s.fusion_necessity = value.get<bool>();
      else if (key == "binary_flip") s.binary_flip = value.get<double>();
      else if (key == "level_flip") s.level_flip = value.get<double>();
      else if (key == "continuous_noise") s.continuous_noise = value.get<double>();
      else if (key == "pixel_noise") s.pixel_noise = value.get<double>();
      else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else throw DataError("synthetic spec: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("synthetic spec: ") + e.what());
  }
  // a scalar count applies to every class
  if (s.samples_per_class.size() == 1 && s.num_classes > 1) {
    s.samples_per_class.assign(s.num_classes, s.samples_per_class[0]);
  }
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  return s;
}

BlobBox blob_box(std::size_t group, std::size_t num_groups, std::size_t image_size) {
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(num_groups))));
  const std::size_t rows = ceil_div(num_groups, cols);
  const std::size_t ch = image_size / rows, cw = image_size / cols;
  const std::size_t r = group / cols, c = group % cols;
  // centered box covering 60% of the cell in each direction
  const std::size_t bh = std::max<std::size_t>(1, ch * 3 / 5), bw = std::max<std::size_t>(1, cw * 3 / 5);
  const std::size_t y0 = r * ch + (ch - bh) / 2, x0 = c * cw + (cw - bw) / 2;
  return {y0, y0 + bh, x0, x0 + bw};
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t groups = spec.num_groups(), keys = spec.num_keys();
  const std::size_t n_fields = spec.informative_fields + spec.noise_fields;

  // Field j < informative carries the key; kinds cycle binary, categorical,
  // continuous within each family.
  std::vector<FieldSpec> fields;
  std::vector<bool> informative;
  for (std::size_t j = 0; j < n_fields; ++j) {
    const bool info = j < spec.informative_fields;
    const std::size_t local = info ? j : j - spec.informative_fields;
    FieldSpec f;
    f.kind = static_cast<FieldKind>(local % 3);
    if (f.kind == FieldKind::kCategorical) {
      const std::size_t levels = info ? std::max<std::size_t>(keys, 2) : 3;
      for (std::size_t l = 0; l < levels; ++l) f.levels.push_back("L" + std::to_string(l));
    }
    fields.push_back(std::move(f));
    informative.push_back(info);
  }
  std::vector<std::size_t> order(n_fields);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());

  SyntheticDataset out;
  MetadataSchema& schema = out.dataset.schema;
  for (std::size_t c = 0; c < spec.num_classes; ++c) schema.classes.push_back("class_" + std::to_string(c));
  for (std::size_t pos = 0; pos < n_fields; ++pos) {
    FieldSpec f = fields[order[pos]];
    char name[32];
    std::snprintf(name, sizeof name, "f%02zu", pos);
    f.name = name;
    (informative[order[pos]] ? out.informative : out.noise).push_back(f.name);
    schema.fields.push_back(std::move(f));
  }

  const std::size_t s = spec.image_size, plane = s * s;
  std::size_t next_id = 0;
  for (std::size_t y = 0; y < spec.num_classes; ++y) {
    const std::size_t g = spec.group_of(y), key = spec.key_of(y);
    const BlobBox box = blob_box(g, groups, s);
    const auto color = hue_rgb(static_cast<double>(g) / static_cast<double>(groups));
    for (std::size_t n = 0; n < spec.samples_per_class[y]; ++n) {
      Sample sample;
      char id[24];
      std::snprintf(id, sizeof id, "syn_%05zu", next_id++);
      sample.id = id;
      sample.label = y;

      std::vector<double> px(3 * plane);
      for (std::size_t yy = 0; yy < s; ++yy)
        for (std::size_t xx = 0; xx < s; ++xx) {
          const bool in = yy >= box.y0 && yy < box.y1 && xx >= box.x0 && xx < box.x1;
          for (std::size_t c = 0; c < 3; ++c) {
            const double base = in ? 0.15 + 0.7 * color[c] : 0.35;
            px[c * plane + yy * s + xx] = quantize(base + rng.uniform(-spec.pixel_noise, spec.pixel_noise));
          }
        }
      sample.image = Tensor({3, s, s}, std::move(px));

      std::vector<double> raw(n_fields);
      for (std::size_t j = 0; j < n_fields; ++j) {
        const FieldSpec& f = fields[j];
        const std::size_t local = informative[j] ? j : j - spec.informative_fields;
        if (informative[j]) {
          switch (f.kind) {
            case FieldKind::kBinary: {
              const std::size_t bit = (local / 3) % bits_for(keys);
              bool v = ((key >> bit) & 1U) != 0;
              if (rng.bernoulli(spec.binary_flip)) v = !v;
              raw[j] = v ? 1.0 : 0.0;
              break;
            }
            case FieldKind::kCategorical: {
              std::size_t level = key;
              if (rng.bernoulli(spec.level_flip)) {
                level = (key + 1 + rng.below(f.levels.size() - 1)) % f.levels.size();
              }
              raw[j] = static_cast<double>(level);
              break;
            }
            case FieldKind::kContinuous:
              raw[j] = std::clamp((static_cast<double>(key) + 0.5) / static_cast<double>(keys) +
                                      rng.normal(0.0, spec.continuous_noise),
                                  0.0, 1.0);
              break;
          }
        } else {
          switch (f.kind) {
            case FieldKind::kBinary: raw[j] = rng.bernoulli(0.5) ? 1.0 : 0.0; break;
            case FieldKind::kCategorical: raw[j] = static_cast<double>(rng.below(f.levels.size())); break;
            case FieldKind::kContinuous: raw[j] = rng.uniform(); break;
          }
        }
      }
      for (std::size_t pos = 0; pos < n_fields; ++pos) sample.metadata.push_back(raw[order[pos]]);
      out.dataset.samples.push_back(std::move(sample));
    }
  }

  nlohmann::json boxes = nlohmann::json::array();
  for (std::size_t g = 0; g < groups; ++g) {
    const BlobBox b = blob_box(g, groups, s);
    boxes.push_back({{"group", g}, {"y0", b.y0}, {"y1", b.y1}, {"x0", b.x0}, {"x1", b.x1}});
  }
  std::vector<std::size_t> group_of_class, key_of_class;
  for (std::size_t y = 0; y < spec.num_classes; ++y) {
    group_of_class.push_back(spec.group_of(y));
    key_of_class.push_back(spec.key_of(y));
  }
  out.manifest = {{"spec", spec.to_json()},
                  {"classes", schema.classes},
                  {"group_of_class", group_of_class},
                  {"key_of_class", key_of_class},
                  {"informative_fields", out.informative},
                  {"noise_fields", out.noise},
                  {"signal_boxes", boxes}};
  return out;
}

void write_synthetic(const SyntheticDataset& synthetic, const std::filesystem::path& dir) {
  write_dataset(synthetic.dataset, dir);
  std::ofstream m(dir / "manifest.json", std::ios::binary);
  m << synthetic.manifest.dump(2) << '\n';
  if (!m) throw DataError("cannot write " + (dir / "manifest.json").string());
}

}  // namespace vitatt
