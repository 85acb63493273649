// SPDX-License-Identifier: Apache-2.0
#include "vitatt/explain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "vitatt/csv.hpp"
#include "vitatt/error.hpp"
#include "vitatt/kernels.hpp"
#include "vitatt/log.hpp"
#include "vitatt/ops.hpp"

namespace vitatt {

std::vector<double> gradient_weighted_attention(const AttentionRecord& record, std::size_t sample) {
  if (!record.probs.defined() || !record.probs.has_grad()) {
    throw std::invalid_argument("trace not recorded with gradients");
  }
  const std::size_t n = record.tokens, h = record.heads, nn = n * n;
  if (record.probs.numel() < (sample + 1) * h * nn) {
    throw DimensionError("gradient_weighted_attention: sample " + std::to_string(sample) +
                         " outside the recorded batch");
  }
  const auto a = record.probs.data().subspan(sample * h * nn, h * nn);
  const auto g = record.probs.grad().subspan(sample * h * nn, h * nn);
  std::vector<double> out(nn, 0.0);
  for (std::size_t head = 0; head < h; ++head)
    for (std::size_t i = 0; i < nn; ++i) out[i] += std::max(0.0, g[head * nn + i] * a[head * nn + i]);
  for (auto& v : out) v /= static_cast<double>(h);
  return out;
}

std::vector<double> relevancy_matrix(const ForwardTrace& trace, std::size_t tokens,
                                     std::size_t sample, std::size_t layers) {
  std::vector<double> r(tokens * tokens, 0.0);
  for (std::size_t i = 0; i < tokens; ++i) r[i * tokens + i] = 1.0;
  const std::size_t count = std::min(layers, trace.attention.size());
  for (std::size_t l = 0; l < count; ++l) {
    const AttentionRecord& rec = trace.attention[l];
    const std::size_t n = rec.tokens;
    if (n > tokens) throw DimensionError("relevancy_matrix: record wider than the token set");
    const std::vector<double> abar = gradient_weighted_attention(rec, sample);
    // leading n rows of R are contiguous
    std::vector<double> update(n * tokens, 0.0);
    kernels::gemm_acc(n, tokens, n, abar, std::span<const double>(r.data(), n * tokens), update);
    kernels::axpy(1.0, update, std::span<double>(r.data(), n * tokens));
  }
  return r;
}

RelevancyMap relevancy_propagate(const ForwardTrace& trace, const ModelConfig& config,
                                 std::size_t target_class, std::size_t sample) {
  const std::size_t t = config.total_tokens(), p = config.num_patches();
  if (trace.attention.empty()) throw std::invalid_argument("trace not recorded with attention maps");
  for (const auto& rec : trace.attention) {
    if (!rec.probs.has_grad()) throw std::invalid_argument("trace not recorded with gradients");
  }
  if (trace.attention.back().tokens != t) {
    throw DimensionError("relevancy_propagate: trace has " + std::to_string(trace.attention.back().tokens) +
                         " tokens, config expects " + std::to_string(t));
  }
  const std::vector<double> r = relevancy_matrix(trace, t, sample);

  RelevancyMap map;
  map.target_class = target_class;
  map.grid_size = config.grid_size();
  map.raw_token_scores.assign(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(t));
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t j = 1; j < t; ++j) {
    lo = std::min(lo, map.raw_token_scores[j]);
    hi = std::max(hi, map.raw_token_scores[j]);
  }
  std::vector<double> norm(t, 0.0);
  for (std::size_t j = 1; j < t; ++j) {
    norm[j] = hi > lo ? (map.raw_token_scores[j] - lo) / (hi - lo) : (hi > 0.0 ? 1.0 : 0.0);
  }
  map.image_grid.assign(norm.begin() + 1, norm.begin() + 1 + static_cast<std::ptrdiff_t>(p));
  map.metadata_scores.assign(norm.begin() + 1 + static_cast<std::ptrdiff_t>(p), norm.end());
  return map;
}

RelevancyMap explain_sample(const Batch& single, VitAttParams& params, const ModelConfig& config,
                            std::size_t target_class) {
  if (single.size() != 1) throw DimensionError("explain_sample: expected a batch of one sample");
  if (target_class >= config.num_classes) throw std::out_of_range("explain_sample: target class out of range");
  const auto named = params.named(config);
  for (auto nt : named) nt.tensor.zero_grad();
  const ForwardTrace trace = forward(single, params, config, Mode::kEval, /*record=*/true);
  backward(element(trace.logits, target_class));
  RelevancyMap map = relevancy_propagate(trace, config, target_class);
  for (auto nt : named) nt.tensor.zero_grad();
  return map;
}

ClassRelevancy class_average_metadata_relevancy(std::span<const RelevancyMap> maps,
                                                std::span<const Sample> samples,
                                                const MetadataSchema& schema) {
  if (maps.size() != samples.size()) {
    throw DimensionError("class_average_metadata_relevancy: one map per sample required");
  }
  const std::size_t c_count = schema.num_classes(), m = schema.num_fields();
  ClassRelevancy out;
  out.classes = schema.classes;
  for (const auto& f : schema.fields) out.fields.push_back(f.name);
  out.support.assign(c_count, 0);
  out.scores.assign(c_count * m, 0.0);
  std::vector<double> value_sum(c_count * m, 0.0);
  std::vector<std::map<std::size_t, std::size_t>> level_counts(c_count * m);

  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t c = samples[i].label;
    if (maps[i].metadata_scores.size() != m) {
      throw DimensionError("relevancy map has " + std::to_string(maps[i].metadata_scores.size()) +
                           " metadata scores, schema has " + std::to_string(m) + " fields");
    }
    ++out.support.at(c);
    for (std::size_t f = 0; f < m; ++f) {
      out.scores[c * m + f] += maps[i].metadata_scores[f];
      value_sum[c * m + f] += samples[i].metadata[f];
      ++level_counts[c * m + f][static_cast<std::size_t>(samples[i].metadata[f])];
    }
  }
  out.annotations.assign(c_count * m, "");
  for (std::size_t c = 0; c < c_count; ++c) {
    const std::size_t n = out.support[c];
    if (n == 0) {
      warn("class '" + schema.classes[c] + "' has no samples; its relevancy row is NaN");
      std::fill_n(out.scores.begin() + static_cast<std::ptrdiff_t>(c * m), m,
                  std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    for (std::size_t f = 0; f < m; ++f) {
      const std::size_t k = c * m + f;
      out.scores[k] /= static_cast<double>(n);
      const FieldSpec& spec = schema.fields[f];
      switch (spec.kind) {
        case FieldKind::kBinary:
          out.annotations[k] = "true " + std::to_string(static_cast<std::size_t>(value_sum[k])) + "/" +
                               std::to_string(n);
          break;
        case FieldKind::kContinuous: {
          std::ostringstream s;
          s.precision(4);
          s << "mean " << value_sum[k] / static_cast<double>(n);
          out.annotations[k] = s.str();
          break;
        }
        case FieldKind::kCategorical: {
          const auto mode = std::max_element(level_counts[k].begin(), level_counts[k].end(),
                                             [](const auto& a, const auto& b) { return a.second < b.second; });
          out.annotations[k] = "mode " + spec.levels.at(mode->first) + " " + std::to_string(mode->second) +
                               "/" + std::to_string(n);
          break;
        }
      }
    }
  }
  return out;
}

ClassRelevancy class_average_metadata_relevancy(VitAttParams& params, const ModelConfig& config,
                                                std::span<const Sample> samples,
                                                const MetadataSchema& schema) {
  std::vector<RelevancyMap> maps;
  maps.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t idx[1] = {i};
    maps.push_back(explain_sample(make_batch(samples, idx, schema), params, config, samples[i].label));
  }
  return class_average_metadata_relevancy(maps, samples, schema);
}

std::string ClassRelevancy::scores_csv() const {
  std::vector<std::string> header{"class", "support"};
  header.insert(header.end(), fields.begin(), fields.end());
  std::string out = csv_line(header) + "\n";
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<std::string> row{classes[c], std::to_string(support[c])};
    for (std::size_t f = 0; f < fields.size(); ++f) {
      const double v = at(c, f);
      row.push_back(std::isnan(v) ? "nan" : format_double(v));
    }
    out += csv_line(row) + "\n";
  }
  return out;
}

std::string ClassRelevancy::annotations_csv() const {
  std::vector<std::string> header{"class"};
  header.insert(header.end(), fields.begin(), fields.end());
  std::string out = csv_line(header) + "\n";
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<std::string> row{classes[c]};
    for (std::size_t f = 0; f < fields.size(); ++f) row.push_back(annotations[c * fields.size() + f]);
    out += csv_line(row) + "\n";
  }
  return out;
}

std::array<double, 3> heat_color(double v) {
  const double t = std::clamp(v, 0.0, 1.0);
  return {t, 0.0, 1.0 - t};
}

Image saliency_overlay(const RelevancyMap& map, const Tensor& base_image) {
  if (base_image.rank() != 3 || base_image.dim(0) != 3 || base_image.dim(1) != base_image.dim(2)) {
    throw DimensionError("saliency_overlay: expected a square [3xHxW] image, got " +
                         shape_str(base_image.shape()));
  }
  const std::size_t size = base_image.dim(1), grid = map.grid_size;
  if (grid == 0 || size % grid != 0 || map.image_grid.size() != grid * grid) {
    throw DimensionError("saliency_overlay: grid does not tile the image");
  }
  const std::size_t cell = size / grid, plane = size * size;
  Image out{3, size, size, std::vector<double>(3 * plane)};
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const auto heat = heat_color(map.image_grid[(y / cell) * grid + x / cell]);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = (1.0 - kOverlayAlpha) * base_image.at(c * plane + y * size + x) + kOverlayAlpha * heat[c];
        out.pixels[c * plane + y * size + x] = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
      }
    }
  return out;
}

void render_saliency(const RelevancyMap& map, const Tensor& base_image, const std::filesystem::path& path) {
  write_ppm(path, saliency_overlay(map, base_image));
}

}  // namespace vitatt
