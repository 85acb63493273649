// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "vitatt/model.hpp"
#include "vitatt/tensor.hpp"

namespace vitatt {

enum class FieldKind { kBinary, kCategorical, kContinuous };

struct FieldSpec {
  std::string name;
  FieldKind kind = FieldKind::kBinary;
  std::vector<std::string> levels;  // categorical only
  double min = 0.0, max = 1.0;      // continuous only

  // Encoded width before padding: binary 2, categorical |levels|, continuous 1.
  std::size_t width() const;
  bool operator==(const FieldSpec&) const = default;
};

struct MetadataSchema {
  std::string id_column = "img_id";
  std::string label_column = "diagnostic";
  std::vector<std::string> classes;
  std::vector<FieldSpec> fields;

  // Common slot width w: the widest field.
  std::size_t slot_width() const;
  std::size_t num_fields() const { return fields.size(); }
  std::size_t num_classes() const { return classes.size(); }
  std::size_t field_index(std::string_view name) const;  // throws DataError
  std::size_t class_index(std::string_view name) const;  // throws DataError

  // Throws DataError: duplicate names, empty level lists, min ≥ max, < 2
  // classes.
  void validate() const;

  // Schema restricted to `fields` (indices into this schema), in that order.
  MetadataSchema subset(std::span<const std::size_t> fields) const;

  nlohmann::json to_json() const;
  static MetadataSchema from_json(const nlohmann::json& j);
  static MetadataSchema load(const std::filesystem::path& path);
  bool operator==(const MetadataSchema&) const = default;
};

// Parsed field value: binary 1/0, categorical level index, continuous raw
// value.
struct Sample {
  std::string id;
  Tensor image;  // [ch×H×W] in [0,1]
  std::vector<double> metadata;
  std::size_t label = 0;
};

struct Dataset {
  MetadataSchema schema;
  std::vector<Sample> samples;
  std::size_t dropped_rows = 0;

  std::vector<std::size_t> labels() const;
  std::vector<std::size_t> class_counts() const;
};

// Cells treated as undefined: empty, NA, NaN, null, UNK (any case).
bool is_missing_value(std::string_view cell);

// Reads the CSV and the image named by each id (`<dir>/<id>`, falling back to
// `<dir>/<stem>.ppm`). Rows with an undefined field are dropped and counted.
// Images are center-cropped to a square, resized to image_size and scaled to
// [0,1]. Throws DataError naming the file line for malformed rows, unknown
// classes or levels, and for missing files.
Dataset load_dataset(const std::filesystem::path& csv_path,
                     const std::filesystem::path& image_dir,
                     const MetadataSchema& schema, std::size_t image_size,
                     std::size_t channels = 3);

// Parses one raw cell for `field`. Throws DataError on unknown levels or
// unparsable values.
double parse_field_value(const FieldSpec& field, std::string_view cell);
// Inverse of parse_field_value, for writing CSVs.
std::string format_field_value(const FieldSpec& field, double value);

// [M×w]: binary true → [1,0], false → [0,1]; categorical one-hot; continuous
// (v−min)/(max−min) clamped to [0,1] with a warning; zero padded to w.
Tensor encode_metadata(const Sample& sample, const MetadataSchema& schema);

// Stacks samples[indices] into a model batch.
Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices,
                 const MetadataSchema& schema);

// Keeps only `fields` (indices into the dataset schema) in schema and samples.
Dataset select_fields(const Dataset& dataset, std::span<const std::size_t> fields);

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

// Per-class proportional allocation by largest remainder. Classes that can fill
// every split get at least one sample in each. Indices in each split ascend.
// Throws std::invalid_argument when ratios do not sum to 1 within 1e-9.
SplitIndices stratified_split(std::span<const std::size_t> labels,
                              std::array<double, 3> ratios, std::uint64_t seed);

struct CorrelationReport {
  std::vector<std::string> names;      // schema order
  std::vector<double> coefficients;    // schema order, in [0,1]
  std::vector<std::size_t> ranking;    // field indices, descending, stable

  nlohmann::json to_json() const;
};

// Pearson correlation (0 for zero-variance columns).
double pearson(std::span<const double> x, std::span<const double> y);

// Each field against the one-hot label columns: binary as {0,1}, categorical
// as per-level indicators, continuous raw; score = max absolute coefficient.
CorrelationReport correlation_ranking(std::span<const Sample> samples,
                                      const MetadataSchema& schema);

enum class SelectionMode { kHighest, kLowest };

// HC-k: the first k of the ranking; LC-k: the last k, lowest first. Throws
// std::invalid_argument when k exceeds the field count.
std::vector<std::size_t> select_metadata(const CorrelationReport& report,
                                         SelectionMode mode, std::size_t k);

// Parses "all", "HC-k" or "LC-k" and applies it; "all" keeps schema order.
std::vector<std::size_t> select_metadata(const CorrelationReport& report,
                                         std::string_view subset);

// Writes `<dir>/<csv_name>`, `<dir>/schema.json` and one PPM per sample
// under `<dir>/images`.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir,
                   const std::string& csv_name = "metadata.csv");

}  // namespace vitatt
