// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vitatt/data.hpp"
#include "vitatt/model.hpp"
#include "vitatt/train.hpp"

namespace vitatt::cli {

// Bad flags, unknown config keys, failed validation. Exit code 1.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

// Locations of a dataset. `dir` alone means dir/metadata.csv,
// dir/schema.json and dir/images.
struct DataPaths {
  std::filesystem::path csv, schema, images;

  static DataPaths from_dir(const std::filesystem::path& dir);
  nlohmann::json to_json() const;
  static DataPaths from_json(const nlohmann::json& j, const std::filesystem::path& base);
};

// Everything one training command needs. Keys in JSON:
//   data: {dir} or {csv, schema, images}
//   output_dir, seed, repeats, image_only, metadata_subset ("all" | "HC-k" | "LC-k"),
//   split: [train, val, test] ratios,
//   model: ModelConfig keys other than the dataset-derived
//          num_metadata_slots / metadata_width / num_classes, plus
//          "preset": "tiny" | "vit_small_patch16_224",
//   train: TrainConfig keys other than seed.
// Relative paths in a file resolve against the file's directory.
struct RunConfig {
  DataPaths data;
  std::filesystem::path output_dir = "out";
  std::string preset = "tiny";
  nlohmann::json model_overrides = nlohmann::json::object();
  TrainConfig train;
  std::array<double, 3> split{0.5, 0.15, 0.35};
  std::string metadata_subset = "all";
  bool image_only = false;
  std::size_t repeats = 1;
  std::uint64_t seed = 0;

  // Throws UsageError for unknown keys or bad values.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
  nlohmann::json to_json() const;
  void validate() const;

  // Model geometry for a dataset with this schema.
  ModelConfig model_for(const MetadataSchema& schema) const;
};

// "a.b.c=value" applied to a JSON document; the value is parsed as JSON when
// it parses, otherwise taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Seeds drawn, in order, from the run generator Rng(seed).
struct RunSeeds {
  std::uint64_t split = 0;
  std::vector<std::uint64_t> repeats;
};
RunSeeds derive_seeds(std::uint64_t seed, std::size_t repeats);

Dataset load_data(const DataPaths& paths, std::size_t image_size, std::size_t channels);

// ---- commands ----

struct SynthOptions {
  std::optional<std::filesystem::path> spec_file;
  nlohmann::json spec_overrides = nlohmann::json::object();
  std::filesystem::path output_dir;
};
void cmd_synth(const SynthOptions& options);

struct TrainOutcome {
  std::vector<std::filesystem::path> checkpoints;  // one per repeat
  std::vector<MetricsReport> test_reports;
  MetricsReport mean_report;
};

// Writes into output_dir: config.json (the source document verbatim when one
// was given), resolved_config.json, selection.json, and per repeat
// run_XX/{checkpoint.json, history.csv, metrics.csv, confusion.csv};
// metrics.csv at the top holds every run plus the mean.
// `source` is the original config document, if any.
TrainOutcome cmd_train(const RunConfig& config, const std::optional<std::string>& source = {},
                       bool verbose = false);

// Which samples a command works on: "train", "val", "test" or "all".
std::vector<std::size_t> split_indices(const nlohmann::json& checkpoint_extra,
                                       const Dataset& dataset, const std::string& split);

// metrics.csv and confusion.csv for `split` of the checkpoint's dataset.
MetricsReport cmd_eval(const std::filesystem::path& checkpoint, const std::string& split,
                       const std::filesystem::path& output_dir,
                       const std::optional<DataPaths>& data = {});

struct ExplainOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path output_dir;
  std::vector<std::string> sample_ids;  // per-sample mode
  bool class_average = false;
  std::string split = "test";            // class-average mode
  std::optional<std::string> target;     // class name; default the true class
  std::optional<DataPaths> data;
};
// Per-sample mode writes saliency_<id>.ppm and relevancy_<id>.json per id;
// class-average mode writes class_relevancy.csv and class_annotations.csv.
void cmd_explain(const ExplainOptions& options);

struct ProjectOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path output_dir;
  std::string split = "test";
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  std::uint64_t seed = 0;
  std::optional<DataPaths> data;
};
struct ProjectOutcome {
  double pre_silhouette = 0.0;   // on the 3-D coordinates
  double post_silhouette = 0.0;
  std::vector<double> pre_kl, post_kl;
};
// projection.csv (both stages) and scores.json.
ProjectOutcome cmd_project(const ProjectOptions& options);

// correlation.json and selection.json for the training split of `config`.
std::vector<std::string> cmd_select_metadata(const RunConfig& config, const std::string& subset);

// Runs `fn`, mapping exceptions to exit codes and printing one line
// "error: <kind>: <message>" to stderr.
int run_guarded(const std::function<void()>& fn);

}  // namespace vitatt::cli
