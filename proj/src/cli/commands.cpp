// SPDX-License-Identifier: Apache-2.0
#include "vitatt/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "vitatt/checkpoint.hpp"
#include "vitatt/csv.hpp"
#include "vitatt/error.hpp"
#include "vitatt/explain.hpp"
#include "vitatt/log.hpp"
#include "vitatt/project.hpp"
#include "vitatt/random.hpp"
#include "vitatt/synthetic.hpp"

namespace vitatt::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

std::string run_name(std::size_t r) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "run_%02zu", r + 1);
  return buf;
}

std::string safe_file_stem(const std::string& id) {
  std::string out = id;
  for (char& c : out) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '-' || c == '_' || c == '.';
    if (!ok) c = '_';
  }
  return out;
}

std::vector<Sample> gather(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx) {
  std::vector<Sample> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(samples[i]);
  return out;
}

std::vector<std::string> ids_of(const Dataset& d, const std::vector<std::size_t>& idx) {
  std::vector<std::string> out;
  for (std::size_t i : idx) out.push_back(d.samples[i].id);
  return out;
}

// Reads a typed value, turning JSON type errors into usage errors.
template <typename T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw UsageError("config: bad value for '" + key + "'");
  }
}

struct LoadedModel {
  Checkpoint checkpoint;
  Dataset data;
};

// The checkpoint plus its dataset restricted to the fields it was trained on.
LoadedModel load_for_checkpoint(const fs::path& path, const std::optional<DataPaths>& data) {
  LoadedModel out{load_checkpoint(path), {}};
  const json& extra = out.checkpoint.extra;
  if (!extra.contains("data") || !extra.contains("fields")) {
    throw DataError("checkpoint " + path.string() + " carries no dataset provenance");
  }
  const DataPaths paths = data ? *data : DataPaths::from_json(extra.at("data"), {});
  const ModelConfig& mc = out.checkpoint.config;
  Dataset full = load_data(paths, mc.image_size, mc.channels);
  std::vector<std::size_t> fields;
  for (const auto& name : extra.at("fields")) fields.push_back(full.schema.field_index(name.get<std::string>()));
  out.data = select_fields(full, fields);
  if (out.data.schema.classes != extra.at("classes").get<std::vector<std::string>>()) {
    throw DataError("dataset classes differ from the checkpoint's");
  }
  return out;
}

std::string model_name(const json& extra) {
  return extra.value("image_only", false) ? "image_only" : "multimodal";
}

}  // namespace

// ---- config ----

DataPaths DataPaths::from_dir(const fs::path& dir) {
  return {dir / "metadata.csv", dir / "schema.json", dir / "images"};
}

json DataPaths::to_json() const {
  return {{"csv", csv.string()}, {"schema", schema.string()}, {"images", images.string()}};
}

DataPaths DataPaths::from_json(const json& j, const fs::path& base) {
  if (!j.is_object()) throw UsageError("config: 'data' must be an object");
  DataPaths p;
  // Explicit entries win over the directory defaults.
  if (j.contains("dir")) p = from_dir(resolve(get_as<std::string>(j.at("dir"), "data.dir"), base));
  for (const auto& [key, value] : j.items()) {
    if (key == "dir") continue;
    const fs::path v = resolve(get_as<std::string>(value, "data." + key), base);
    if (key == "csv") {
      p.csv = v;
    } else if (key == "schema") {
      p.schema = v;
    } else if (key == "images") {
      p.images = v;
    } else {
      throw UsageError("config: unknown key 'data." + key + "'");
    }
  }
  return p;
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base) {
  if (!j.is_object()) throw UsageError("config: top level must be an object");
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "data") {
      c.data = DataPaths::from_json(value, base);
    } else if (key == "output_dir") {
      c.output_dir = resolve(get_as<std::string>(value, key), base);
    } else if (key == "seed") {
      c.seed = get_as<std::uint64_t>(value, key);
    } else if (key == "repeats") {
      c.repeats = get_as<std::size_t>(value, key);
    } else if (key == "image_only") {
      c.image_only = get_as<bool>(value, key);
    } else if (key == "metadata_subset") {
      c.metadata_subset = get_as<std::string>(value, key);
    } else if (key == "split") {
      const auto v = get_as<std::vector<double>>(value, key);
      if (v.size() != 3) throw UsageError("config: 'split' needs three ratios");
      c.split = {v[0], v[1], v[2]};
    } else if (key == "model") {
      if (!value.is_object()) throw UsageError("config: 'model' must be an object");
      c.model_overrides = value;
      if (value.contains("preset")) {
        c.preset = get_as<std::string>(value.at("preset"), "model.preset");
        c.model_overrides.erase("preset");
      }
    } else if (key == "train") {
      if (!value.is_object()) throw UsageError("config: 'train' must be an object");
      if (value.contains("seed")) throw UsageError("config: 'train.seed' is derived from the run seed");
      try {
        c.train = TrainConfig::from_json(value);
      } catch (const json::exception& e) {
        throw UsageError(std::string("config: train: ") + e.what());
      } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("config: ") + e.what());
      }
    } else {
      throw UsageError("config: unknown key '" + key + "'");
    }
  }
  return c;
}

json RunConfig::to_json() const {
  json model = model_overrides;
  model["preset"] = preset;
  json tr = train.to_json();
  tr.erase("seed");
  return {{"data", data.to_json()},
          {"output_dir", output_dir.string()},
          {"seed", seed},
          {"repeats", repeats},
          {"image_only", image_only},
          {"metadata_subset", metadata_subset},
          {"split", split},
          {"model", model},
          {"train", tr}};
}

void RunConfig::validate() const {
  if (data.csv.empty() || data.schema.empty() || data.images.empty()) {
    throw UsageError("config: 'data' needs dir or csv, schema and images");
  }
  if (output_dir.empty()) throw UsageError("config: empty output_dir");
  if (repeats == 0) throw UsageError("config: repeats must be at least 1");
  if (preset != "tiny" && preset != "vit_small_patch16_224") {
    throw UsageError("config: unknown model preset '" + preset + "'");
  }
  for (const char* derived : {"num_metadata_slots", "metadata_width", "num_classes", "image_only"}) {
    if (model_overrides.contains(derived)) {
      throw UsageError(std::string("config: 'model.") + derived + "' is derived from the dataset and flags");
    }
  }
  if (metadata_subset != "all") {
    const bool hc = metadata_subset.rfind("HC-", 0) == 0, lc = metadata_subset.rfind("LC-", 0) == 0;
    const std::string k = metadata_subset.size() > 3 ? metadata_subset.substr(3) : "";
    if ((!hc && !lc) || k.empty() || k.find_first_not_of("0123456789") != std::string::npos) {
      throw UsageError("config: metadata_subset must be all, HC-k or LC-k");
    }
  }
  double sum = 0.0;
  for (double r : split) {
    if (!(r >= 0.0)) throw UsageError("config: split ratios must be non-negative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw UsageError("config: split ratios must sum to 1");
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

ModelConfig RunConfig::model_for(const MetadataSchema& schema) const {
  const ModelConfig base = preset == "tiny"
                               ? ModelConfig::tiny()
                               : ModelConfig::vit_small_patch16_224(schema.num_fields(), schema.slot_width(),
                                                                    schema.num_classes());
  json merged = config_to_json(base);
  for (const auto& [key, value] : model_overrides.items()) merged[key] = value;
  ModelConfig mc;
  try {
    mc = config_from_json(merged);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: model: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  mc.num_metadata_slots = schema.num_fields();
  mc.metadata_width = schema.slot_width();
  mc.num_classes = schema.num_classes();
  mc.image_only = image_only;
  try {
    mc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  return mc;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw UsageError("override '" + assignment + "' has an empty key");
    if (!node->is_object()) {
      if (!node->is_null()) throw UsageError("override '" + assignment + "' descends into a non-object");
      *node = json::object();
    }
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

RunSeeds derive_seeds(std::uint64_t seed, std::size_t repeats) {
  Rng rng(seed);
  RunSeeds s;
  s.split = rng.next_u64();
  for (std::size_t r = 0; r < repeats; ++r) s.repeats.push_back(rng.next_u64());
  return s;
}

Dataset load_data(const DataPaths& paths, std::size_t image_size, std::size_t channels) {
  const MetadataSchema schema = MetadataSchema::load(paths.schema);
  return load_dataset(paths.csv, paths.images, schema, image_size, channels);
}

// ---- synth ----

void cmd_synth(const SynthOptions& options) {
  json doc = json::object();
  if (options.spec_file) {
    std::ifstream in(*options.spec_file, std::ios::binary);
    if (!in) throw DataError("cannot read " + options.spec_file->string());
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw UsageError("spec " + options.spec_file->string() + ": " + e.what());
    }
  }
  for (const auto& [key, value] : options.spec_overrides.items()) doc[key] = value;
  SyntheticSpec spec;
  try {
    spec = SyntheticSpec::from_json(doc);
    spec.validate();
  } catch (const json::exception& e) {
    throw UsageError(std::string("spec: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("spec: ") + e.what());
  } catch (const DataError& e) {
    throw UsageError(std::string("spec: ") + e.what());
  }
  make_dir(options.output_dir);
  write_synthetic(generate_synthetic(spec), options.output_dir);
}

// ---- train ----

namespace {

struct PreparedRun {
  Dataset data;  // restricted to the selected fields
  SplitIndices split;
  RunSeeds seeds;
  std::vector<std::string> fields;
  CorrelationReport correlation;
};

PreparedRun prepare_run(const RunConfig& config, const std::string& subset) {
  PreparedRun run;
  const MetadataSchema schema = MetadataSchema::load(config.data.schema);
  const ModelConfig geometry = config.model_for(schema);
  Dataset full = load_dataset(config.data.csv, config.data.images, schema, geometry.image_size,
                              geometry.channels);
  run.seeds = derive_seeds(config.seed, config.repeats);
  run.split = stratified_split(full.labels(), config.split, run.seeds.split);

  // Correlations come from the training split only.
  const std::vector<Sample> train_samples = gather(full.samples, run.split.train);
  run.correlation = correlation_ranking(train_samples, full.schema);
  std::vector<std::size_t> chosen;
  try {
    chosen = select_metadata(run.correlation, subset);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("metadata subset: ") + e.what());
  }
  for (std::size_t f : chosen) run.fields.push_back(full.schema.fields[f].name);
  run.data = select_fields(full, chosen);
  return run;
}

json selection_json(const std::string& subset, const PreparedRun& run) {
  return {{"subset", subset}, {"fields", run.fields}, {"correlation", run.correlation.to_json()}};
}

}  // namespace

TrainOutcome cmd_train(const RunConfig& config, const std::optional<std::string>& source, bool verbose) {
  config.validate();
  PreparedRun run = prepare_run(config, config.metadata_subset);
  const ModelConfig mc = config.model_for(run.data.schema);

  make_dir(config.output_dir);
  const json resolved = config.to_json();
  write_text(config.output_dir / "config.json", source ? *source : resolved.dump(2) + "\n");
  write_text(config.output_dir / "resolved_config.json", resolved.dump(2) + "\n");
  write_text(config.output_dir / "selection.json", selection_json(config.metadata_subset, run).dump(2) + "\n");

  json extra = {{"data", DataPaths{fs::absolute(config.data.csv), fs::absolute(config.data.schema),
                                   fs::absolute(config.data.images)}
                             .to_json()},
                {"fields", run.fields},
                {"classes", run.data.schema.classes},
                {"metadata_subset", config.metadata_subset},
                {"image_only", config.image_only},
                {"split", {{"train", ids_of(run.data, run.split.train)},
                           {"val", ids_of(run.data, run.split.val)},
                           {"test", ids_of(run.data, run.split.test)}}}};

  TrainOutcome outcome;
  const std::string model = model_name(extra);
  std::string summary = MetricsReport::csv_header(run.data.schema.classes);
  for (std::size_t r = 0; r < config.repeats; ++r) {
    const fs::path dir = config.output_dir / run_name(r);
    make_dir(dir);
    TrainConfig tc = config.train;
    tc.seed = run.seeds.repeats[r];
    EpochCallback progress;
    if (verbose) {
      progress = [&, r](const EpochRecord& e) {
        std::cerr << run_name(r) << " epoch " << e.epoch << " loss " << format_double(e.train_loss)
                  << " val_macro_acc " << format_double(e.val_macro_acc) << "\n";
      };
    }
    TrainResult result = train(mc, tc, run.data, run.split.train, run.split.val, progress);
    json run_extra = extra;
    run_extra["train_seed"] = tc.seed;
    run_extra["best_epoch"] = result.best_epoch;
    run_extra["best_val_macro_acc"] =
        std::isnan(result.best_val_macro_acc) ? json(nullptr) : json(result.best_val_macro_acc);
    const fs::path ckpt = dir / "checkpoint.json";
    save_checkpoint(ckpt, mc, result.best, run_extra);
    write_text(dir / "history.csv", result.history_csv());
    outcome.checkpoints.push_back(ckpt);

    if (run.split.test.empty()) continue;
    MetricsReport report = evaluate(result.best, mc, run.data.samples, run.split.test, run.data.schema);
    write_text(dir / "metrics.csv",
               MetricsReport::csv_header(run.data.schema.classes) + report.csv_rows(model));
    write_text(dir / "confusion.csv", report.confusion_csv());
    summary += report.csv_rows(model + "/" + run_name(r));
    outcome.test_reports.push_back(std::move(report));
  }
  if (outcome.test_reports.empty()) {
    warn("train: empty test split, no metrics written");
  } else {
    outcome.mean_report = average_reports(outcome.test_reports);
    summary += outcome.mean_report.csv_rows(model + "/mean");
    write_text(config.output_dir / "metrics.csv", summary);
  }
  return outcome;
}

// ---- eval / explain / project ----

std::vector<std::size_t> split_indices(const json& extra, const Dataset& dataset, const std::string& split) {
  std::vector<std::size_t> idx;
  if (split == "all") {
    idx.resize(dataset.samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
  }
  if (split != "train" && split != "val" && split != "test") {
    throw UsageError("split must be train, val, test or all, got '" + split + "'");
  }
  if (!extra.contains("split") || !extra.at("split").contains(split)) {
    throw DataError("checkpoint records no '" + split + "' split");
  }
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) by_id.emplace(dataset.samples[i].id, i);
  for (const auto& id : extra.at("split").at(split)) {
    const auto it = by_id.find(id.get<std::string>());
    if (it == by_id.end()) throw DataError("sample '" + id.get<std::string>() + "' missing from the dataset");
    idx.push_back(it->second);
  }
  return idx;
}

MetricsReport cmd_eval(const fs::path& checkpoint, const std::string& split, const fs::path& output_dir,
                       const std::optional<DataPaths>& data) {
  LoadedModel m = load_for_checkpoint(checkpoint, data);
  const auto idx = split_indices(m.checkpoint.extra, m.data, split);
  if (idx.empty()) throw DataError("eval: split '" + split + "' is empty");
  MetricsReport report = evaluate(m.checkpoint.params, m.checkpoint.config, m.data.samples, idx, m.data.schema);
  make_dir(output_dir);
  write_text(output_dir / "metrics.csv", MetricsReport::csv_header(m.data.schema.classes) +
                                             report.csv_rows(model_name(m.checkpoint.extra)));
  write_text(output_dir / "confusion.csv", report.confusion_csv());
  return report;
}

void cmd_explain(const ExplainOptions& options) {
  if (options.class_average == !options.sample_ids.empty()) {
    throw UsageError("explain: give sample ids or --class-average, not both");
  }
  LoadedModel m = load_for_checkpoint(options.checkpoint, options.data);
  const ModelConfig& mc = m.checkpoint.config;
  const MetadataSchema& schema = m.data.schema;
  make_dir(options.output_dir);

  if (options.class_average) {
    if (mc.image_only) throw UsageError("explain: class averages need a model with metadata");
    const auto idx = split_indices(m.checkpoint.extra, m.data, options.split);
    const ClassRelevancy rel =
        class_average_metadata_relevancy(m.checkpoint.params, mc, gather(m.data.samples, idx), schema);
    write_text(options.output_dir / "class_relevancy.csv", rel.scores_csv());
    write_text(options.output_dir / "class_annotations.csv", rel.annotations_csv());
    return;
  }

  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < m.data.samples.size(); ++i) by_id.emplace(m.data.samples[i].id, i);
  for (const std::string& id : options.sample_ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("explain: unknown sample id '" + id + "'");
    const Sample& s = m.data.samples[it->second];
    const std::size_t target = options.target ? schema.class_index(*options.target) : s.label;
    const std::vector<std::size_t> one{it->second};
    const RelevancyMap map = explain_sample(make_batch(m.data.samples, one, schema), m.checkpoint.params, mc, target);
    const std::string stem = safe_file_stem(id);
    render_saliency(map, s.image, options.output_dir / ("saliency_" + stem + ".ppm"));
    json meta = json::object();
    for (std::size_t f = 0; f < map.metadata_scores.size(); ++f) meta[schema.fields[f].name] = map.metadata_scores[f];
    const json doc = {{"id", id},
                      {"target_class", schema.classes[target]},
                      {"true_class", schema.classes[s.label]},
                      {"grid_size", map.grid_size},
                      {"image_grid", map.image_grid},
                      {"metadata", meta},
                      {"raw_token_scores", map.raw_token_scores}};
    write_text(options.output_dir / ("relevancy_" + stem + ".json"), doc.dump(2) + "\n");
  }
}

ProjectOutcome cmd_project(const ProjectOptions& options) {
  LoadedModel m = load_for_checkpoint(options.checkpoint, options.data);
  const auto idx = split_indices(m.checkpoint.extra, m.data, options.split);
  const EmbeddingPair emb =
      collect_embeddings(m.checkpoint.params, m.checkpoint.config, m.data.samples, idx, m.data.schema);

  TsneOptions topt;
  topt.perplexity = options.perplexity;
  topt.iterations = options.iterations;
  topt.seed = options.seed;
  try {
    topt.validate(emb.pre.rows());
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("project: ") + e.what());
  }
  const TsneResult pre = tsne_3d(emb.pre, topt);
  const TsneResult post = tsne_3d(emb.post, topt);

  ProjectOutcome out;
  const std::size_t n = emb.pre.rows();
  out.pre_silhouette = silhouette(pre.coords, n, 3, emb.pre.labels);
  out.post_silhouette = silhouette(post.coords, n, 3, emb.post.labels);
  out.pre_kl = pre.kl;
  out.post_kl = post.kl;

  const auto stage_json = [&](const EmbeddingSet& set, const TsneResult& r, double s) {
    std::size_t late_increases = 0;
    for (std::size_t t = r.kl.size() / 2 + 1; t < r.kl.size(); ++t) late_increases += r.kl[t] > r.kl[t - 1];
    return json{{"silhouette", s},
                {"embedding_silhouette", silhouette(set.vectors, n, set.dim, set.labels)},
                {"final_kl", r.kl.empty() ? json(nullptr) : json(r.kl.back())},
                {"late_kl_increases", late_increases},
                {"max_entropy_error", r.max_entropy_error}};
  };
  const json scores = {{"split", options.split},
                       {"samples", n},
                       {"perplexity", options.perplexity},
                       {"iterations", options.iterations},
                       {"seed", options.seed},
                       {"pre_fusion", stage_json(emb.pre, pre, out.pre_silhouette)},
                       {"post_fusion", stage_json(emb.post, post, out.post_silhouette)}};

  make_dir(options.output_dir);
  const auto& classes = m.data.schema.classes;
  write_text(options.output_dir / "projection.csv",
             projection_csv(emb.pre, pre.coords, classes) + projection_csv(emb.post, post.coords, classes, false));
  write_text(options.output_dir / "scores.json", scores.dump(2) + "\n");
  std::string kl = "iteration,pre_fusion,post_fusion\n";
  for (std::size_t t = 0; t < pre.kl.size(); ++t) {
    kl += std::to_string(t) + "," + format_double(pre.kl[t]) + "," + format_double(post.kl[t]) + "\n";
  }
  write_text(options.output_dir / "kl.csv", kl);
  return out;
}

std::vector<std::string> cmd_select_metadata(const RunConfig& config, const std::string& subset) {
  config.validate();
  const PreparedRun run = prepare_run(config, subset);
  make_dir(config.output_dir);
  write_text(config.output_dir / "correlation.json", run.correlation.to_json().dump(2) + "\n");
  write_text(config.output_dir / "selection.json", selection_json(subset, run).dump(2) + "\n");
  return run.fields;
}

// ---- error mapping ----

int run_guarded(const std::function<void()>& fn) {
  const auto report = [](const char* kind, std::string msg) {
    for (char& c : msg)
      if (c == '\n' || c == '\r') c = ' ';
    std::cerr << "error: " << kind << ": " << msg << std::endl;
  };
  try {
    fn();
    return kExitOk;
  } catch (const NumericError& e) {
    report("numeric", e.what());
    return kExitNumeric;
  } catch (const DataError& e) {
    report("data", e.what());
    return kExitData;
  } catch (const std::invalid_argument& e) {
    report("usage", e.what());
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    report("data", e.what());
    return kExitData;
  } catch (const json::exception& e) {
    report("data", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    report("data", e.what());
    return kExitData;
  }
}

}  // namespace vitatt::cli
