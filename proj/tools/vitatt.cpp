// SPDX-License-Identifier: Apache-2.0
// vitatt command-line front end.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "vitatt/cli.hpp"
#include "vitatt/csv.hpp"
#include "vitatt/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vitatt;
using namespace vitatt::cli;

namespace {

struct RunFlags {
  std::string config;
  std::string data;
  std::string out;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> repeats;
  std::optional<std::string> subset;
  bool image_only = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("-c,--config", f.config, "Run config JSON");
  cmd->add_option("-d,--data", f.data, "Dataset directory (metadata.csv, schema.json, images/)");
  cmd->add_option("-o,--out", f.out, "Output directory");
  cmd->add_option("--seed", f.seed, "Run seed");
  cmd->add_option("--set", f.sets, "Config override key.path=value (repeatable)");
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Config file (if any), then flags, then --set overrides.
std::pair<RunConfig, std::optional<std::string>> build_run_config(const RunFlags& f) {
  json doc = json::object();
  fs::path base;
  std::optional<std::string> source;
  if (!f.config.empty()) {
    source = read_file(f.config);
    try {
      doc = json::parse(*source);
    } catch (const json::parse_error& e) {
      throw UsageError("config " + f.config + ": " + e.what());
    }
    base = fs::path(f.config).parent_path();
  }
  if (!f.data.empty()) doc["data"] = {{"dir", fs::absolute(f.data).string()}};
  if (!f.out.empty()) doc["output_dir"] = fs::absolute(f.out).string();
  if (f.seed) doc["seed"] = *f.seed;
  if (f.epochs) doc["train"]["epochs"] = *f.epochs;
  if (f.repeats) doc["repeats"] = *f.repeats;
  if (f.subset) doc["metadata_subset"] = *f.subset;
  if (f.image_only) doc["image_only"] = true;
  for (const auto& s : f.sets) apply_override(doc, s);
  return {RunConfig::from_json(doc, base), source};
}

std::optional<DataPaths> data_override(const std::string& dir) {
  if (dir.empty()) return std::nullopt;
  return DataPaths::from_dir(dir);
}

std::string fmt(double v) { return std::isnan(v) ? "nan" : format_double(v); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image + tabular metadata fusion classifier: synthetic data, training, evaluation, "
               "explanation and latent-space projection."};
  app.require_subcommand(1);

  // synth
  std::string synth_spec, synth_out;
  std::optional<std::uint64_t> synth_seed;
  std::vector<std::string> synth_sets;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("-s,--spec", synth_spec, "Synthetic spec JSON");
  synth->add_option("-o,--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--set", synth_sets, "Spec override key=value (repeatable)");

  // train
  RunFlags train_flags;
  bool verbose = false;
  auto* train = app.add_subcommand("train", "Train (optionally repeated) and evaluate on the test split");
  add_run_flags(train, train_flags);
  train->add_option("--epochs", train_flags.epochs, "Training epochs");
  train->add_option("--repeats", train_flags.repeats, "Independent training runs");
  train->add_option("--metadata-subset", train_flags.subset, "all | HC-k | LC-k");
  train->add_flag("--image-only", train_flags.image_only, "Train the image encoder without metadata or fusion");
  train->add_flag("-v,--verbose", verbose, "Per-epoch progress on stderr");

  // eval
  std::string eval_ckpt, eval_split = "test", eval_out, eval_data;
  auto* eval = app.add_subcommand("eval", "Metrics of a checkpoint on one split");
  eval->add_option("-k,--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--split", eval_split, "train | val | test | all");
  eval->add_option("-o,--out", eval_out, "Output directory")->required();
  eval->add_option("-d,--data", eval_data, "Dataset directory (default: the one used in training)");

  // explain
  ExplainOptions ex;
  std::string ex_ckpt, ex_out, ex_data;
  std::optional<std::string> ex_target;
  auto* explain = app.add_subcommand("explain", "Relevancy maps per sample or per-class metadata averages");
  explain->add_option("-k,--checkpoint", ex_ckpt, "Checkpoint file")->required();
  explain->add_option("-o,--out", ex_out, "Output directory")->required();
  explain->add_option("ids", ex.sample_ids, "Sample ids");
  explain->add_flag("--class-average", ex.class_average, "Per-class mean metadata relevancy");
  explain->add_option("--split", ex.split, "Split for --class-average");
  explain->add_option("--target", ex_target, "Target class name (default: the true class)");
  explain->add_option("-d,--data", ex_data, "Dataset directory (default: the one used in training)");

  // project
  ProjectOptions pr;
  std::string pr_ckpt, pr_out, pr_data;
  auto* project = app.add_subcommand("project", "3-D t-SNE of class embeddings before and after fusion");
  project->add_option("-k,--checkpoint", pr_ckpt, "Checkpoint file")->required();
  project->add_option("-o,--out", pr_out, "Output directory")->required();
  project->add_option("--split", pr.split, "train | val | test | all");
  project->add_option("--perplexity", pr.perplexity, "t-SNE perplexity (< N/3)");
  project->add_option("--iterations", pr.iterations, "t-SNE iterations");
  project->add_option("--seed", pr.seed, "t-SNE seed");
  project->add_option("-d,--data", pr_data, "Dataset directory (default: the one used in training)");

  // select-metadata
  RunFlags sel_flags;
  std::string sel_subset;
  auto* select = app.add_subcommand("select-metadata", "Rank fields by label correlation on the training split");
  add_run_flags(select, sel_flags);
  select->add_option("--subset", sel_subset, "all | HC-k | LC-k")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (char& c : msg)
      if (c == '\n') c = ' ';
    std::cerr << "error: usage: " << msg << std::endl;
    return kExitUsage;
  }

  return run_guarded([&] {
    if (synth->parsed()) {
      SynthOptions o;
      if (!synth_spec.empty()) o.spec_file = synth_spec;
      for (const auto& s : synth_sets) apply_override(o.spec_overrides, s);
      if (synth_seed) o.spec_overrides["seed"] = *synth_seed;
      o.output_dir = synth_out;
      cmd_synth(o);
      std::cout << "wrote " << synth_out << "\n";
    } else if (train->parsed()) {
      const auto [config, source] = build_run_config(train_flags);
      const TrainOutcome out = cmd_train(config, source, verbose);
      for (std::size_t r = 0; r < out.test_reports.size(); ++r) {
        std::cout << out.checkpoints[r].string() << " test macro_acc " << fmt(out.test_reports[r].acc)
                  << " macro_auc " << fmt(out.test_reports[r].auc) << "\n";
      }
      if (!out.test_reports.empty()) {
        std::cout << "mean test macro_acc " << fmt(out.mean_report.acc) << " macro_auc "
                  << fmt(out.mean_report.auc) << "\n";
      }
    } else if (eval->parsed()) {
      const MetricsReport r = cmd_eval(eval_ckpt, eval_split, eval_out, data_override(eval_data));
      std::cout << "macro_acc " << fmt(r.acc) << " macro_pre " << fmt(r.pre) << " macro_sen " << fmt(r.sen)
                << " macro_spe " << fmt(r.spe) << " macro_auc " << fmt(r.auc) << "\n";
    } else if (explain->parsed()) {
      ex.checkpoint = ex_ckpt;
      ex.output_dir = ex_out;
      ex.target = ex_target;
      ex.data = data_override(ex_data);
      cmd_explain(ex);
      std::cout << "wrote " << ex_out << "\n";
    } else if (project->parsed()) {
      pr.checkpoint = pr_ckpt;
      pr.output_dir = pr_out;
      pr.data = data_override(pr_data);
      const ProjectOutcome o = cmd_project(pr);
      std::cout << "silhouette pre_fusion " << fmt(o.pre_silhouette) << " post_fusion "
                << fmt(o.post_silhouette) << "\n";
    } else if (select->parsed()) {
      const auto [config, source] = build_run_config(sel_flags);
      for (const auto& name : cmd_select_metadata(config, sel_subset)) std::cout << name << "\n";
    }
  });
}
