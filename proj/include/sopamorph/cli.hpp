// Experiment orchestration behind the command-line tool: dataset
// preparation, per-(language, task, encoder) training runs, checkpoint
// evaluation, the dev-accuracy language filter, pairwise model-similarity
// reports, and run-directory summaries.
//
// Directory layout under one runs root:
//   <root>/<language>/prepared/            manifest + per-task pair files
//   <root>/<language>/<task>-<encoder>/    one training run
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sopamorph/model.hpp"
#include "sopamorph/similarity.hpp"
#include "sopamorph/trainer.hpp"
#include "sopamorph/unimorph.hpp"

namespace sopamorph {

// Everything one training run needs, serializable as a single JSON document.
// Unknown keys anywhere in the document are rejected.
struct ExperimentConfig {
  std::string language;
  Task task = Task::kCopy;
  EncoderType encoder = EncoderType::kSopa;
  std::string data;  // UniMorph triplet file
  TrainConfig train;
  PatternSpec patterns;
  std::string output = "runs";
};

ExperimentConfig experiment_from_json(const std::string& text);
std::string experiment_to_json(const ExperimentConfig& config);
ExperimentConfig load_experiment(const std::string& path);

// Runs root resolution: an explicit value wins, then the SOPA_MORPH_RUNS
// environment variable, then "runs".
std::string resolve_runs_root(const std::string& explicit_value = "");

std::filesystem::path prepared_dir(const std::string& runs_root, const std::string& language);
std::filesystem::path run_directory(const ExperimentConfig& config);

struct PrepareSizes {
  std::size_t train = 10000, dev = 2000, test = 2000;
};

// Samples the splits and writes manifest.json, prepare.json, and one
// pair file per task into out_dir. Deterministic for a fixed seed.
SplitManifest cmd_prepare(const std::string& data_file, std::uint64_t seed,
                          const std::string& out_dir, const PrepareSizes& sizes = {});

// Trains one run into run_directory(config) and returns that path. A
// finished run is left untouched when `resume` is set; an aborted run
// raises so the process exits nonzero.
std::string cmd_train(const ExperimentConfig& config, bool resume = false);

// Exact-match accuracy of the run's best checkpoint on one split; also
// written to <run>/eval-<split>.json.
double cmd_evaluate(const std::string& run_dir, Split split);

// Languages whose pattern-encoder runs reach `threshold` dev accuracy on
// every task. A language with some but not all tasks trained is an error.
std::vector<std::string> filter_languages(const std::string& runs_root,
                                          double threshold = 0.40);

// Similarity of two runs' best checkpoints over their rebuilt datasets;
// writes similarity.json and similarity.tsv into out_dir.
SimilarityReport cmd_similarity(const std::string& run_dir_a, const std::string& run_dir_b,
                                const std::string& out_dir, Split split = Split::kTest,
                                std::size_t top = 10, bool filter_correct = true);

// Accuracy table (accuracy.tsv) and top-subword table (subwords.tsv)
// regenerated from the run directories under runs_root.
void cmd_report(const std::string& runs_root, const std::string& out_dir);

}  // namespace sopamorph
