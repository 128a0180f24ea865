#include "sopamorph/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "sopamorph/checkpoint.hpp"

namespace sopamorph {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string format_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw std::runtime_error("cannot read " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out.good()) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// Every key of `doc` must be in `allowed`; anything else is a config error.
void reject_unknown_keys(const json& doc, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  for (const auto& [key, value] : doc.items()) {
    (void)value;
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char* name) { return key == name; }) == allowed.end())
      throw std::invalid_argument("unknown key '" + key + "' in " + where);
  }
}

TrainConfig train_from_json(const json& doc) {
  reject_unknown_keys(doc,
                      {"lr", "batch_size", "max_epochs", "early_stop_patience",
                       "lr_decay_factor", "lr_decay_patience", "seed", "grad_clip",
                       "improvement_tolerance", "stop_when_either_stagnates",
                       "stop_at_dev_accuracy"},
                      "train config");
  TrainConfig cfg;
  cfg.lr = doc.value("lr", cfg.lr);
  cfg.batch_size = doc.value("batch_size", cfg.batch_size);
  cfg.max_epochs = doc.value("max_epochs", cfg.max_epochs);
  cfg.early_stop_patience = doc.value("early_stop_patience", cfg.early_stop_patience);
  cfg.lr_decay_factor = doc.value("lr_decay_factor", cfg.lr_decay_factor);
  cfg.lr_decay_patience = doc.value("lr_decay_patience", cfg.lr_decay_patience);
  cfg.seed = doc.value("seed", cfg.seed);
  cfg.grad_clip = doc.value("grad_clip", cfg.grad_clip);
  cfg.improvement_tolerance = doc.value("improvement_tolerance", cfg.improvement_tolerance);
  cfg.stop_when_either_stagnates =
      doc.value("stop_when_either_stagnates", cfg.stop_when_either_stagnates);
  if (doc.contains("stop_at_dev_accuracy") && !doc["stop_at_dev_accuracy"].is_null())
    cfg.stop_at_dev_accuracy = doc["stop_at_dev_accuracy"].get<double>();
  return cfg;
}

json train_to_json(const TrainConfig& cfg) {
  json doc{{"lr", cfg.lr},
           {"batch_size", cfg.batch_size},
           {"max_epochs", cfg.max_epochs},
           {"early_stop_patience", cfg.early_stop_patience},
           {"lr_decay_factor", cfg.lr_decay_factor},
           {"lr_decay_patience", cfg.lr_decay_patience},
           {"seed", cfg.seed},
           {"grad_clip", cfg.grad_clip},
           {"improvement_tolerance", cfg.improvement_tolerance},
           {"stop_when_either_stagnates", cfg.stop_when_either_stagnates}};
  if (cfg.stop_at_dev_accuracy) doc["stop_at_dev_accuracy"] = *cfg.stop_at_dev_accuracy;
  return doc;
}

// Removes the run lock when training ends, normally or by exception.
struct LockFile {
  std::string path;

  explicit LockFile(const fs::path& p) : path(p.string()) {
    const int fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      throw std::runtime_error("run is locked by " + path +
                               " (another writer, or a stale lock to remove)");
    ::close(fd);
  }
  ~LockFile() { ::unlink(path.c_str()); }
  LockFile(const LockFile&) = delete;
  LockFile& operator=(const LockFile&) = delete;
};

// Rebuilds the task dataset a run was trained on from its recorded
// experiment config and the prepared manifest.
TaskDataset rebuild_dataset(const ExperimentConfig& config) {
  const fs::path manifest_path =
      prepared_dir(config.output, config.language) / "manifest.json";
  if (!fs::exists(manifest_path))
    throw std::runtime_error("no prepared manifest at " + manifest_path.string() +
                             "; run prepare first");
  const SplitManifest manifest = manifest_from_json(slurp(manifest_path.string()));
  const ParsedFile parsed = parse_unimorph(config.data);
  const DataSplits splits = splits_from_manifest(parsed.examples, manifest);
  return build_task(splits, config.task);
}

std::string joined(const std::vector<std::string>& symbols, char sep) {
  std::string out;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i) out += sep;
    out += symbols[i];
  }
  return out;
}

}  // namespace

ExperimentConfig experiment_from_json(const std::string& text) {
  const json doc = json::parse(text);
  if (!doc.is_object()) throw std::invalid_argument("experiment config must be an object");
  reject_unknown_keys(
      doc, {"language", "task", "encoder", "data", "train", "patterns", "output"},
      "experiment config");

  ExperimentConfig config;
  config.language = doc.value("language", "");
  if (doc.contains("task")) config.task = task_from_name(doc["task"].get<std::string>());
  if (doc.contains("encoder"))
    config.encoder = encoder_from_name(doc["encoder"].get<std::string>());
  config.data = doc.value("data", "");
  if (doc.contains("train")) config.train = train_from_json(doc["train"]);
  if (doc.contains("patterns")) {
    const json& p = doc["patterns"];
    reject_unknown_keys(p, {"lengths", "count_per_length"}, "patterns");
    config.patterns.lengths = p.value("lengths", config.patterns.lengths);
    config.patterns.count_per_length =
        p.value("count_per_length", config.patterns.count_per_length);
  }
  config.output = doc.value("output", config.output);
  return config;
}

std::string experiment_to_json(const ExperimentConfig& config) {
  nlohmann::ordered_json doc;
  doc["language"] = config.language;
  doc["task"] = task_name(config.task);
  doc["encoder"] = encoder_name(config.encoder);
  doc["data"] = config.data;
  doc["train"] = train_to_json(config.train);
  doc["patterns"] = json{{"lengths", config.patterns.lengths},
                         {"count_per_length", config.patterns.count_per_length}};
  doc["output"] = config.output;
  return doc.dump(2) + "\n";
}

ExperimentConfig load_experiment(const std::string& path) {
  return experiment_from_json(slurp(path));
}

std::string resolve_runs_root(const std::string& explicit_value) {
  if (!explicit_value.empty()) return explicit_value;
  if (const char* env = std::getenv("SOPA_MORPH_RUNS"); env && *env) return env;
  return "runs";
}

fs::path prepared_dir(const std::string& runs_root, const std::string& language) {
  return fs::path(runs_root) / language / "prepared";
}

fs::path run_directory(const ExperimentConfig& config) {
  return fs::path(config.output) / config.language /
         (task_name(config.task) + "-" + encoder_name(config.encoder));
}

SplitManifest cmd_prepare(const std::string& data_file, std::uint64_t seed,
                          const std::string& out_dir, const PrepareSizes& sizes) {
  const ParsedFile parsed = parse_unimorph(data_file);
  const DataSplits splits =
      sample_splits(parsed.examples, seed, sizes.train, sizes.dev, sizes.test);

  fs::create_directories(out_dir);
  const fs::path root(out_dir);
  write_text(root / "manifest.json", manifest_to_json(splits.manifest));

  nlohmann::ordered_json info;
  info["data"] = data_file;
  info["seed"] = seed;
  info["train"] = sizes.train;
  info["dev"] = sizes.dev;
  info["test"] = sizes.test;
  info["skipped_lines"] = parsed.skipped;
  info["manifest_id"] = splits.manifest.id;
  write_text(root / "prepare.json", info.dump(2) + "\n");

  // One human-readable pair file per task: split, source, target.
  for (const Task task : {Task::kAnalysis, Task::kLemmatization, Task::kCopy}) {
    const TaskDataset ds = build_task(splits, task);
    std::string text = "split\tsource\ttarget\n";
    const auto dump = [&](const char* split, const std::vector<SeqPair>& pairs) {
      for (const SeqPair& pair : pairs) {
        text += split;
        text += '\t';
        text += joined(pair.source, ' ');
        text += '\t';
        text += joined(pair.target, ' ');
        text += '\n';
      }
    };
    dump("train", ds.train);
    dump("dev", ds.dev);
    dump("test", ds.test);
    write_text(root / (task_name(task) + ".tsv"), text);
  }
  return splits.manifest;
}

std::string cmd_train(const ExperimentConfig& config, bool resume) {
  if (config.language.empty()) throw std::invalid_argument("experiment needs a language");
  if (config.data.empty()) throw std::invalid_argument("experiment needs a data file");

  const fs::path dir = run_directory(config);
  if (resume && fs::exists(dir / "status.json")) {
    std::cout << "run already finished: " << dir.string() << " (leaving it untouched)\n";
    return dir.string();
  }

  const TaskDataset data = rebuild_dataset(config);

  fs::create_directories(dir);
  LockFile lock(dir / "lock");
  write_text(dir / "experiment.json", experiment_to_json(config));

  ModelConfig mc;
  mc.encoder_type = config.encoder;
  mc.patterns = config.patterns;
  mc.share_embeddings = data.shares_vocab();
  Rng rng(config.train.seed);
  Seq2seqModel model(mc, data.source_vocab, data.target_vocab, rng);

  const TrainResult result =
      train(model, data, config.train, dir.string(), config.language);
  if (result.status == RunStatus::kAbortedNan)
    throw std::runtime_error("training aborted on a non-finite loss; see " +
                             (dir / "status.json").string());
  return dir.string();
}

double cmd_evaluate(const std::string& run_dir, Split split) {
  const fs::path dir(run_dir);
  const ExperimentConfig config = load_experiment((dir / "experiment.json").string());
  const TaskDataset data = rebuild_dataset(config);
  const LoadedCheckpoint best = load_checkpoint((dir / "best.ckpt").string());

  const std::vector<SeqPair>& pairs = split_of(data, split);
  const double accuracy = evaluate_exact_match(best.model, pairs);

  nlohmann::ordered_json doc;
  doc["split"] = split_name(split);
  doc["accuracy"] = accuracy;
  doc["count"] = pairs.size();
  write_text(dir / ("eval-" + split_name(split) + ".json"), doc.dump(2) + "\n");
  return accuracy;
}

std::vector<std::string> filter_languages(const std::string& runs_root, double threshold) {
  if (!fs::is_directory(runs_root))
    throw std::invalid_argument("no runs directory at " + runs_root);

  std::vector<std::string> languages;
  for (const auto& entry : fs::directory_iterator(runs_root))
    if (entry.is_directory()) languages.push_back(entry.path().filename().string());
  std::sort(languages.begin(), languages.end());

  const Task tasks[] = {Task::kAnalysis, Task::kLemmatization, Task::kCopy};
  std::vector<std::string> retained;
  for (const std::string& language : languages) {
    // A language participates once any pattern-encoder run exists for it.
    std::size_t present = 0;
    double min_accuracy = 1.0;
    std::vector<std::string> missing;
    for (const Task task : tasks) {
      const fs::path status = fs::path(runs_root) / language /
                              (task_name(task) + "-" + encoder_name(EncoderType::kSopa)) /
                              "status.json";
      if (!fs::exists(status)) {
        missing.push_back(task_name(task));
        continue;
      }
      const json doc = json::parse(slurp(status.string()));
      if (!doc.contains("best_dev_accuracy")) {
        missing.push_back(task_name(task));
        continue;
      }
      ++present;
      min_accuracy = std::min(min_accuracy, doc["best_dev_accuracy"].get<double>());
    }
    if (present == 0) continue;  // nothing trained here (e.g. prepared only)
    if (!missing.empty())
      throw std::runtime_error("incomplete results for " + language + ": missing " +
                               joined(missing, ','));
    if (min_accuracy >= threshold) retained.push_back(language);
  }
  return retained;
}

SimilarityReport cmd_similarity(const std::string& run_dir_a, const std::string& run_dir_b,
                                const std::string& out_dir, Split split, std::size_t top,
                                bool filter_correct) {
  const auto load_run = [](const std::string& run_dir) {
    const fs::path dir(run_dir);
    const ExperimentConfig config = load_experiment((dir / "experiment.json").string());
    LoadedCheckpoint ckpt = load_checkpoint((dir / "best.ckpt").string());
    TaskDataset data = rebuild_dataset(config);
    if (ckpt.meta.manifest_id != data.manifest.id)
      throw std::invalid_argument("checkpoint in " + run_dir +
                                  " was trained on a different manifest");
    return std::pair<LoadedCheckpoint, TaskDataset>{std::move(ckpt), std::move(data)};
  };

  auto [a, ds_a] = load_run(run_dir_a);
  auto [b, ds_b] = load_run(run_dir_b);
  if (a.meta.manifest_id != b.meta.manifest_id)
    throw std::invalid_argument("the two runs use different data manifests");

  const SimilarityReport report = dataset_similarity(
      a.model, ds_a, b.model, ds_b, split, top, filter_correct, a.meta.language);

  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "similarity.json", similarity_json(report));
  write_text(fs::path(out_dir) / "similarity.tsv", similarity_tsv(report));
  return report;
}

void cmd_report(const std::string& runs_root, const std::string& out_dir) {
  if (!fs::is_directory(runs_root))
    throw std::invalid_argument("no runs directory at " + runs_root);

  std::vector<std::string> languages;
  for (const auto& entry : fs::directory_iterator(runs_root))
    if (entry.is_directory()) languages.push_back(entry.path().filename().string());
  std::sort(languages.begin(), languages.end());

  std::string accuracy = "language\ttask\tencoder\tdev_accuracy\ttest_accuracy\tstatus\n";
  std::vector<SubwordTableRow> subword_rows;

  for (const std::string& language : languages) {
    std::vector<std::string> run_names;
    for (const auto& entry : fs::directory_iterator(fs::path(runs_root) / language)) {
      if (!entry.is_directory()) continue;
      const std::string name = entry.path().filename().string();
      if (name != "prepared") run_names.push_back(name);
    }
    std::sort(run_names.begin(), run_names.end());

    for (const std::string& name : run_names) {
      const fs::path dir = fs::path(runs_root) / language / name;
      const std::size_t dash = name.rfind('-');
      const std::string task = dash == std::string::npos ? name : name.substr(0, dash);
      const std::string encoder = dash == std::string::npos ? "" : name.substr(dash + 1);

      std::string dev = "-", test = "-", status = "incomplete";
      if (fs::exists(dir / "status.json")) {
        const json doc = json::parse(slurp((dir / "status.json").string()));
        status = doc.value("status", "incomplete");
        if (doc.contains("best_dev_accuracy"))
          dev = format_g(doc["best_dev_accuracy"].get<double>());
      }
      if (fs::exists(dir / "eval-test.json")) {
        const json doc = json::parse(slurp((dir / "eval-test.json").string()));
        test = format_g(doc["accuracy"].get<double>());
      }
      accuracy += language + "\t" + task + "\t" + encoder + "\t" + dev + "\t" + test +
                  "\t" + status + "\n";

      // Top subwords for every finished pattern-encoder run whose inputs
      // are still reachable; a run that cannot be rebuilt is only skipped.
      if (status == "incomplete" || encoder != encoder_name(EncoderType::kSopa)) continue;
      try {
        const ExperimentConfig config =
            load_experiment((dir / "experiment.json").string());
        const TaskDataset data = rebuild_dataset(config);
        const LoadedCheckpoint best = load_checkpoint((dir / "best.ckpt").string());
        subword_rows.push_back(
            {language, task, top_subwords(best.model, data, Split::kTest, 10)});
      } catch (const std::exception&) {
        continue;
      }
    }
  }

  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "accuracy.tsv", accuracy);
  write_text(fs::path(out_dir) / "subwords.tsv", subwords_table_tsv(subword_rows));
}

}  // namespace sopamorph
