// Command-line front end: prepare datasets, train runs, evaluate and compare
// checkpoints, filter languages by dev accuracy, and summarize run
// directories. Every command is deterministic given its inputs and seed.
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sopamorph/cli.hpp"

using namespace sopamorph;

int main(int argc, char** argv) {
  CLI::App app{"pattern-encoder morphology experiments"};
  app.require_subcommand(1);

  // prepare
  std::string data_file, language, out_override, runs_flag;
  std::uint64_t seed = 0;
  PrepareSizes sizes;
  auto* prepare = app.add_subcommand("prepare", "sample train/dev/test splits");
  prepare->add_option("--data", data_file, "UniMorph triplet file")->required();
  prepare->add_option("--language", language, "language id (names the output directory)");
  prepare->add_option("--seed", seed, "sampling seed");
  prepare->add_option("--runs", runs_flag, "runs root (default: $SOPA_MORPH_RUNS or ./runs)");
  prepare->add_option("--out", out_override, "write here instead of <runs>/<language>/prepared");
  prepare->add_option("--train-size", sizes.train, "training examples");
  prepare->add_option("--dev-size", sizes.dev, "development examples");
  prepare->add_option("--test-size", sizes.test, "test examples");

  // train
  std::string config_path, encoder_override;
  std::uint64_t seed_override = 0;
  bool resume = false;
  auto* train = app.add_subcommand("train", "train one (language, task, encoder) run");
  train->add_option("--config", config_path, "experiment config JSON")->required();
  auto* train_seed = train->add_option("--seed", seed_override, "override the config seed");
  train->add_option("--encoder", encoder_override, "override the config encoder");
  train->add_option("--runs", runs_flag, "override the config output root");
  train->add_flag("--resume", resume, "leave a finished run untouched");

  // evaluate
  std::string run_dir, split_name_arg = "test";
  auto* evaluate = app.add_subcommand("evaluate", "exact-match accuracy of a run");
  evaluate->add_option("--run", run_dir, "run directory")->required();
  evaluate->add_option("--split", split_name_arg, "train, dev, or test");

  // filter
  double threshold = 0.40;
  auto* filter = app.add_subcommand("filter", "languages clearing the dev-accuracy bar");
  filter->add_option("--runs", runs_flag, "runs root");
  filter->add_option("--threshold", threshold, "minimum dev accuracy over all tasks");

  // similarity
  std::string run_a, run_b, sim_out = "similarity-report";
  std::size_t top = 10;
  bool no_filter = false;
  auto* similarity = app.add_subcommand("similarity", "compare two runs' checkpoints");
  similarity->add_option("--a", run_a, "first run directory")->required();
  similarity->add_option("--b", run_b, "second run directory")->required();
  similarity->add_option("--out", sim_out, "report directory");
  similarity->add_option("--split", split_name_arg, "train, dev, or test");
  similarity->add_option("--top-t", top, "subwords compared per model");
  similarity->add_flag("--no-filter", no_filter, "keep samples either model decodes wrong");

  // report
  std::string report_out;
  auto* report = app.add_subcommand("report", "accuracy and top-subword tables");
  report->add_option("--runs", runs_flag, "runs root");
  report->add_option("--out", report_out, "table directory (default <runs>/report)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) {
      std::string out = out_override;
      if (out.empty()) {
        if (language.empty())
          throw std::invalid_argument("prepare needs --language (or an explicit --out)");
        out = prepared_dir(resolve_runs_root(runs_flag), language).string();
      }
      const SplitManifest manifest = cmd_prepare(data_file, seed, out, sizes);
      std::cout << "prepared " << out << "\nmanifest " << manifest.id << " ("
                << manifest.train_idx.size() << " train, " << manifest.dev_idx.size()
                << " dev, " << manifest.test_idx.size() << " test)\n";
    } else if (train->parsed()) {
      ExperimentConfig config = load_experiment(config_path);
      if (train_seed->count() > 0) config.train.seed = seed_override;
      if (!encoder_override.empty()) config.encoder = encoder_from_name(encoder_override);
      if (!runs_flag.empty()) config.output = runs_flag;
      const std::string dir = cmd_train(config, resume);
      std::cout << "run " << dir << "\n";
    } else if (evaluate->parsed()) {
      const double accuracy = cmd_evaluate(run_dir, split_from_name(split_name_arg));
      std::cout << "accuracy\t" << accuracy << "\n";
    } else if (filter->parsed()) {
      for (const std::string& kept :
           filter_languages(resolve_runs_root(runs_flag), threshold))
        std::cout << kept << "\n";
    } else if (similarity->parsed()) {
      const SimilarityReport rep = cmd_similarity(
          run_a, run_b, sim_out, split_from_name(split_name_arg), top, !no_filter);
      std::cout << "similarity\t" << rep.aggregate << "\nretained\t" << rep.retained
                << "\nskipped\t" << rep.skipped << "\n";
    } else if (report->parsed()) {
      const std::string root = resolve_runs_root(runs_flag);
      const std::string out =
          report_out.empty() ? (std::filesystem::path(root) / "report").string()
                             : report_out;
      cmd_report(root, out);
      std::cout << "wrote " << out << "/accuracy.tsv and " << out << "/subwords.tsv\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
