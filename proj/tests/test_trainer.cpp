#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "sopamorph/trainer.hpp"

using namespace sopamorph;

namespace {

namespace fs = std::filesystem;

std::shared_ptr<Vocabulary> toy_vocab() {
  auto v = std::make_shared<Vocabulary>();
  v->add(kWordStart);
  v->add("a");
  v->add("b");
  v->add(kWordEnd);
  return v;
}

TaskDataset toy_dataset(std::vector<SeqPair> train, std::vector<SeqPair> dev = {}) {
  TaskDataset ds;
  ds.task = Task::kCopy;
  ds.source_vocab = toy_vocab();
  ds.target_vocab = ds.source_vocab;
  ds.train = std::move(train);
  ds.dev = dev.empty() ? ds.train : std::move(dev);
  ds.manifest.id = "0123456789abcdef";
  return ds;
}

// Every unique word of length 1..3 over {a, b}, paired with itself.
std::vector<SeqPair> all_short_words() {
  std::vector<SeqPair> pairs;
  const std::vector<std::string> sym = {"a", "b"};
  for (std::size_t len = 1; len <= 3; ++len) {
    for (std::size_t code = 0; code < (std::size_t(1) << len); ++code) {
      std::vector<std::string> w;
      for (std::size_t i = 0; i < len; ++i) w.push_back(sym[(code >> i) & 1]);
      pairs.push_back({w, w});
    }
  }
  return pairs;  // 2 + 4 + 8 = 14 pairs
}

ModelConfig tiny_config(EncoderType type) {
  ModelConfig cfg;
  cfg.encoder_type = type;
  cfg.char_embed_dim = 6;
  cfg.hidden = 8;
  cfg.patterns.lengths = {2, 3};
  cfg.patterns.count_per_length = 1;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return text;
}

}  // namespace

TEST_CASE("five stagnant epochs on both metrics trigger the early stop") {
  TrainConfig cfg;
  Scheduler sched(cfg, /*enable_lr_decay=*/false);
  const std::vector<double> losses = {5, 4, 3, 3, 3, 3, 3, 3};
  for (std::size_t i = 0; i < losses.size(); ++i) {
    const auto d = sched.observe(losses[i], 0.25);  // flat accuracy throughout
    if (i + 1 < losses.size()) {
      CHECK_FALSE(d.stop);
    } else {
      CHECK(d.stop);  // fires exactly at the eighth epoch
      CHECK(sched.shared_stall() == 5);
    }
    CHECK(d.lr == 0.001);  // no decay without the flag
  }
}

TEST_CASE("four stagnant dev losses halve the rate at the sixth epoch") {
  TrainConfig cfg;
  Scheduler sched(cfg, /*enable_lr_decay=*/true);
  const std::vector<double> losses = {5, 4, 4, 4, 4, 4};
  std::vector<double> recorded;
  bool stopped = false;
  for (double loss : losses) {
    const auto d = sched.observe(loss, 0.5);
    recorded.push_back(d.lr);
    stopped = stopped || d.stop;
  }
  CHECK(recorded == std::vector<double>{0.001, 0.001, 0.001, 0.001, 0.001, 0.0005});
  CHECK(sched.decay_events() == 1);
  CHECK_FALSE(stopped);  // stall is only 4 of the 5-epoch patience
}

TEST_CASE("the decay counter is independent and compounds the factor") {
  TrainConfig cfg;
  Scheduler sched(cfg, /*enable_lr_decay=*/true);
  // One improvement, then pure stagnation: decays at epochs 5 and 9.
  std::vector<std::size_t> decay_epochs;
  for (std::size_t epoch = 1; epoch <= 9; ++epoch) {
    const auto d = sched.observe(5.0, 0.0);
    if (d.decayed) decay_epochs.push_back(epoch);
  }
  CHECK(decay_epochs == std::vector<std::size_t>{5, 9});
  CHECK(sched.decay_events() == 2);
  CHECK(sched.lr() == 0.001 * 0.5 * 0.5);
}

TEST_CASE("improvement in a single metric keeps the conjunctive stop at bay") {
  TrainConfig cfg;
  Scheduler conjunctive(cfg, false);
  cfg.stop_when_either_stagnates = true;
  Scheduler disjunctive(cfg, false);

  // Loss improves only at the first epoch; accuracy improves every fourth.
  std::size_t conj_stop = 0, disj_stop = 0;
  for (std::size_t epoch = 1; epoch <= 12; ++epoch) {
    const double acc = 0.1 * double((epoch + 3) / 4);
    if (conjunctive.observe(1.0, acc).stop && conj_stop == 0) conj_stop = epoch;
    if (disjunctive.observe(1.0, acc).stop && disj_stop == 0) disj_stop = epoch;
  }
  CHECK(conj_stop == 0);   // accuracy keeps resetting the shared window
  CHECK(disj_stop == 6);   // loss alone stalls for 5 epochs by then
}

TEST_CASE("best-accuracy bookkeeping is strict so ties keep the earlier epoch") {
  TrainConfig cfg;
  Scheduler sched(cfg, false);
  CHECK(sched.observe(1.0, 0.5).new_best_accuracy);
  CHECK_FALSE(sched.observe(1.0, 0.5).new_best_accuracy);  // tie: earlier wins
  CHECK(sched.observe(1.0, 0.625).new_best_accuracy);
  CHECK_FALSE(sched.observe(1.0, 0.624).new_best_accuracy);
}

TEST_CASE("scheduler rejects invalid configurations") {
  TrainConfig cfg;
  cfg.lr_decay_factor = 1.0;
  CHECK_THROWS_AS(Scheduler(cfg, true), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.early_stop_patience = 0;
  CHECK_THROWS_AS(Scheduler(cfg, true), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.lr = 0.0;
  CHECK_THROWS_AS(Scheduler(cfg, true), std::invalid_argument);
}

TEST_CASE("exact-match evaluation accepts only full reproductions") {
  TaskDataset ds = toy_dataset({{{"a", "b"}, {"a", "b"}}});
  Rng rng(15);
  Seq2seqModel model(tiny_config(EncoderType::kSopa), ds.source_vocab, ds.target_vocab, rng);

  CHECK_THROWS_AS(evaluate_exact_match(model, {}), std::invalid_argument);

  // Overfit the single pair until the model echoes it, then check both a hit
  // and a near-miss reference.
  const EncodedBatch batch = encode_batch(ds, ds.train);
  Adam opt(model.parameters(), 0.01);
  for (int step = 0; step < 300; ++step) {
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = model.forward_teacher_forced(batch);
    opt.zero_grad();
    tape.backward(loss);
    opt.step();
  }
  CHECK(evaluate_exact_match(model, ds.train) == 1.0);

  const SeqPair one_symbol_off{{"a", "b"}, {"a", "a"}};
  CHECK(evaluate_exact_match(model, {one_symbol_off}) == 0.0);
  CHECK(evaluate_exact_match(model, {ds.train[0], one_symbol_off}) == 0.5);

  // A reference containing an out-of-vocabulary symbol cannot be matched.
  const SeqPair oov{{"a", "b"}, {"a", "z"}};
  CHECK(evaluate_exact_match(model, {oov}) == 0.0);
}

TEST_CASE("an untrained model scores near zero on a copy split") {
  std::vector<SeqPair> pairs = all_short_words();
  while (pairs.size() < 50) pairs.push_back(pairs[pairs.size() % 14]);
  TaskDataset ds = toy_dataset(pairs);
  Rng rng(99);
  Seq2seqModel model(tiny_config(EncoderType::kBilstm), ds.source_vocab, ds.target_vocab, rng);
  CHECK(evaluate_exact_match(model, ds.dev) <= 0.1);
}

TEST_CASE("a full run keeps its books straight and writes its run directory") {
  TaskDataset ds = toy_dataset(all_short_words());
  Rng rng(7);
  Seq2seqModel model(tiny_config(EncoderType::kSopa), ds.source_vocab, ds.target_vocab, rng);

  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.batch_size = 8;
  cfg.max_epochs = 150;
  cfg.seed = 7;

  const std::string dir = (fs::temp_directory_path() / "sopamorph_run_smoke").string();
  fs::remove_all(dir);
  const TrainResult result = train(model, ds, cfg, dir, "toy");

  REQUIRE_FALSE(result.epochs.empty());
  CHECK(result.status != RunStatus::kAbortedNan);

  // Optimization made real progress even if the toy stops short of exact match.
  CHECK(result.epochs.back().dev_loss < 0.9 * result.epochs.front().dev_loss);

  // The recorded best equals the maximum over the epoch log.
  double max_acc = 0.0;
  for (const auto& r : result.epochs) max_acc = std::max(max_acc, r.dev_accuracy);
  CHECK(result.best_dev_accuracy == max_acc);

  // The rate never increases and always equals lr times a power of the factor.
  double prev = cfg.lr;
  for (const auto& r : result.epochs) {
    CHECK(r.lr <= prev);
    prev = r.lr;
    const double ratio = std::log(cfg.lr / r.lr) / std::log(2.0);
    CHECK(std::abs(ratio - std::round(ratio)) < 1e-12);
  }

  for (const char* name :
       {"config.json", "epochs.tsv", "timing.tsv", "best.ckpt", "final.ckpt", "status.json"}) {
    CHECK(fs::exists(fs::path(dir) / name));
  }

  // The persisted log matches the in-memory records, row for row.
  const std::string tsv = slurp((fs::path(dir) / "epochs.tsv").string());
  CHECK(tsv == epochs_tsv(result.epochs));
  CHECK(std::count(tsv.begin(), tsv.end(), '\n') == long(result.epochs.size()) + 1);

  // Reloading the best checkpoint reproduces the recorded dev accuracy.
  LoadedCheckpoint best = load_checkpoint(result.best_path);
  CHECK(best.meta.epoch == int(result.best_epoch));
  CHECK(best.meta.dev_accuracy == result.best_dev_accuracy);
  CHECK(best.meta.manifest_id == "0123456789abcdef");
  CHECK(evaluate_exact_match(best.model, ds.dev) == result.best_dev_accuracy);
  fs::remove_all(dir);
}

TEST_CASE("the trainer drives a single unambiguous pair to exact match") {
  TaskDataset ds = toy_dataset({{{"a", "b"}, {"a", "b"}}});
  Rng rng(15);
  Seq2seqModel model(tiny_config(EncoderType::kSopa), ds.source_vocab, ds.target_vocab, rng);

  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.batch_size = 1;
  cfg.max_epochs = 400;
  cfg.early_stop_patience = 50;
  cfg.seed = 3;
  cfg.stop_at_dev_accuracy = 1.0;

  const std::string dir = (fs::temp_directory_path() / "sopamorph_run_exact").string();
  fs::remove_all(dir);
  const TrainResult result = train(model, ds, cfg, dir, "toy");

  CHECK(result.status == RunStatus::kConverged);
  CHECK(result.best_dev_accuracy == 1.0);
  CHECK(result.epochs.size() < 400);  // the accuracy target ended the run early
  CHECK(result.epochs.back().dev_accuracy == 1.0);
  CHECK(fs::exists(fs::path(dir) / "final.ckpt"));

  // The live model keeps the trained weights: it reproduces the pair directly.
  std::vector<std::size_t> framed;
  framed.push_back(ds.source_vocab->id(kWordStart));
  for (const auto& s : ds.train[0].source) framed.push_back(ds.source_vocab->id(s));
  framed.push_back(ds.source_vocab->id(kWordEnd));
  std::vector<std::size_t> expect;
  for (const auto& s : ds.train[0].target) expect.push_back(ds.target_vocab->id(s));
  CHECK(model.greedy_decode(framed) == expect);
  fs::remove_all(dir);
}

TEST_CASE("identical seeds reproduce the run byte for byte") {
  TaskDataset ds = toy_dataset(all_short_words());
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.batch_size = 8;
  cfg.max_epochs = 6;  // a fixed, short window is enough to compare
  cfg.seed = 21;

  auto run_once = [&](const std::string& dir) {
    fs::remove_all(dir);
    Rng rng(cfg.seed);
    Seq2seqModel model(tiny_config(EncoderType::kSopa), ds.source_vocab, ds.target_vocab,
                       rng);
    train(model, ds, cfg, dir, "toy");
  };

  const std::string dir_a = (fs::temp_directory_path() / "sopamorph_det_a").string();
  const std::string dir_b = (fs::temp_directory_path() / "sopamorph_det_b").string();
  run_once(dir_a);
  run_once(dir_b);

  CHECK(slurp(dir_a + "/epochs.tsv") == slurp(dir_b + "/epochs.tsv"));
  CHECK(slurp(dir_a + "/best.ckpt") == slurp(dir_b + "/best.ckpt"));
  CHECK(slurp(dir_a + "/final.ckpt") == slurp(dir_b + "/final.ckpt"));
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("a poisoned parameter aborts the run with a diagnostic record") {
  TaskDataset ds = toy_dataset(all_short_words());
  Rng rng(3);
  Seq2seqModel model(tiny_config(EncoderType::kSopa), ds.source_vocab, ds.target_vocab, rng);
  model.parameters()[0].data()[0] = std::nan("");

  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 5;
  const std::string dir = (fs::temp_directory_path() / "sopamorph_run_nan").string();
  fs::remove_all(dir);
  const TrainResult result = train(model, ds, cfg, dir, "toy");

  CHECK(result.status == RunStatus::kAbortedNan);
  CHECK(result.epochs.empty());  // the very first batch fails
  CHECK(result.final_path.empty());
  CHECK_FALSE(fs::exists(fs::path(dir) / "final.ckpt"));
  const std::string status = slurp((fs::path(dir) / "status.json").string());
  CHECK(status.find("aborted_nan") != std::string::npos);
  CHECK(status.find("failed_epoch") != std::string::npos);
  fs::remove_all(dir);
}
