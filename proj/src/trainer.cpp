#include "sopamorph/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace sopamorph {

namespace {

void validate(const TrainConfig& cfg) {
  if (cfg.lr <= 0.0) throw std::invalid_argument("trainer: lr must be positive");
  if (cfg.batch_size == 0) throw std::invalid_argument("trainer: batch_size must be positive");
  if (cfg.max_epochs == 0) throw std::invalid_argument("trainer: max_epochs must be positive");
  if (cfg.early_stop_patience < 1 || cfg.lr_decay_patience < 1) {
    throw std::invalid_argument("trainer: patience values must be at least 1");
  }
  if (cfg.lr_decay_factor <= 0.0 || cfg.lr_decay_factor >= 1.0) {
    throw std::invalid_argument("trainer: lr_decay_factor must lie in (0, 1)");
  }
  if (cfg.grad_clip <= 0.0) throw std::invalid_argument("trainer: grad_clip must be positive");
}

std::string format_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("trainer: cannot write " + path);
  out << content;
  if (!out.flush()) throw std::runtime_error("trainer: write failed for " + path);
}

nlohmann::json config_json(const TrainConfig& cfg) {
  nlohmann::json j{{"lr", cfg.lr},
                   {"batch_size", cfg.batch_size},
                   {"max_epochs", cfg.max_epochs},
                   {"early_stop_patience", cfg.early_stop_patience},
                   {"lr_decay_factor", cfg.lr_decay_factor},
                   {"lr_decay_patience", cfg.lr_decay_patience},
                   {"seed", cfg.seed},
                   {"grad_clip", cfg.grad_clip},
                   {"improvement_tolerance", cfg.improvement_tolerance},
                   {"stop_when_either_stagnates", cfg.stop_when_either_stagnates}};
  if (cfg.stop_at_dev_accuracy) j["stop_at_dev_accuracy"] = *cfg.stop_at_dev_accuracy;
  return j;
}

}  // namespace

std::string run_status_name(RunStatus status) {
  switch (status) {
    case RunStatus::kConverged: return "converged";
    case RunStatus::kEarlyStopped: return "early_stopped";
    case RunStatus::kAbortedNan: return "aborted_nan";
  }
  return "unknown";
}

// ---- Scheduler -------------------------------------------------------------------

Scheduler::Scheduler(const TrainConfig& cfg, bool enable_lr_decay)
    : cfg_(cfg),
      enable_decay_(enable_lr_decay),
      lr_(cfg.lr),
      best_loss_(std::numeric_limits<double>::infinity()),
      best_accuracy_(-std::numeric_limits<double>::infinity()),
      best_accuracy_exact_(-std::numeric_limits<double>::infinity()) {
  validate(cfg);
}

Scheduler::Decision Scheduler::observe(double dev_loss, double dev_accuracy) {
  Decision d;
  d.improved_loss = dev_loss < best_loss_ - cfg_.improvement_tolerance;
  d.improved_accuracy = dev_accuracy > best_accuracy_ + cfg_.improvement_tolerance;
  if (d.improved_loss) best_loss_ = dev_loss;
  if (d.improved_accuracy) best_accuracy_ = dev_accuracy;

  d.new_best_accuracy = dev_accuracy > best_accuracy_exact_;  // ties keep the earlier epoch
  if (d.new_best_accuracy) best_accuracy_exact_ = dev_accuracy;

  loss_stall_ = d.improved_loss ? 0 : loss_stall_ + 1;
  accuracy_stall_ = d.improved_accuracy ? 0 : accuracy_stall_ + 1;
  shared_stall_ = (d.improved_loss || d.improved_accuracy) ? 0 : shared_stall_ + 1;

  if (enable_decay_) {
    decay_stall_ = d.improved_loss ? 0 : decay_stall_ + 1;
    if (decay_stall_ >= cfg_.lr_decay_patience) {
      lr_ *= cfg_.lr_decay_factor;
      ++decay_events_;
      decay_stall_ = 0;
      d.decayed = true;
    }
  }

  d.stop = cfg_.stop_when_either_stagnates
               ? (loss_stall_ >= cfg_.early_stop_patience ||
                  accuracy_stall_ >= cfg_.early_stop_patience)
               : shared_stall_ >= cfg_.early_stop_patience;
  d.lr = lr_;
  return d;
}

// ---- evaluation ------------------------------------------------------------------

double evaluate_exact_match(const Seq2seqModel& model, const std::vector<SeqPair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("trainer: cannot evaluate an empty split");
  const Vocabulary& src = *model.source_vocab();
  const Vocabulary& tgt = *model.target_vocab();

  std::size_t hits = 0;
  for (const SeqPair& pair : pairs) {
    std::vector<std::size_t> framed;
    framed.reserve(pair.source.size() + 2);
    framed.push_back(src.id(kWordStart));
    for (const auto& s : pair.source) framed.push_back(src.id(s));
    framed.push_back(src.id(kWordEnd));

    const std::vector<std::size_t> decoded = model.greedy_decode(framed);
    if (decoded.size() != pair.target.size()) continue;
    bool match = true;
    for (std::size_t i = 0; i < decoded.size() && match; ++i) {
      // Compare symbols, not ids: an out-of-vocabulary reference symbol can
      // never be matched by anything the model emits.
      match = tgt.symbol(decoded[i]) == pair.target[i];
    }
    hits += match;
  }
  return double(hits) / double(pairs.size());
}

// ---- the training loop -----------------------------------------------------------

std::string epochs_tsv(const std::vector<EpochRecord>& records) {
  std::string out = "epoch\ttrain_loss\tdev_loss\tdev_accuracy\tlr\n";
  for (const EpochRecord& r : records) {
    out += std::to_string(r.epoch);
    out += '\t';
    out += format_g(r.train_loss);
    out += '\t';
    out += format_g(r.dev_loss);
    out += '\t';
    out += format_g(r.dev_accuracy);
    out += '\t';
    out += format_g(r.lr);
    out += '\n';
  }
  return out;
}

TrainResult train(Seq2seqModel& model, const TaskDataset& data, const TrainConfig& cfg,
                  const std::string& run_dir, const std::string& language) {
  validate(cfg);
  if (data.train.empty() || data.dev.empty()) {
    throw std::invalid_argument("trainer: train and dev splits must be non-empty");
  }

  namespace fs = std::filesystem;
  fs::create_directories(run_dir);
  const auto in_dir = [&](const char* name) { return (fs::path(run_dir) / name).string(); };

  CheckpointMeta meta;
  meta.language = language;
  meta.task = task_name(data.task);
  meta.manifest_id = data.manifest.id;

  {
    nlohmann::json cj = config_json(cfg);
    cj["encoder"] = encoder_name(model.config().encoder_type);
    cj["language"] = language;
    cj["task"] = meta.task;
    cj["manifest_id"] = meta.manifest_id;
    write_text(in_dir("config.json"), cj.dump(2) + "\n");
  }

  Adam opt(model.parameters(), cfg.lr);
  Scheduler sched(cfg, model.config().encoder_type == EncoderType::kSopa);
  Rng shuffle_rng = Rng(cfg.seed).derive(1000);

  // Dev batches never change; encode them once.
  const std::vector<EncodedBatch> dev_batches =
      encode_batches(data, data.dev, cfg.batch_size);

  TrainResult result;
  std::string timing = "epoch\twall_seconds\n";
  bool aborted = false;
  std::string abort_reason;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs && !aborted; ++epoch) {
    const auto started = std::chrono::steady_clock::now();

    std::vector<SeqPair> shuffled = data.train;
    shuffle_rng.shuffle(shuffled);

    double train_loss_sum = 0.0;
    std::size_t train_examples = 0;
    for (const EncodedBatch& batch : encode_batches(data, shuffled, cfg.batch_size)) {
      double loss_value = 0.0;
      try {
        Tape tape;
        TapeScope scope(tape);
        const Tensor loss = model.forward_teacher_forced(batch);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
          throw std::runtime_error("loss is not finite");
        }
        opt.zero_grad();
        tape.backward(loss);
        clip_grad_norm(model.parameters(), cfg.grad_clip);
        opt.step();
      } catch (const std::runtime_error& e) {
        aborted = true;
        abort_reason = e.what();
        break;
      }
      train_loss_sum += loss_value * double(batch.batch);
      train_examples += batch.batch;
    }
    if (aborted) {
      // Diagnostic record for the failed epoch; parameters are not saved.
      nlohmann::json sj{{"status", run_status_name(RunStatus::kAbortedNan)},
                        {"failed_epoch", epoch},
                        {"reason", abort_reason},
                        {"epochs_completed", result.epochs.size()}};
      write_text(in_dir("status.json"), sj.dump(2) + "\n");
      break;
    }

    double dev_loss_sum = 0.0;
    std::size_t dev_examples = 0;
    for (const EncodedBatch& batch : dev_batches) {
      dev_loss_sum += model.forward_teacher_forced(batch).item() * double(batch.batch);
      dev_examples += batch.batch;
    }
    const double dev_loss = dev_loss_sum / double(dev_examples);
    const double dev_accuracy = evaluate_exact_match(model, data.dev);

    const Scheduler::Decision decision = sched.observe(dev_loss, dev_accuracy);
    if (decision.decayed) opt.set_lr(decision.lr);

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = train_loss_sum / double(train_examples);
    record.dev_loss = dev_loss;
    record.dev_accuracy = dev_accuracy;
    record.lr = decision.lr;
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.epochs.push_back(record);
    timing += std::to_string(epoch) + "\t" + format_g(record.wall_seconds) + "\n";

    if (decision.new_best_accuracy) {
      meta.epoch = int(epoch);
      meta.dev_accuracy = dev_accuracy;
      result.best_epoch = epoch;
      result.best_dev_accuracy = dev_accuracy;
      result.best_path = in_dir("best.ckpt");
      save_checkpoint(result.best_path, model, meta);
    }

    if (cfg.stop_at_dev_accuracy && dev_accuracy >= *cfg.stop_at_dev_accuracy) {
      result.status = RunStatus::kConverged;
      break;
    }
    if (decision.stop) {
      result.status = RunStatus::kEarlyStopped;
      break;
    }
  }

  write_text(in_dir("epochs.tsv"), epochs_tsv(result.epochs));
  write_text(in_dir("timing.tsv"), timing);

  if (aborted) {
    result.status = RunStatus::kAbortedNan;
    return result;
  }

  CheckpointMeta final_meta = meta;
  final_meta.epoch = int(result.epochs.size());
  final_meta.dev_accuracy = result.epochs.empty() ? 0.0 : result.epochs.back().dev_accuracy;
  result.final_path = in_dir("final.ckpt");
  save_checkpoint(result.final_path, model, final_meta);

  nlohmann::json sj{{"status", run_status_name(result.status)},
                    {"epochs_run", result.epochs.size()},
                    {"best_epoch", result.best_epoch},
                    {"best_dev_accuracy", result.best_dev_accuracy},
                    {"final_lr", sched.lr()}};
  write_text(in_dir("status.json"), sj.dump(2) + "\n");
  return result;
}

}  // namespace sopamorph
