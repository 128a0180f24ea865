#pragma once
// Training loop: per epoch, shuffle the training pairs, run Adam minibatch
// steps with gradient clipping, then measure teacher-forced dev loss and
// greedy exact-match dev accuracy. A Scheduler turns those two signals into
// early stopping (neither metric improved for `early_stop_patience` epochs)
// and, for the pattern-encoder model, learning-rate decay (dev loss flat for
// `lr_decay_patience` epochs halves the rate). The best checkpoint is the
// epoch with the highest dev accuracy; earlier epochs win ties.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sopamorph/checkpoint.hpp"
#include "sopamorph/model.hpp"
#include "sopamorph/unimorph.hpp"

namespace sopamorph {

struct TrainConfig {
  double lr = 0.001;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 200;
  std::size_t early_stop_patience = 5;
  double lr_decay_factor = 0.5;     // pattern-encoder models only
  std::size_t lr_decay_patience = 4;  // dev-loss epochs without a decrease
  std::uint64_t seed = 0;
  double grad_clip = 5.0;
  // A metric must beat the best seen by more than this to count as improved.
  double improvement_tolerance = 1e-6;
  // Alternative early-stop reading: stop when either single metric stalls
  // for the patience window, instead of requiring both to stall.
  bool stop_when_either_stagnates = false;
  // Harness shortcut: end the run (status converged) once dev accuracy
  // reaches this level. Disabled when unset.
  std::optional<double> stop_at_dev_accuracy;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_accuracy = 0.0;
  double lr = 0.0;           // rate entering the next epoch (post-decay)
  double wall_seconds = 0.0;  // kept out of the deterministic log
};

enum class RunStatus { kConverged, kEarlyStopped, kAbortedNan };

std::string run_status_name(RunStatus status);

// Pure decision logic over the per-epoch dev metrics; drives no I/O and
// touches no model, so schedules can be tested as scripted sequences.
class Scheduler {
 public:
  Scheduler(const TrainConfig& cfg, bool enable_lr_decay);

  struct Decision {
    bool improved_loss = false;      // beat the best dev loss by > tolerance
    bool improved_accuracy = false;  // beat the best dev accuracy by > tolerance
    bool new_best_accuracy = false;  // strictly above every earlier epoch
    bool decayed = false;            // lr was multiplied by the factor
    bool stop = false;               // early stopping fires after this epoch
    double lr = 0.0;                 // rate entering the next epoch
  };

  Decision observe(double dev_loss, double dev_accuracy);

  double lr() const { return lr_; }
  std::size_t decay_events() const { return decay_events_; }
  std::size_t shared_stall() const { return shared_stall_; }
  std::size_t loss_stall() const { return loss_stall_; }
  std::size_t accuracy_stall() const { return accuracy_stall_; }

 private:
  TrainConfig cfg_;
  bool enable_decay_;
  double lr_;
  std::size_t decay_events_ = 0;
  double best_loss_, best_accuracy_;    // tolerance-gated improvement marks
  double best_accuracy_exact_;          // strict best for checkpoint choice
  std::size_t shared_stall_ = 0;        // epochs since either metric improved
  std::size_t loss_stall_ = 0;          // epochs since dev loss improved
  std::size_t accuracy_stall_ = 0;      // epochs since dev accuracy improved
  std::size_t decay_stall_ = 0;         // dev-loss stagnation toward a decay
};

// Fraction of pairs whose greedy decode equals the reference symbol sequence
// exactly; one differing symbol makes the whole prediction wrong.
double evaluate_exact_match(const Seq2seqModel& model, const std::vector<SeqPair>& pairs);

struct TrainResult {
  RunStatus status = RunStatus::kConverged;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_dev_accuracy = 0.0;
  std::string best_path, final_path;  // final_path empty on an aborted run
};

// The deterministic per-epoch log (wall time excluded).
std::string epochs_tsv(const std::vector<EpochRecord>& records);

// Runs the full schedule, writing into run_dir: config.json, epochs.tsv,
// timing.tsv, best.ckpt, final.ckpt, status.json. `language` only labels the
// run and its checkpoints.
TrainResult train(Seq2seqModel& model, const TaskDataset& data, const TrainConfig& cfg,
                  const std::string& run_dir, const std::string& language = "");

}  // namespace sopamorph
