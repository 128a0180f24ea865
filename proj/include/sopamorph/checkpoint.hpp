#pragma once
// Single-file model persistence: one versioned JSON document holding the
// model configuration, both vocabularies, every named parameter, and the
// training metadata. Parameter values survive the round trip bit-exactly.

#include <string>

#include "sopamorph/model.hpp"

namespace sopamorph {

struct CheckpointMeta {
  int epoch = 0;
  double dev_accuracy = 0.0;
  std::string language;
  std::string task;
  std::string manifest_id;  // fingerprint of the data split the model saw
};

void save_checkpoint(const std::string& path, const Seq2seqModel& model,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Seq2seqModel model;
  CheckpointMeta meta;
};

// Rebuilds the model from a saved file. Throws std::runtime_error on missing
// files, version mismatches, or parameter lists that disagree with the
// configuration's architecture.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace sopamorph
