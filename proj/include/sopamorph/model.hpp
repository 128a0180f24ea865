#pragma once
// Two sequence-to-sequence models over character/tag vocabularies. Both use
// the same attention decoder; they differ in how the source is encoded:
//
//   * pattern encoder — the weighted-pattern matcher summarizes the source as
//     one score per pattern (initial decoder state) plus per-position scores
//     (attention memory), each projected to the decoder width;
//   * bilstm encoder — forward and backward LSTM passes, final states
//     concatenated for the initial decoder state and per-position outputs
//     concatenated for the attention memory.

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sopamorph/sopa.hpp"
#include "sopamorph/tensor.hpp"
#include "sopamorph/unimorph.hpp"

namespace sopamorph {

enum class EncoderType { kSopa, kBilstm };

std::string encoder_name(EncoderType type);
EncoderType encoder_from_name(const std::string& name);

struct ModelConfig {
  EncoderType encoder_type = EncoderType::kSopa;
  std::size_t char_embed_dim = 50;
  std::size_t tag_embed_dim = 20;  // decoder-side width when vocabularies differ
  std::size_t hidden = 64;
  std::size_t layers = 1;  // every recurrence is a single-layer cell
  PatternSpec patterns;    // pattern-bank shape for the pattern encoder
  bool restrict_transitions = false;
  // One embedding table serving both source and target lookups. Requires the
  // dataset's vocabularies to be the same object (copy, lemmatization).
  bool share_embeddings = true;
};

// One LSTM recurrence. Gate blocks along the 4H axis are ordered input,
// forget, candidate, output; the forget-gate bias starts at 1 so a fresh
// cell initially retains its state.
struct LstmCell {
  Tensor wx;  // (input_dim, 4*hidden)
  Tensor wh;  // (hidden, 4*hidden)
  Tensor b;   // (1, 4*hidden)

  LstmCell() = default;
  LstmCell(std::size_t input_dim, std::size_t hidden_dim, Rng& rng);

  std::size_t hidden() const { return wh.rows(); }

  // (h', c') from one batched step; x is (B, input_dim), h and c (B, hidden).
  std::pair<Tensor, Tensor> step(const Tensor& x, const Tensor& h, const Tensor& c) const;
};

// Everything the decoder needs from an encoded source batch.
struct EncodedSource {
  Tensor h0, c0;               // (B, hidden) initial decoder state
  std::vector<Tensor> memory;  // per source position, (B, hidden)
  std::vector<Tensor> mask;    // per source position, (B, 1); 0 marks padding
};

struct DecoderStep {
  Tensor logits;     // (B, |target vocab|), pre-softmax
  Tensor h, c;       // (B, hidden) state after this step
  Tensor attention;  // (B, source length); rows sum to 1, padding weights 0
};

class Seq2seqModel {
 public:
  Seq2seqModel(const ModelConfig& config, std::shared_ptr<Vocabulary> source_vocab,
               std::shared_ptr<Vocabulary> target_vocab, Rng& rng);

  const ModelConfig& config() const { return config_; }
  const std::shared_ptr<Vocabulary>& source_vocab() const { return src_vocab_; }
  const std::shared_ptr<Vocabulary>& target_vocab() const { return tgt_vocab_; }
  bool shares_embeddings() const { return config_.share_embeddings; }

  // Stable names; the shared table appears once as "embed.shared".
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;

  // The pattern matcher, or nullptr for the bilstm model.
  const SopaEncoder* sopa() const { return sopa_ ? &*sopa_ : nullptr; }

  EncodedSource encode(const EncodedBatch& batch) const;

  // One decoder step from the previous target symbols (one id per batch row).
  DecoderStep decode_step(const std::vector<std::size_t>& prev_symbols, const Tensor& h,
                          const Tensor& c, const EncodedSource& source) const;

  // Mean negative log-likelihood over the batch's non-pad target positions.
  Tensor forward_teacher_forced(const EncodedBatch& batch) const;

  // Argmax decoding of one framed source; stops at EOS or after
  // 2*source_length + 5 symbols. Returns target ids without SOS/EOS.
  std::vector<std::size_t> greedy_decode(const std::vector<std::size_t>& framed_source) const;

  // Traced pattern run over one framed source, for span analysis. Requires
  // the pattern encoder.
  EncoderOutput match_source(const std::vector<std::size_t>& framed_source) const;

 private:
  ModelConfig config_;
  std::shared_ptr<Vocabulary> src_vocab_, tgt_vocab_;

  Tensor embed_src_;  // (|source vocab|, char_embed_dim)
  Tensor embed_tgt_;  // same storage as embed_src_ when sharing

  std::optional<SopaEncoder> sopa_;
  std::optional<LstmCell> enc_fwd_, enc_bwd_;
  Tensor init_w_, init_b_;  // encoder summary -> tanh-affine -> h0
  Tensor mem_w_, mem_b_;    // per-position encoder output -> affine -> memory

  LstmCell dec_;
  Tensor attn_w_;  // (hidden, hidden) bilinear attention scores
  Tensor comb_w_;  // (2*hidden, hidden), tanh([context; h] @ comb_w), no bias
  Tensor out_w_;   // (hidden, |target vocab|), no bias
};

}  // namespace sopamorph
