// A bank of linear-chain weighted finite-state patterns scored against every
// subword of a boundary-marked word by a differentiable max-sum dynamic
// program.
//
// A pattern of size k has states 0..k-1 (size counts the start and end
// state) and k-1 forward arcs; arc a goes from state a to a+1. Each forward
// arc a owns three scores at input x:
//   main_a = log_sigmoid(u_a.x + bias)   consumes one character, advances
//   eps_a  = log_sigmoid(c_a)            consumes nothing, advances
//   self_a = log_sigmoid(v_a.x + bias)   consumes one character, stays at
//                                        state a (the arc's source state)
// All scores are strictly negative for finite parameters, so a best match
// never pads itself with free moves. A match must consume at least one
// character; its span over the framed input ^w$ is contiguous.
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "sopamorph/tensor.hpp"

namespace sopamorph {

// Scores below this are treated as "no path"; finite so that masked
// positions stay NaN-free under arithmetic.
inline constexpr double kNegInf = -1e30;

struct PatternSpec {
  std::vector<std::size_t> lengths = {3, 4, 5};
  std::size_t count_per_length = 40;

  std::size_t total() const { return lengths.size() * count_per_length; }
};

struct SopaConfig {
  PatternSpec patterns;
  std::size_t embed_dim = 50;
  // When set, an epsilon or self-loop transition must be followed
  // immediately by a main transition (and a match must end with one).
  // Default off: epsilons may chain freely.
  bool restrict_transitions = false;
};

struct MatchResult {
  std::size_t pattern_id = 0;
  double score = kNegInf;
  std::size_t start = 0, end = 0;  // framed-input indices, end exclusive
  std::string subword;
};

// Batched, differentiable view: per-pattern best over the whole word, and
// per position t the best score of a match ending at t. Padded positions
// hold kNegInf in position_scores.
struct SopaOutput {
  Tensor final_scores;                  // (batch, patterns)
  std::vector<Tensor> position_scores;  // one (batch, patterns) per position
};

// Single-word, non-differentiable view with retained backpointers.
struct TraceData;
struct EncoderOutput {
  std::vector<double> final_scores;                  // [patterns]
  std::vector<std::vector<double>> position_scores;  // [position][patterns]
  std::shared_ptr<const TraceData> trace;
};

// Per-arc scores of one pattern at one embedding; eps is input-independent.
struct ArcScoreSet {
  std::vector<double> main, self_loop, eps;  // one entry per forward arc
};

class SopaEncoder {
 public:
  SopaEncoder(SopaConfig config, Rng& rng);

  const SopaConfig& config() const { return config_; }
  std::size_t pattern_count() const { return config_.patterns.total(); }
  std::size_t pattern_length(std::size_t pattern_id) const;

  // Parameters of all patterns sharing one length, arc-major: column
  // arc * count + i belongs to arc `arc` of pattern i within the group.
  struct Group {
    std::size_t length = 0, count = 0;
    Tensor w_main, b_main;  // (dim, count*arcs), (1, count*arcs)
    Tensor w_self, b_self;
    Tensor b_eps;           // (1, count*arcs)
    std::size_t arcs() const { return length - 1; }
  };
  const std::vector<Group>& groups() const { return groups_; }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;

  ArcScoreSet arc_scores(std::size_t pattern_id, const Tensor& embedding) const;

  // Batched max-sum DP. steps[t] is the (batch, dim) embedding of position
  // t; masks[t] is (batch, 1) with 1.0 on real positions. Results for each
  // row equal an unbatched run on that row alone.
  SopaOutput match_batch(const std::vector<Tensor>& steps,
                         const std::vector<Tensor>& masks) const;

  // Unbatched run over one framed word's embeddings (positions x dim),
  // keeping backpointers for span recovery.
  EncoderOutput match(const Tensor& embeddings) const;

  // One best span per pattern. Ties prefer the smallest end position, then
  // the smallest start. The traced path is re-scored and must reproduce the
  // DP value to 1e-9.
  std::vector<MatchResult> recover_subwords(const EncoderOutput& output,
                                            const std::vector<std::string>& framed_word) const;

 private:
  SopaConfig config_;
  std::vector<Group> groups_;
};

// Debug dump: one line per match, "word TAB pattern_id TAB score TAB start
// TAB end TAB subword".
std::string matches_tsv(const std::string& word, const std::vector<MatchResult>& matches);

}  // namespace sopamorph
