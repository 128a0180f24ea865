#include "sopamorph/sopa.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace sopamorph {

namespace {

void check(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void validate_config(const SopaConfig& c) {
  check(!c.patterns.lengths.empty(), "sopa: no pattern lengths configured");
  check(c.patterns.count_per_length > 0, "sopa: count_per_length must be positive");
  check(c.embed_dim > 0, "sopa: embed_dim must be positive");
  for (std::size_t len : c.patterns.lengths) {
    check(len >= 2, "sopa: pattern size must be at least 2 (start and end state)");
  }
  auto sorted = c.patterns.lengths;
  std::sort(sorted.begin(), sorted.end());
  check(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
        "sopa: pattern lengths must be distinct");
}

}  // namespace

SopaEncoder::SopaEncoder(SopaConfig config, Rng& rng) : config_(std::move(config)) {
  validate_config(config_);
  const std::size_t d = config_.embed_dim;
  const std::size_t count = config_.patterns.count_per_length;
  for (std::size_t len : config_.patterns.lengths) {
    Group g;
    g.length = len;
    g.count = count;
    const std::size_t cols = count * g.arcs();
    g.w_main = init_uniform(d, cols, rng);
    g.b_main = init_uniform(1, cols, rng);
    g.w_self = init_uniform(d, cols, rng);
    g.b_self = init_uniform(1, cols, rng);
    g.b_eps = init_uniform(1, cols, rng);
    groups_.push_back(std::move(g));
  }
}

std::size_t SopaEncoder::pattern_length(std::size_t pattern_id) const {
  check(pattern_id < pattern_count(), "sopa: pattern_id out of range");
  return groups_[pattern_id / config_.patterns.count_per_length].length;
}

std::vector<std::pair<std::string, Tensor>> SopaEncoder::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> named;
  for (const Group& g : groups_) {
    const std::string prefix = "sopa.len" + std::to_string(g.length) + ".";
    named.emplace_back(prefix + "w_main", g.w_main);
    named.emplace_back(prefix + "b_main", g.b_main);
    named.emplace_back(prefix + "w_self", g.w_self);
    named.emplace_back(prefix + "b_self", g.b_self);
    named.emplace_back(prefix + "b_eps", g.b_eps);
  }
  return named;
}

std::vector<Tensor> SopaEncoder::parameters() const {
  std::vector<Tensor> params;
  for (auto& [name, t] : named_parameters()) params.push_back(t);
  return params;
}

ArcScoreSet SopaEncoder::arc_scores(std::size_t pattern_id, const Tensor& embedding) const {
  check(pattern_id < pattern_count(), "sopa: pattern_id out of range");
  check(embedding.rows() == 1 && embedding.cols() == config_.embed_dim,
        "sopa: embedding must be 1 x embed_dim");
  const std::size_t count = config_.patterns.count_per_length;
  const Group& g = groups_[pattern_id / count];
  const std::size_t i = pattern_id % count;

  // Isolate from any caller tape: scoring here is read-only.
  Tape local;
  TapeScope scope(local);
  Tensor mains = log_sigmoid(add(matmul(embedding, g.w_main), g.b_main));
  Tensor selfs = log_sigmoid(add(matmul(embedding, g.w_self), g.b_self));
  Tensor eps = log_sigmoid(g.b_eps);

  ArcScoreSet s;
  for (std::size_t a = 0; a < g.arcs(); ++a) {
    const std::size_t col = a * count + i;
    s.main.push_back(mains.at(0, col));
    s.self_loop.push_back(selfs.at(0, col));
    s.eps.push_back(eps.at(0, col));
  }
  return s;
}

// ---- batched max-sum DP ------------------------------------------------------
//
// Per consumed position t, in order:
//   seed      the start state holds 0 (a match may begin anywhere)
//   epsilon   left-to-right closure, so a match may open with epsilon arcs
//   consume   every lane advances by a main arc or stays via a self-loop
//   epsilon   closure again, so a match may close with epsilon arcs
//   readout   end-state value = best match ending exactly at t
// Rows are right-padded; a masked step carries state through unchanged and
// reads out kNegInf.

SopaOutput SopaEncoder::match_batch(const std::vector<Tensor>& steps,
                                    const std::vector<Tensor>& masks) const {
  check(!steps.empty(), "sopa: empty input");
  check(steps.size() == masks.size(), "sopa: steps and masks disagree in length");
  const std::size_t B = steps[0].rows();
  const std::size_t n = steps.size();
  for (std::size_t t = 0; t < n; ++t) {
    check(steps[t].rows() == B && steps[t].cols() == config_.embed_dim,
          "sopa: bad step shape");
    check(masks[t].rows() == B && masks[t].cols() == 1, "sopa: bad mask shape");
  }
  const bool restrict_mode = config_.restrict_transitions;

  std::vector<std::vector<Tensor>> group_pos(groups_.size());
  std::vector<Tensor> group_final(groups_.size());

  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    const Group& g = groups_[gi];
    const std::size_t k = g.length, arcs = g.arcs(), count = g.count;

    Tensor eps_all = log_sigmoid(g.b_eps);
    std::vector<Tensor> eps(arcs);
    for (std::size_t a = 0; a < arcs; ++a) {
      eps[a] = slice_cols(eps_all, a * count, (a + 1) * count);
    }
    const Tensor seed = Tensor::zeros(B, count);
    const Tensor neg = Tensor::full(B, count, kNegInf);
    const Tensor ones = Tensor::full(B, 1, 1.0);

    std::vector<Tensor> h(k, neg);     // carried lane (the only lane, or "ok")
    std::vector<Tensor> pend(restrict_mode ? k : 0, neg);
    Tensor fs = neg;

    for (std::size_t t = 0; t < n; ++t) {
      Tensor main_all = log_sigmoid(add(matmul(steps[t], g.w_main), g.b_main));
      Tensor self_all = log_sigmoid(add(matmul(steps[t], g.w_self), g.b_self));
      std::vector<Tensor> mains(arcs), selfs(arcs);
      for (std::size_t a = 0; a < arcs; ++a) {
        mains[a] = slice_cols(main_all, a * count, (a + 1) * count);
        selfs[a] = slice_cols(self_all, a * count, (a + 1) * count);
      }
      const Tensor mask = masks[t];
      const Tensor inv = sub(ones, mask);

      std::vector<Tensor> A(k), Bc(k), C(k);
      std::vector<Tensor> Ap, Bp, Cp;
      if (!restrict_mode) {
        A[0] = seed;
        for (std::size_t j = 1; j < k; ++j) A[j] = maximum(h[j], add(A[j - 1], eps[j - 1]));
        Bc[0] = add(A[0], selfs[0]);
        for (std::size_t j = 1; j + 1 < k; ++j) {
          Bc[j] = maximum(add(A[j - 1], mains[j - 1]), add(A[j], selfs[j]));
        }
        Bc[k - 1] = add(A[k - 2], mains[k - 2]);
        C[0] = Bc[0];
        for (std::size_t j = 1; j < k; ++j) C[j] = maximum(Bc[j], add(C[j - 1], eps[j - 1]));
      } else {
        Ap.assign(k, neg);
        Bp.assign(k, neg);
        Cp.assign(k, neg);
        A[0] = seed;
        for (std::size_t j = 1; j < k; ++j) A[j] = h[j];
        for (std::size_t j = 1; j < k; ++j) {
          Ap[j] = maximum(pend[j], add(A[j - 1], eps[j - 1]));
        }
        Bc[0] = neg;
        Bp[0] = add(A[0], selfs[0]);
        for (std::size_t j = 1; j < k; ++j) {
          Bc[j] = maximum(add(A[j - 1], mains[j - 1]), add(Ap[j - 1], mains[j - 1]));
        }
        for (std::size_t j = 1; j + 1 < k; ++j) Bp[j] = add(A[j], selfs[j]);
        C = Bc;  // an epsilon leaves a pending lane, never this one
        Cp[0] = Bp[0];
        for (std::size_t j = 1; j < k; ++j) {
          Cp[j] = maximum(Bp[j], add(C[j - 1], eps[j - 1]));
        }
      }

      Tensor pos = add(mul(C[k - 1], mask), mul(inv, kNegInf));
      fs = maximum(fs, pos);  // ties keep the earlier position
      group_pos[gi].push_back(pos);

      for (std::size_t j = 0; j < k; ++j) {
        h[j] = add(mul(C[j], mask), mul(h[j], inv));
      }
      if (restrict_mode) {
        for (std::size_t j = 0; j < k; ++j) {
          pend[j] = add(mul(Cp[j], mask), mul(pend[j], inv));
        }
      }
    }
    group_final[gi] = fs;
  }

  SopaOutput out;
  out.final_scores = concat_cols(group_final);
  for (std::size_t t = 0; t < n; ++t) {
    std::vector<Tensor> per_group;
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) per_group.push_back(group_pos[gi][t]);
    out.position_scores.push_back(concat_cols(per_group));
  }
  return out;
}

// ---- single-word trace -------------------------------------------------------

namespace {

enum : signed char { kKindSeed = 0, kKindCarry = 1, kKindStay = 2, kKindMain = 3,
                     kKindSelf = 4, kKindEps = 5 };
enum : signed char { kPhaseA = 0, kPhaseB = 1, kPhaseC = 2 };
enum : signed char { kLaneOk = 0, kLanePend = 1 };

struct Prov {
  signed char phase = -1, lane = -1, kind = kKindSeed, arc = -1;
  int state = -1, t = -1;
};

struct Cell {
  double score = kNegInf;
  int start = INT_MAX;
  bool live = false;
  Prov from;
};

struct PathArc {
  signed char kind = 0, arc = -1;
  int t = -1;  // consumed position for main/self; -1 for epsilon
};

}  // namespace

struct PatternTrace {
  double score = kNegInf;
  int start = -1, end = -1;
  std::vector<PathArc> path;         // temporal order
  std::vector<double> mains, selfs;  // [t * arcs + a]
  std::vector<double> eps;           // [a]
  std::size_t arcs = 0;
};

struct TraceData {
  std::size_t positions = 0;
  std::vector<PatternTrace> patterns;
};

namespace {

// Scalar mirror of match_batch for one pattern, with backpointers. The
// additions and comparisons happen in the same order as the tensor path,
// so scores agree bitwise. Ties prefer higher score, then smaller start,
// then the earlier-considered transition.
PatternTrace trace_pattern(std::size_t k, std::size_t n, bool restrict_mode,
                           const std::vector<double>& mains, const std::vector<double>& selfs,
                           const std::vector<double>& eps,
                           std::vector<double>* position_out) {
  const std::size_t arcs = k - 1;
  const std::size_t lanes = restrict_mode ? 2 : 1;
  std::vector<Cell> cells(n * 3 * lanes * k);
  auto cell = [&](int t, int phase, int lane, int state) -> Cell& {
    return cells[((static_cast<std::size_t>(t) * 3 + phase) * lanes + lane) * k + state];
  };
  auto consider = [](Cell& dst, double score, int start, Prov from) {
    if (!std::isfinite(score)) return;
    if (!dst.live || score > dst.score || (score == dst.score && start < dst.start)) {
      dst.score = score;
      dst.start = start;
      dst.from = from;
      dst.live = true;
    }
  };
  auto ms = [&](int t, std::size_t a) { return mains[t * arcs + a]; };
  auto ss = [&](int t, std::size_t a) { return selfs[t * arcs + a]; };

  int best_t = -1;
  double best = kNegInf;
  for (int t = 0; t < static_cast<int>(n); ++t) {
    // Phase A: seed, carry, opening epsilon closure.
    consider(cell(t, kPhaseA, kLaneOk, 0), 0.0, t, {});
    for (std::size_t j = 1; j < k; ++j) {
      if (t > 0) {
        for (std::size_t l = 0; l < lanes; ++l) {
          const Cell& prev = cell(t - 1, kPhaseC, l, j);
          if (prev.live) {
            consider(cell(t, kPhaseA, l, j), prev.score, prev.start,
                     {kPhaseC, static_cast<signed char>(l), kKindCarry, -1,
                      static_cast<int>(j), t - 1});
          }
        }
      }
      const int eps_lane = restrict_mode ? kLanePend : kLaneOk;
      const Cell& src = cell(t, kPhaseA, kLaneOk, j - 1);
      if (src.live) {
        consider(cell(t, kPhaseA, eps_lane, j), src.score + eps[j - 1], src.start,
                 {kPhaseA, kLaneOk, kKindEps, static_cast<signed char>(j - 1),
                  static_cast<int>(j - 1), t});
      }
    }
    // Phase B: consume one character.
    for (std::size_t j = 1; j < k; ++j) {
      for (std::size_t l = 0; l < lanes; ++l) {
        const Cell& src = cell(t, kPhaseA, l, j - 1);
        if (src.live) {
          consider(cell(t, kPhaseB, kLaneOk, j), src.score + ms(t, j - 1), src.start,
                   {kPhaseA, static_cast<signed char>(l), kKindMain,
                    static_cast<signed char>(j - 1), static_cast<int>(j - 1), t});
        }
      }
    }
    const int self_lane = restrict_mode ? kLanePend : kLaneOk;
    for (std::size_t j = 0; j + 1 < k; ++j) {
      const Cell& src = cell(t, kPhaseA, kLaneOk, j);
      if (src.live) {
        consider(cell(t, kPhaseB, self_lane, j), src.score + ss(t, j), src.start,
                 {kPhaseA, kLaneOk, kKindSelf, static_cast<signed char>(j),
                  static_cast<int>(j), t});
      }
    }
    // Phase C: closing epsilon closure.
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t l = 0; l < lanes; ++l) {
        const Cell& src = cell(t, kPhaseB, l, j);
        if (src.live) {
          consider(cell(t, kPhaseC, l, j), src.score, src.start,
                   {kPhaseB, static_cast<signed char>(l), kKindStay, -1,
                    static_cast<int>(j), t});
        }
      }
      if (j >= 1) {
        const int eps_lane = restrict_mode ? kLanePend : kLaneOk;
        const Cell& src = cell(t, kPhaseC, kLaneOk, j - 1);
        if (src.live) {
          consider(cell(t, kPhaseC, eps_lane, j), src.score + eps[j - 1], src.start,
                   {kPhaseC, kLaneOk, kKindEps, static_cast<signed char>(j - 1),
                    static_cast<int>(j - 1), t});
        }
      }
    }
    const Cell& end = cell(t, kPhaseC, kLaneOk, k - 1);
    const double pos = end.live ? end.score : kNegInf;
    if (position_out) (*position_out)[t] = pos;
    if (end.live && pos > best) {  // strict: ties keep the earlier end
      best = pos;
      best_t = t;
    }
  }

  PatternTrace trace;
  trace.arcs = arcs;
  trace.mains = mains;
  trace.selfs = selfs;
  trace.eps = eps;
  if (best_t < 0) return trace;  // no live match (cannot happen for n >= 1)

  const Cell* cur = &cell(best_t, kPhaseC, kLaneOk, static_cast<int>(k - 1));
  trace.score = cur->score;
  trace.start = cur->start;
  trace.end = best_t + 1;
  std::vector<PathArc> reversed;
  while (cur->from.kind != kKindSeed || cur->from.phase != -1) {
    const Prov& f = cur->from;
    if (f.kind == kKindMain || f.kind == kKindSelf) {
      reversed.push_back({f.kind, f.arc, f.t});
    } else if (f.kind == kKindEps) {
      reversed.push_back({f.kind, f.arc, -1});
    }
    cur = &cell(f.t, f.phase, f.lane, f.state);
  }
  trace.path.assign(reversed.rbegin(), reversed.rend());
  return trace;
}

}  // namespace

EncoderOutput SopaEncoder::match(const Tensor& embeddings) const {
  check(embeddings.defined() && embeddings.rows() >= 1, "sopa: empty word");
  check(embeddings.cols() == config_.embed_dim, "sopa: embedding dim mismatch");
  const std::size_t n = embeddings.rows();
  const std::size_t P = pattern_count();
  const std::size_t count = config_.patterns.count_per_length;

  auto trace = std::make_shared<TraceData>();
  trace->positions = n;
  trace->patterns.resize(P);

  EncoderOutput out;
  out.final_scores.assign(P, kNegInf);
  out.position_scores.assign(n, std::vector<double>(P, kNegInf));

  // Score tables computed through the same tensor ops as the batched path.
  Tape local;
  TapeScope scope(local);
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    const Group& g = groups_[gi];
    const std::size_t arcs = g.arcs();
    Tensor main_all = log_sigmoid(add(matmul(embeddings, g.w_main), g.b_main));
    Tensor self_all = log_sigmoid(add(matmul(embeddings, g.w_self), g.b_self));
    Tensor eps_all = log_sigmoid(g.b_eps);

    for (std::size_t i = 0; i < g.count; ++i) {
      const std::size_t pid = gi * count + i;
      std::vector<double> mains(n * arcs), selfs(n * arcs), eps(arcs);
      for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t a = 0; a < arcs; ++a) {
          mains[t * arcs + a] = main_all.at(t, a * g.count + i);
          selfs[t * arcs + a] = self_all.at(t, a * g.count + i);
        }
      }
      for (std::size_t a = 0; a < arcs; ++a) eps[a] = eps_all.at(0, a * g.count + i);

      std::vector<double> positions(n, kNegInf);
      PatternTrace pt = trace_pattern(g.length, n, config_.restrict_transitions, mains,
                                      selfs, eps, &positions);
      for (std::size_t t = 0; t < n; ++t) out.position_scores[t][pid] = positions[t];
      out.final_scores[pid] = pt.score;
      trace->patterns[pid] = std::move(pt);
    }
  }
  out.trace = trace;
  return out;
}

std::vector<MatchResult> SopaEncoder::recover_subwords(
    const EncoderOutput& output, const std::vector<std::string>& framed_word) const {
  check(output.trace != nullptr, "sopa: output has no trace; run match first");
  check(framed_word.size() == output.trace->positions,
        "sopa: word length does not match the traced input");

  std::vector<MatchResult> results;
  for (std::size_t pid = 0; pid < output.trace->patterns.size(); ++pid) {
    const PatternTrace& pt = output.trace->patterns[pid];
    if (pt.start < 0) {
      throw std::logic_error("sopa: pattern " + std::to_string(pid) + " traced no match");
    }
    // Re-score the traced path; it must reproduce the DP value.
    double resum = 0.0;
    std::size_t consumed = 0;
    for (const PathArc& arc : pt.path) {
      if (arc.kind == kKindMain) {
        resum += pt.mains[arc.t * pt.arcs + arc.arc];
        ++consumed;
      } else if (arc.kind == kKindSelf) {
        resum += pt.selfs[arc.t * pt.arcs + arc.arc];
        ++consumed;
      } else {
        resum += pt.eps[arc.arc];
      }
    }
    if (std::abs(resum - pt.score) > 1e-9 ||
        consumed != static_cast<std::size_t>(pt.end - pt.start)) {
      throw std::logic_error("sopa: traced path disagrees with its DP score");
    }

    MatchResult m;
    m.pattern_id = pid;
    m.score = pt.score;
    m.start = static_cast<std::size_t>(pt.start);
    m.end = static_cast<std::size_t>(pt.end);
    for (std::size_t i = m.start; i < m.end; ++i) m.subword += framed_word[i];
    results.push_back(std::move(m));
  }
  return results;
}

std::string matches_tsv(const std::string& word, const std::vector<MatchResult>& matches) {
  std::string out;
  char buf[64];
  for (const MatchResult& m : matches) {
    out += word;
    out += '\t';
    out += std::to_string(m.pattern_id);
    out += '\t';
    std::snprintf(buf, sizeof(buf), "%.9g", m.score);
    out += buf;
    out += '\t';
    out += std::to_string(m.start);
    out += '\t';
    out += std::to_string(m.end);
    out += '\t';
    out += m.subword;
    out += '\n';
  }
  return out;
}

}  // namespace sopamorph
