// Compares what two pattern-encoder models look at: each model's best-matched
// subwords are reduced to spans over the boundary-marked word, spans are
// scored by positional Jaccard overlap, and a bidirectional mean-of-maxima
// turns the pairwise scores into a per-sample similarity whose dataset
// average summarizes how alike the two models' attention to the source is.
#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "sopamorph/model.hpp"
#include "sopamorph/sopa.hpp"
#include "sopamorph/unimorph.hpp"

namespace sopamorph {

// One matched span over a boundary-marked word. Positions are the indices
// {start, ..., end-1}; text is the matched symbols joined.
struct Subword {
  std::size_t word_id = 0;  // which word in the analyzed set the span indexes
  std::size_t start = 0, end = 0;
  std::string text;
};

// Overlap of the two spans' position sets divided by their union: 1 exactly
// on identical spans, 0 exactly on disjoint ones. Both subwords must index
// the same word.
double jaccard(const Subword& a, const Subword& b);

// The `t` best-scoring patterns' subwords, ties broken toward the lower
// pattern id. `matches` holds one entry per pattern; asking for more than
// there are patterns is a configuration error.
std::vector<Subword> top_t(const std::vector<MatchResult>& matches, std::size_t t = 10,
                           std::size_t word_id = 0);

// The pairwise Jaccard matrix of two equally-sized subword selections and
// its bidirectional score: (sum of row maxima + sum of column maxima) / 2T.
struct SampleSimilarity {
  std::string word;
  std::vector<Subword> p1, p2;
  std::vector<std::vector<double>> matrix;  // [i][j] = jaccard(p1[i], p2[j])
  double value = 0.0;
};

SampleSimilarity sample_similarity(std::vector<Subword> p1, std::vector<Subword> p2,
                                   std::string word);

enum class Split { kTrain, kDev, kTest };

std::string split_name(Split split);
Split split_from_name(const std::string& name);  // throws on unknown names
const std::vector<SeqPair>& split_of(const TaskDataset& dataset, Split split);

struct SimilarityReport {
  std::string task_pair;  // "task1/task2"
  std::string language;
  std::vector<std::size_t> sample_ids;    // retained samples' indices in the split
  std::vector<std::string> sample_words;  // framed words, aligned with per_sample
  std::vector<double> per_sample;
  double aggregate = 0.0;
  std::size_t retained = 0, skipped = 0;
};

// Per-sample similarity of two models over parallel splits, averaged. The
// datasets must be cut from the same word list (equal manifests); sample i
// of both splits must carry the same source word. With the correctness
// filter on (the default), a sample counts only when both models greedy-
// decode their own reference exactly; retaining zero samples is an error.
SimilarityReport dataset_similarity(const Seq2seqModel& m1, const TaskDataset& d1,
                                    const Seq2seqModel& m2, const TaskDataset& d2,
                                    Split split = Split::kTest, std::size_t t = 10,
                                    bool filter_correct = true, const std::string& language = "");

// Same-task convenience form: both models read and are judged on `dataset`.
SimilarityReport dataset_similarity(const Seq2seqModel& m1, const Seq2seqModel& m2,
                                    const TaskDataset& dataset, Split split = Split::kTest,
                                    std::size_t t = 10, bool filter_correct = true,
                                    const std::string& language = "");

struct SubwordCount {
  std::string text;
  std::size_t count = 0;
};

// Frequency of each pattern's best subword across the split — every pattern
// by default, or only each word's `per_word` best when given. Returns the
// `n` most frequent; ties prefer the lexicographically smaller text. Boundary
// markers stay in the strings (e.g. "ed$").
std::vector<SubwordCount> top_subwords(const Seq2seqModel& model, const TaskDataset& dataset,
                                       Split split = Split::kTest, std::size_t n = 10,
                                       std::optional<std::size_t> per_word = std::nullopt);

// Summary JSON: task pair, language, aggregate, retained/skipped counts.
std::string similarity_json(const SimilarityReport& report);

// Per-sample values: "sample TAB word TAB similarity" rows under a header.
std::string similarity_tsv(const SimilarityReport& report);

// "language TAB task TAB subwords" rows, subwords comma-joined by rank.
struct SubwordTableRow {
  std::string language;
  std::string task;
  std::vector<SubwordCount> subwords;
};

std::string subwords_table_tsv(const std::vector<SubwordTableRow>& rows);

}  // namespace sopamorph
