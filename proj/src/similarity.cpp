#include "sopamorph/similarity.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <stdexcept>
#include <utility>

#include "json.hpp"

namespace sopamorph {

namespace {

std::string format_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

void check_span(const Subword& s) {
  if (s.end <= s.start) throw std::invalid_argument("subword span is empty");
}

// Boundary-marked symbol sequence of one source word.
std::vector<std::string> framed_symbols(const SeqPair& pair) {
  std::vector<std::string> framed;
  framed.reserve(pair.source.size() + 2);
  framed.push_back(kWordStart);
  framed.insert(framed.end(), pair.source.begin(), pair.source.end());
  framed.push_back(kWordEnd);
  return framed;
}

std::vector<std::size_t> symbol_ids(const Vocabulary& vocab,
                                    const std::vector<std::string>& symbols) {
  std::vector<std::size_t> ids;
  ids.reserve(symbols.size());
  for (const auto& s : symbols) ids.push_back(vocab.id(s));
  return ids;
}

std::string joined(const std::vector<std::string>& symbols) {
  std::string out;
  for (const auto& s : symbols) out += s;
  return out;
}

// Each pattern's best span over one source word.
std::vector<MatchResult> best_spans(const Seq2seqModel& model, const SeqPair& pair) {
  const std::vector<std::string> framed = framed_symbols(pair);
  const EncoderOutput output = model.match_source(symbol_ids(*model.source_vocab(), framed));
  return model.sopa()->recover_subwords(output, framed);
}

// Does greedy decoding reproduce the reference symbols exactly?
bool decodes_exactly(const Seq2seqModel& model, const SeqPair& pair) {
  const std::vector<std::size_t> ids =
      symbol_ids(*model.source_vocab(), framed_symbols(pair));
  const std::vector<std::size_t> decoded = model.greedy_decode(ids);
  if (decoded.size() != pair.target.size()) return false;
  const Vocabulary& tgt = *model.target_vocab();
  for (std::size_t i = 0; i < decoded.size(); ++i)
    if (tgt.symbol(decoded[i]) != pair.target[i]) return false;
  return true;
}

}  // namespace

double jaccard(const Subword& a, const Subword& b) {
  if (a.word_id != b.word_id)
    throw std::invalid_argument("jaccard compares spans of the same word");
  check_span(a);
  check_span(b);
  const std::size_t lo = std::max(a.start, b.start);
  const std::size_t hi = std::min(a.end, b.end);
  const std::size_t inter = hi > lo ? hi - lo : 0;
  const std::size_t uni = (a.end - a.start) + (b.end - b.start) - inter;
  return double(inter) / double(uni);
}

std::vector<Subword> top_t(const std::vector<MatchResult>& matches, std::size_t t,
                           std::size_t word_id) {
  if (t == 0) throw std::invalid_argument("top_t needs a positive selection size");
  if (t > matches.size())
    throw std::invalid_argument("top_t selection exceeds the pattern count");

  std::vector<std::size_t> order(matches.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    if (matches[i].score != matches[j].score) return matches[i].score > matches[j].score;
    return matches[i].pattern_id < matches[j].pattern_id;
  });

  std::vector<Subword> out;
  out.reserve(t);
  for (std::size_t r = 0; r < t; ++r) {
    const MatchResult& m = matches[order[r]];
    out.push_back({word_id, m.start, m.end, m.subword});
  }
  return out;
}

SampleSimilarity sample_similarity(std::vector<Subword> p1, std::vector<Subword> p2,
                                   std::string word) {
  if (p1.size() != p2.size() || p1.empty())
    throw std::invalid_argument("sample similarity needs two equally-sized selections");

  const std::size_t t = p1.size();
  SampleSimilarity sample;
  sample.word = std::move(word);
  sample.matrix.assign(t, std::vector<double>(t, 0.0));
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) sample.matrix[i][j] = jaccard(p1[i], p2[j]);

  // Row and column sums stay separate so that swapping the two selections
  // reproduces the value bit for bit.
  double row_total = 0.0, col_total = 0.0;
  for (std::size_t i = 0; i < t; ++i)
    row_total += *std::max_element(sample.matrix[i].begin(), sample.matrix[i].end());
  for (std::size_t j = 0; j < t; ++j) {
    double best = 0.0;
    for (std::size_t i = 0; i < t; ++i) best = std::max(best, sample.matrix[i][j]);
    col_total += best;
  }
  sample.value = (row_total + col_total) / double(2 * t);
  sample.p1 = std::move(p1);
  sample.p2 = std::move(p2);
  return sample;
}

std::string split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  throw std::invalid_argument("unknown split");
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "dev") return Split::kDev;
  if (name == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + name + "'");
}

const std::vector<SeqPair>& split_of(const TaskDataset& dataset, Split split) {
  switch (split) {
    case Split::kTrain: return dataset.train;
    case Split::kDev: return dataset.dev;
    case Split::kTest: return dataset.test;
  }
  throw std::invalid_argument("unknown split");
}

SimilarityReport dataset_similarity(const Seq2seqModel& m1, const TaskDataset& d1,
                                    const Seq2seqModel& m2, const TaskDataset& d2,
                                    Split split, std::size_t t, bool filter_correct,
                                    const std::string& language) {
  if (!m1.sopa() || !m2.sopa())
    throw std::invalid_argument("similarity analysis requires pattern-encoder models");
  if (d1.manifest.id != d2.manifest.id)
    throw std::invalid_argument("datasets were cut from different word lists");

  const std::vector<SeqPair>& s1 = split_of(d1, split);
  const std::vector<SeqPair>& s2 = split_of(d2, split);
  if (s1.size() != s2.size())
    throw std::invalid_argument("parallel splits differ in size");
  if (s1.empty()) throw std::invalid_argument("empty split");

  SimilarityReport report;
  report.task_pair = task_name(d1.task) + "/" + task_name(d2.task);
  report.language = language;

  for (std::size_t i = 0; i < s1.size(); ++i) {
    if (s1[i].source != s2[i].source)
      throw std::invalid_argument("parallel splits disagree on the source at sample " +
                                  std::to_string(i));
    if (filter_correct && !(decodes_exactly(m1, s1[i]) && decodes_exactly(m2, s2[i]))) {
      ++report.skipped;
      continue;
    }
    const std::vector<Subword> p1 = top_t(best_spans(m1, s1[i]), t, i);
    const std::vector<Subword> p2 = top_t(best_spans(m2, s2[i]), t, i);
    const std::string word = joined(framed_symbols(s1[i]));
    const SampleSimilarity sample = sample_similarity(p1, p2, word);
    report.sample_ids.push_back(i);
    report.sample_words.push_back(word);
    report.per_sample.push_back(sample.value);
    ++report.retained;
  }

  if (report.retained == 0)
    throw std::runtime_error("the correctness filter retained no samples");
  report.aggregate =
      std::accumulate(report.per_sample.begin(), report.per_sample.end(), 0.0) /
      double(report.retained);
  return report;
}

SimilarityReport dataset_similarity(const Seq2seqModel& m1, const Seq2seqModel& m2,
                                    const TaskDataset& dataset, Split split, std::size_t t,
                                    bool filter_correct, const std::string& language) {
  return dataset_similarity(m1, dataset, m2, dataset, split, t, filter_correct, language);
}

std::vector<SubwordCount> top_subwords(const Seq2seqModel& model, const TaskDataset& dataset,
                                       Split split, std::size_t n,
                                       std::optional<std::size_t> per_word) {
  if (!model.sopa())
    throw std::invalid_argument("subword extraction requires the pattern encoder");
  const std::vector<SeqPair>& pairs = split_of(dataset, split);

  std::map<std::string, std::size_t> counts;  // ordered so ties break by text
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::vector<MatchResult> matches = best_spans(model, pairs[i]);
    if (per_word) {
      for (const Subword& s : top_t(matches, *per_word, i)) ++counts[s.text];
    } else {
      for (const MatchResult& m : matches) ++counts[m.subword];
    }
  }

  std::vector<SubwordCount> ranked;
  ranked.reserve(counts.size());
  for (const auto& [text, count] : counts) ranked.push_back({text, count});
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const SubwordCount& a, const SubwordCount& b) { return a.count > b.count; });
  if (ranked.size() > n) ranked.resize(n);
  return ranked;
}

std::string similarity_json(const SimilarityReport& report) {
  nlohmann::ordered_json doc;
  doc["task_pair"] = report.task_pair;
  doc["language"] = report.language;
  doc["aggregate"] = report.aggregate;
  doc["retained"] = report.retained;
  doc["skipped"] = report.skipped;
  return doc.dump(2) + "\n";
}

std::string similarity_tsv(const SimilarityReport& report) {
  std::string out = "sample\tword\tsimilarity\n";
  for (std::size_t i = 0; i < report.per_sample.size(); ++i) {
    out += std::to_string(report.sample_ids[i]);
    out += '\t';
    out += report.sample_words[i];
    out += '\t';
    out += format_g(report.per_sample[i]);
    out += '\n';
  }
  return out;
}

std::string subwords_table_tsv(const std::vector<SubwordTableRow>& rows) {
  std::string out = "language\ttask\tsubwords\n";
  for (const auto& row : rows) {
    out += row.language;
    out += '\t';
    out += row.task;
    out += '\t';
    for (std::size_t i = 0; i < row.subwords.size(); ++i) {
      if (i) out += ',';
      out += row.subwords[i].text;
    }
    out += '\n';
  }
  return out;
}

}  // namespace sopamorph
