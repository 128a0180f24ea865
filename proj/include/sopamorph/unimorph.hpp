// UniMorph triplet ingestion, split sampling, and task construction.
//
// A triplet file is tab-separated text: lemma TAB form TAB tags, one per
// line, with tags separated by spaces. The three tasks all read the
// inflected form as the source sequence and differ only in the target:
// analysis predicts the tag symbols, lemmatization the lemma's characters,
// and copy reproduces the source.
#pragma once

#include <cstdint>
#include <istream>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace sopamorph {

struct Example {
  std::string lemma;
  std::string form;
  std::vector<std::string> tags;

  bool operator==(const Example&) const = default;
  auto operator<=>(const Example&) const = default;
};

// Splits UTF-8 text into one string per codepoint. Bytes that do not form
// a valid sequence are passed through as single-byte symbols.
std::vector<std::string> utf8_chars(const std::string& text);

struct ParsedFile {
  std::vector<Example> examples;
  std::size_t skipped = 0;  // blank or malformed lines
};

ParsedFile parse_unimorph(std::istream& in);
ParsedFile parse_unimorph(const std::string& path);

// ---- split sampling ----------------------------------------------------------

// Sufficient record to rebuild identical splits from the same triplet file:
// indices refer to the deduplicated, lexicographically sorted triplet list.
struct SplitManifest {
  std::uint64_t seed = 0;
  std::vector<std::size_t> train_idx, dev_idx, test_idx;
  std::string id;  // fingerprint of the fields above
};

std::string manifest_fingerprint(const SplitManifest& manifest);
std::string manifest_to_json(const SplitManifest& manifest);
SplitManifest manifest_from_json(const std::string& json);  // verifies the fingerprint

struct DataSplits {
  std::vector<Example> train, dev, test;
  SplitManifest manifest;
};

// Deduplicates, sorts, shuffles with the seed, and slices the requested
// sizes. Sorting before the seeded shuffle makes the result depend only on
// the *set* of triplets, not on file order.
DataSplits sample_splits(const std::vector<Example>& examples, std::uint64_t seed,
                         std::size_t n_train = 10000, std::size_t n_dev = 2000,
                         std::size_t n_test = 2000);

// Rebuilds the exact splits a manifest describes from the same triplet list.
DataSplits splits_from_manifest(const std::vector<Example>& examples,
                                const SplitManifest& manifest);

// ---- vocabulary ----------------------------------------------------------------

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0, kSos = 1, kEos = 2, kUnk = 3;

  Vocabulary();  // starts with the four reserved symbols

  std::size_t add(const std::string& symbol);       // inserts if absent, returns id
  std::size_t id(const std::string& symbol) const;  // kUnk when absent
  bool contains(const std::string& symbol) const;
  const std::string& symbol(std::size_t id) const;
  std::size_t size() const { return symbols_.size(); }
  const std::vector<std::string>& symbols() const { return symbols_; }

  // Rebuilds from a serialized symbol list; the reserved prefix must match.
  static Vocabulary from_symbols(const std::vector<std::string>& symbols);

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Word-boundary markers framing every encoder input. Ordinary vocabulary
// entries so that matched subwords can include them.
inline const std::string kWordStart = "^";
inline const std::string kWordEnd = "$";

// ---- tasks ---------------------------------------------------------------------

enum class Task { kAnalysis, kLemmatization, kCopy };

std::string task_name(Task task);
Task task_from_name(const std::string& name);  // throws on unknown names

struct SeqPair {
  std::vector<std::string> source, target;
};

struct TaskDataset {
  Task task = Task::kCopy;
  // Same object for lemmatization and copy (shared symbol inventory);
  // distinct for analysis, whose targets are tag symbols.
  std::shared_ptr<Vocabulary> source_vocab, target_vocab;
  std::vector<SeqPair> train, dev, test;
  SplitManifest manifest;

  bool shares_vocab() const { return source_vocab == target_vocab; }
};

// Renders (source, target) pairs for one task and builds vocabularies from
// the train split only; dev/test symbols outside them encode as UNK.
TaskDataset build_task(const DataSplits& splits, Task task);

// ---- batching ------------------------------------------------------------------

// Right-padded index matrices in row-major [batch][len] layout. Sources are
// framed ^w$; target rows pair SOS-fronted inputs with EOS-terminated
// outputs for teacher forcing. Masks hold 1.0 on real positions, 0.0 on pad.
struct EncodedBatch {
  std::size_t batch = 0, src_len = 0, tgt_len = 0;
  std::vector<std::size_t> src;
  std::vector<double> src_mask;
  std::vector<std::size_t> tgt_in;
  std::vector<std::size_t> tgt_out;
  std::vector<double> tgt_mask;
  std::vector<std::size_t> src_lens, tgt_lens;  // true (unpadded) lengths
};

EncodedBatch encode_batch(const TaskDataset& dataset, const std::vector<SeqPair>& window);

// Slices `pairs` into consecutive windows of at most batch_size.
std::vector<EncodedBatch> encode_batches(const TaskDataset& dataset,
                                         const std::vector<SeqPair>& pairs,
                                         std::size_t batch_size = 64);

// Inverses used by evaluation: drop padding/framing and return symbols.
std::vector<std::string> decode_source(const Vocabulary& vocab,
                                       const std::vector<std::size_t>& ids);
// Reads up to the first EOS, dropping SOS and PAD.
std::vector<std::string> decode_target(const Vocabulary& vocab,
                                       const std::vector<std::size_t>& ids);

}  // namespace sopamorph
