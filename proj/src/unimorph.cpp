#include "sopamorph/unimorph.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "sopamorph/tensor.hpp"

namespace sopamorph {

using nlohmann::json;

std::vector<std::string> utf8_chars(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if ((lead & 0x80) == 0x00) len = 1;
    else if ((lead & 0xE0) == 0xC0) len = 2;
    else if ((lead & 0xF0) == 0xE0) len = 3;
    else if ((lead & 0xF8) == 0xF0) len = 4;
    if (i + len > text.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
        len = 1;  // broken continuation: emit the lead byte alone
        break;
      }
    }
    out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      fields.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return fields;
}

std::vector<std::string> split_whitespace(const std::string& s) {
  std::vector<std::string> words;
  std::istringstream in(s);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

}  // namespace

ParsedFile parse_unimorph(std::istream& in) {
  ParsedFile result;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      ++result.skipped;
      continue;
    }
    const auto fields = split_on(line, '\t');
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
      ++result.skipped;
      continue;
    }
    auto tags = split_whitespace(fields[2]);
    if (tags.empty()) {
      ++result.skipped;
      continue;
    }
    result.examples.push_back({fields[0], fields[1], std::move(tags)});
  }
  if (result.examples.empty()) {
    throw std::runtime_error("unimorph parse: no valid triplet lines");
  }
  return result;
}

ParsedFile parse_unimorph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("unimorph parse: cannot open " + path);
  try {
    return parse_unimorph(in);
  } catch (const std::runtime_error&) {
    throw std::runtime_error("unimorph parse: no valid triplet lines in " + path);
  }
}

// ---- split sampling ----------------------------------------------------------

namespace {

std::vector<Example> canonical_order(std::vector<Example> examples) {
  std::sort(examples.begin(), examples.end());
  examples.erase(std::unique(examples.begin(), examples.end()), examples.end());
  return examples;
}

void append_indices(std::string& s, const char* label, const std::vector<std::size_t>& idx) {
  s += label;
  for (std::size_t i : idx) {
    s += std::to_string(i);
    s += ',';
  }
}

}  // namespace

std::string manifest_fingerprint(const SplitManifest& manifest) {
  std::string canon = "v1|seed=" + std::to_string(manifest.seed) + '|';
  append_indices(canon, "train:", manifest.train_idx);
  append_indices(canon, "|dev:", manifest.dev_idx);
  append_indices(canon, "|test:", manifest.test_idx);
  // FNV-1a, 64-bit.
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string manifest_to_json(const SplitManifest& manifest) {
  json j;
  j["version"] = 1;
  j["seed"] = manifest.seed;
  j["train_idx"] = manifest.train_idx;
  j["dev_idx"] = manifest.dev_idx;
  j["test_idx"] = manifest.test_idx;
  j["id"] = manifest.id;
  return j.dump(2) + "\n";
}

SplitManifest manifest_from_json(const std::string& text) {
  json j = json::parse(text);
  SplitManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.train_idx = j.at("train_idx").get<std::vector<std::size_t>>();
  m.dev_idx = j.at("dev_idx").get<std::vector<std::size_t>>();
  m.test_idx = j.at("test_idx").get<std::vector<std::size_t>>();
  m.id = j.at("id").get<std::string>();
  if (m.id != manifest_fingerprint(m)) {
    throw std::runtime_error("split manifest: fingerprint mismatch, file was altered");
  }
  return m;
}

DataSplits sample_splits(const std::vector<Example>& examples, std::uint64_t seed,
                         std::size_t n_train, std::size_t n_dev, std::size_t n_test) {
  const std::vector<Example> pool = canonical_order(examples);
  const std::size_t need = n_train + n_dev + n_test;
  if (pool.size() < need) {
    throw std::runtime_error("sample_splits: only " + std::to_string(pool.size()) +
                             " unique triplets, need " + std::to_string(need) + " (" +
                             std::to_string(n_train) + " train + " + std::to_string(n_dev) +
                             " dev + " + std::to_string(n_test) + " test)");
  }
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  DataSplits splits;
  splits.manifest.seed = seed;
  splits.manifest.train_idx.assign(order.begin(), order.begin() + n_train);
  splits.manifest.dev_idx.assign(order.begin() + n_train, order.begin() + n_train + n_dev);
  splits.manifest.test_idx.assign(order.begin() + n_train + n_dev,
                                  order.begin() + n_train + n_dev + n_test);
  splits.manifest.id = manifest_fingerprint(splits.manifest);
  for (std::size_t i : splits.manifest.train_idx) splits.train.push_back(pool[i]);
  for (std::size_t i : splits.manifest.dev_idx) splits.dev.push_back(pool[i]);
  for (std::size_t i : splits.manifest.test_idx) splits.test.push_back(pool[i]);
  return splits;
}

DataSplits splits_from_manifest(const std::vector<Example>& examples,
                                const SplitManifest& manifest) {
  if (manifest.id != manifest_fingerprint(manifest)) {
    throw std::runtime_error("split manifest: fingerprint mismatch");
  }
  const std::vector<Example> pool = canonical_order(examples);
  auto gather = [&](const std::vector<std::size_t>& idx) {
    std::vector<Example> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) {
      if (i >= pool.size()) {
        throw std::runtime_error("split manifest: index beyond triplet list; wrong data file?");
      }
      out.push_back(pool[i]);
    }
    return out;
  };
  DataSplits splits;
  splits.manifest = manifest;
  splits.train = gather(manifest.train_idx);
  splits.dev = gather(manifest.dev_idx);
  splits.test = gather(manifest.test_idx);
  return splits;
}

// ---- vocabulary ----------------------------------------------------------------

namespace {
const std::vector<std::string> kReserved = {"<pad>", "<sos>", "<eos>", "<unk>"};
}

Vocabulary::Vocabulary() {
  for (const auto& s : kReserved) add(s);
}

std::size_t Vocabulary::add(const std::string& symbol) {
  auto it = index_.find(symbol);
  if (it != index_.end()) return it->second;
  const std::size_t id = symbols_.size();
  symbols_.push_back(symbol);
  index_.emplace(symbol, id);
  return id;
}

std::size_t Vocabulary::id(const std::string& symbol) const {
  auto it = index_.find(symbol);
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(const std::string& symbol) const {
  return index_.find(symbol) != index_.end();
}

const std::string& Vocabulary::symbol(std::size_t id) const {
  if (id >= symbols_.size()) throw std::out_of_range("vocabulary: id out of range");
  return symbols_[id];
}

Vocabulary Vocabulary::from_symbols(const std::vector<std::string>& symbols) {
  if (symbols.size() < kReserved.size()) {
    throw std::runtime_error("vocabulary: symbol list shorter than the reserved prefix");
  }
  for (std::size_t i = 0; i < kReserved.size(); ++i) {
    if (symbols[i] != kReserved[i]) {
      throw std::runtime_error("vocabulary: reserved prefix mismatch at index " +
                               std::to_string(i));
    }
  }
  Vocabulary v;
  for (std::size_t i = kReserved.size(); i < symbols.size(); ++i) {
    const std::size_t before = v.size();
    if (v.add(symbols[i]) != before) {
      throw std::runtime_error("vocabulary: duplicate symbol '" + symbols[i] + "'");
    }
  }
  return v;
}

// ---- tasks ---------------------------------------------------------------------

std::string task_name(Task task) {
  switch (task) {
    case Task::kAnalysis: return "analysis";
    case Task::kLemmatization: return "lemmatization";
    case Task::kCopy: return "copy";
  }
  throw std::logic_error("task_name: unhandled task");
}

Task task_from_name(const std::string& name) {
  if (name == "analysis") return Task::kAnalysis;
  if (name == "lemmatization") return Task::kLemmatization;
  if (name == "copy") return Task::kCopy;
  throw std::invalid_argument("unknown task '" + name + "', expected analysis|lemmatization|copy");
}

namespace {

std::vector<std::string> target_symbols(const Example& e, Task task) {
  switch (task) {
    case Task::kAnalysis: return e.tags;
    case Task::kLemmatization: return utf8_chars(e.lemma);
    case Task::kCopy: return utf8_chars(e.form);
  }
  throw std::logic_error("target_symbols: unhandled task");
}

std::vector<SeqPair> render_pairs(const std::vector<Example>& split, Task task) {
  std::vector<SeqPair> pairs;
  pairs.reserve(split.size());
  for (const Example& e : split) {
    pairs.push_back({utf8_chars(e.form), target_symbols(e, task)});
  }
  return pairs;
}

}  // namespace

TaskDataset build_task(const DataSplits& splits, Task task) {
  TaskDataset ds;
  ds.task = task;
  ds.manifest = splits.manifest;
  ds.train = render_pairs(splits.train, task);
  ds.dev = render_pairs(splits.dev, task);
  ds.test = render_pairs(splits.test, task);

  ds.source_vocab = std::make_shared<Vocabulary>();
  const bool shared = (task != Task::kAnalysis);
  ds.target_vocab = shared ? ds.source_vocab : std::make_shared<Vocabulary>();

  // First-occurrence order over the training stream; boundary markers are
  // ordinary entries and land first because every framed source starts ^.
  for (const SeqPair& p : ds.train) {
    ds.source_vocab->add(kWordStart);
    for (const auto& s : p.source) ds.source_vocab->add(s);
    ds.source_vocab->add(kWordEnd);
    for (const auto& s : p.target) ds.target_vocab->add(s);
  }
  return ds;
}

// ---- batching ------------------------------------------------------------------

EncodedBatch encode_batch(const TaskDataset& dataset, const std::vector<SeqPair>& window) {
  if (window.empty()) throw std::invalid_argument("encode_batch: empty batch");
  const Vocabulary& sv = *dataset.source_vocab;
  const Vocabulary& tv = *dataset.target_vocab;

  EncodedBatch b;
  b.batch = window.size();
  for (const SeqPair& p : window) {
    b.src_len = std::max(b.src_len, p.source.size() + 2);   // ^ and $
    b.tgt_len = std::max(b.tgt_len, p.target.size() + 1);   // EOS
  }
  b.src.assign(b.batch * b.src_len, Vocabulary::kPad);
  b.src_mask.assign(b.batch * b.src_len, 0.0);
  b.tgt_in.assign(b.batch * b.tgt_len, Vocabulary::kPad);
  b.tgt_out.assign(b.batch * b.tgt_len, Vocabulary::kPad);
  b.tgt_mask.assign(b.batch * b.tgt_len, 0.0);

  for (std::size_t r = 0; r < b.batch; ++r) {
    const SeqPair& p = window[r];
    std::size_t c = 0;
    auto put_src = [&](const std::string& sym) {
      b.src[r * b.src_len + c] = sv.id(sym);
      b.src_mask[r * b.src_len + c] = 1.0;
      ++c;
    };
    put_src(kWordStart);
    for (const auto& s : p.source) put_src(s);
    put_src(kWordEnd);
    b.src_lens.push_back(c);

    b.tgt_in[r * b.tgt_len + 0] = Vocabulary::kSos;
    for (std::size_t t = 0; t < p.target.size(); ++t) {
      const std::size_t id = tv.id(p.target[t]);
      b.tgt_in[r * b.tgt_len + t + 1] = id;
      b.tgt_out[r * b.tgt_len + t] = id;
      b.tgt_mask[r * b.tgt_len + t] = 1.0;
    }
    b.tgt_out[r * b.tgt_len + p.target.size()] = Vocabulary::kEos;
    b.tgt_mask[r * b.tgt_len + p.target.size()] = 1.0;
    b.tgt_lens.push_back(p.target.size() + 1);
  }
  return b;
}

std::vector<EncodedBatch> encode_batches(const TaskDataset& dataset,
                                         const std::vector<SeqPair>& pairs,
                                         std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("encode_batches: batch_size must be > 0");
  std::vector<EncodedBatch> batches;
  for (std::size_t begin = 0; begin < pairs.size(); begin += batch_size) {
    const std::size_t end = std::min(begin + batch_size, pairs.size());
    batches.push_back(
        encode_batch(dataset, std::vector<SeqPair>(pairs.begin() + begin, pairs.begin() + end)));
  }
  return batches;
}

std::vector<std::string> decode_source(const Vocabulary& vocab,
                                       const std::vector<std::size_t>& ids) {
  std::vector<std::string> out;
  for (std::size_t id : ids) {
    if (id == Vocabulary::kPad) continue;
    const std::string& s = vocab.symbol(id);
    if (s == kWordStart || s == kWordEnd) continue;
    out.push_back(s);
  }
  return out;
}

std::vector<std::string> decode_target(const Vocabulary& vocab,
                                       const std::vector<std::size_t>& ids) {
  std::vector<std::string> out;
  for (std::size_t id : ids) {
    if (id == Vocabulary::kEos) break;
    if (id == Vocabulary::kSos || id == Vocabulary::kPad) continue;
    out.push_back(vocab.symbol(id));
  }
  return out;
}

}  // namespace sopamorph
