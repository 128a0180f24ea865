#include "sopamorph/checkpoint.hpp"

#include <fstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace sopamorph {

namespace {

constexpr const char* kFormat = "sopamorph.checkpoint";
constexpr int kVersion = 1;

using nlohmann::json;

json config_to_json(const ModelConfig& c) {
  return json{{"encoder", encoder_name(c.encoder_type)},
              {"char_embed_dim", c.char_embed_dim},
              {"tag_embed_dim", c.tag_embed_dim},
              {"hidden", c.hidden},
              {"layers", c.layers},
              {"pattern_lengths", c.patterns.lengths},
              {"patterns_per_length", c.patterns.count_per_length},
              {"restrict_transitions", c.restrict_transitions},
              {"share_embeddings", c.share_embeddings}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.encoder_type = encoder_from_name(j.at("encoder").get<std::string>());
  c.char_embed_dim = j.at("char_embed_dim").get<std::size_t>();
  c.tag_embed_dim = j.at("tag_embed_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.patterns.lengths = j.at("pattern_lengths").get<std::vector<std::size_t>>();
  c.patterns.count_per_length = j.at("patterns_per_length").get<std::size_t>();
  c.restrict_transitions = j.at("restrict_transitions").get<bool>();
  c.share_embeddings = j.at("share_embeddings").get<bool>();
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const Seq2seqModel& model,
                     const CheckpointMeta& meta) {
  json params = json::array();
  for (const auto& [name, p] : model.named_parameters()) {
    params.push_back(json{{"name", name},
                          {"rows", p.rows()},
                          {"cols", p.cols()},
                          {"data", p.data()}});
  }
  const json doc{{"format", kFormat},
                 {"version", kVersion},
                 {"config", config_to_json(model.config())},
                 {"vocab",
                  {{"shared", model.shares_embeddings()},
                   {"source", model.source_vocab()->symbols()},
                   {"target", model.target_vocab()->symbols()}}},
                 {"meta",
                  {{"epoch", meta.epoch},
                   {"dev_accuracy", meta.dev_accuracy},
                   {"language", meta.language},
                   {"task", meta.task},
                   {"manifest_id", meta.manifest_id}}},
                 {"params", params}};

  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out << doc.dump();
  out << '\n';
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint: " + path + " is not valid JSON: " + e.what());
  }

  if (doc.value("format", "") != kFormat) {
    throw std::runtime_error("checkpoint: " + path + " has an unrecognized format tag");
  }
  if (doc.value("version", -1) != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  }

  const ModelConfig config = config_from_json(doc.at("config"));
  const auto& vocab = doc.at("vocab");
  auto source = std::make_shared<Vocabulary>(
      Vocabulary::from_symbols(vocab.at("source").get<std::vector<std::string>>()));
  auto target = vocab.at("shared").get<bool>()
                    ? source
                    : std::make_shared<Vocabulary>(Vocabulary::from_symbols(
                          vocab.at("target").get<std::vector<std::string>>()));

  Rng scratch(0);  // every value is overwritten below
  Seq2seqModel model(config, source, target, scratch);

  std::unordered_map<std::string, Tensor> by_name;
  for (auto& [name, p] : model.named_parameters()) by_name.emplace(name, p);

  std::unordered_set<std::string> seen;
  for (const auto& entry : doc.at("params")) {
    const std::string name = entry.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw std::runtime_error("checkpoint: parameter '" + name +
                               "' does not exist in the configured architecture");
    }
    if (!seen.insert(name).second) {
      throw std::runtime_error("checkpoint: parameter '" + name + "' appears twice");
    }
    Tensor p = it->second;
    if (entry.at("rows").get<std::size_t>() != p.rows() ||
        entry.at("cols").get<std::size_t>() != p.cols()) {
      throw std::runtime_error("checkpoint: parameter '" + name + "' has the wrong shape");
    }
    const auto values = entry.at("data").get<std::vector<double>>();
    if (values.size() != p.numel()) {
      throw std::runtime_error("checkpoint: parameter '" + name + "' has the wrong size");
    }
    p.data() = values;
  }
  if (seen.size() != by_name.size()) {
    throw std::runtime_error("checkpoint: " + path + " is missing parameters");
  }

  CheckpointMeta meta;
  const auto& m = doc.at("meta");
  meta.epoch = m.at("epoch").get<int>();
  meta.dev_accuracy = m.at("dev_accuracy").get<double>();
  meta.language = m.at("language").get<std::string>();
  meta.task = m.at("task").get<std::string>();
  meta.manifest_id = m.at("manifest_id").get<std::string>();

  return {std::move(model), meta};
}

}  // namespace sopamorph
