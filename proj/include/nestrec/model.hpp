#pragma once

// The neural scorer's parameters: embedding tables, the four LSTMs (chars
// forward/backward, buffer, action history, stack), per-label composition
// weights, the leaf projection and the action classifier. Includes the
// checkpoint container (single JSON document, versioned).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "nestrec/corpus.hpp"
#include "nestrec/lstm.hpp"
#include "nestrec/tape.hpp"
#include "nestrec/transition.hpp"

namespace nestrec {

struct ModelConfig {
  int word_dim = 100;
  int pos_dim = 32;
  int char_dim = 30;
  int char_hidden = 25;  // per direction
  int buffer_hidden = 128;
  int stack_hidden = 128;
  int history_hidden = 128;
  int action_dim = 20;
  int node_dim = 128;
  double dropout = 0.3;

  int word_repr_dim() const { return word_dim + pos_dim + 2 * char_hidden; }
  int state_dim() const { return buffer_hidden + stack_hidden + history_hidden; }

  void validate() const {
    for (int d : {word_dim, pos_dim, char_dim, char_hidden, buffer_hidden, stack_hidden,
                  history_hidden, action_dim, node_dim})
      if (d < 1) throw DataError("model dimensions must be at least 1");
    if (dropout < 0.0 || dropout >= 1.0) throw DataError("dropout must be in [0, 1)");
  }
};

inline json config_to_json(const ModelConfig& c) {
  return {{"word_dim", c.word_dim},
          {"pos_dim", c.pos_dim},
          {"char_dim", c.char_dim},
          {"char_hidden", c.char_hidden},
          {"buffer_hidden", c.buffer_hidden},
          {"stack_hidden", c.stack_hidden},
          {"history_hidden", c.history_hidden},
          {"action_dim", c.action_dim},
          {"node_dim", c.node_dim},
          {"dropout", c.dropout}};
}

inline ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  json defaults = config_to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw DataError("unknown model config key '" + key + "'");
    defaults[key] = value;
  }
  c.word_dim = defaults.at("word_dim").get<int>();
  c.pos_dim = defaults.at("pos_dim").get<int>();
  c.char_dim = defaults.at("char_dim").get<int>();
  c.char_hidden = defaults.at("char_hidden").get<int>();
  c.buffer_hidden = defaults.at("buffer_hidden").get<int>();
  c.stack_hidden = defaults.at("stack_hidden").get<int>();
  c.history_hidden = defaults.at("history_hidden").get<int>();
  c.action_dim = defaults.at("action_dim").get<int>();
  c.node_dim = defaults.at("node_dim").get<int>();
  c.dropout = defaults.at("dropout").get<double>();
  c.validate();
  return c;
}

// Per-label affine composition weights.
struct Composition {
  Parameter* w = nullptr;
  Parameter* b = nullptr;
};

class Model {
 public:
  Model(ModelConfig config, Vocabulary vocab, std::uint64_t seed)
      : config_(config), vocab_(std::move(vocab)), alphabet_(vocab_.labels) {
    config_.validate();
    Rng rng(seed);
    auto d = [](int x) { return static_cast<std::size_t>(x); };

    word_table = &store_.add(
        "word_table", glorot_uniform(rng, d(vocab_.token_table_size()), d(config_.word_dim)));
    pos_table = &store_.add(
        "pos_table", glorot_uniform(rng, d(vocab_.pos_table_size()), d(config_.pos_dim)));
    char_table = &store_.add(
        "char_table", glorot_uniform(rng, d(vocab_.char_table_size()), d(config_.char_dim)));
    action_table = &store_.add(
        "action_table", glorot_uniform(rng, d(alphabet_.size()), d(config_.action_dim)));

    char_fw = register_lstm(store_, "char_fw", d(config_.char_dim), d(config_.char_hidden), rng);
    char_bw = register_lstm(store_, "char_bw", d(config_.char_dim), d(config_.char_hidden), rng);
    buffer_lstm = register_lstm(store_, "buffer", d(config_.word_repr_dim()),
                                d(config_.buffer_hidden), rng);
    history_lstm = register_lstm(store_, "history", d(config_.action_dim),
                                 d(config_.history_hidden), rng);
    stack_lstm = register_lstm(store_, "stack", d(config_.node_dim), d(config_.stack_hidden), rng);

    w_leaf = &store_.add("leaf.w", glorot_uniform(rng, d(config_.node_dim),
                                                  d(config_.word_repr_dim() + config_.buffer_hidden)));
    b_leaf = &store_.add("leaf.b", Tensor({d(config_.node_dim)}));

    // one unary composition per base label; one binary composition per
    // base-or-temporary label (the composition function is distinct per label)
    for (const auto& name : vocab_.labels) {
      unary_comp_[name] = Composition{
          &store_.add("compose.unary." + name,
                      glorot_uniform(rng, d(config_.node_dim), d(config_.node_dim))),
          &store_.add("compose.unary." + name + ".b", Tensor({d(config_.node_dim)}))};
      for (bool temporary : {false, true}) {
        std::string key = to_string(Label{name, temporary});
        binary_comp_[key] = Composition{
            &store_.add("compose.binary." + key,
                        glorot_uniform(rng, d(config_.node_dim), d(2 * config_.node_dim))),
            &store_.add("compose.binary." + key + ".b", Tensor({d(config_.node_dim)}))};
      }
    }

    w_out = &store_.add("classifier.w", glorot_uniform(rng, d(alphabet_.size()),
                                                       d(config_.state_dim())));
    b_out = &store_.add("classifier.b", Tensor({d(alphabet_.size())}));
  }

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const ActionAlphabet& alphabet() const { return alphabet_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  const Composition& unary_composition(const Label& label) const {
    if (label.temporary) throw InternalError("unary composition for temporary label");
    auto it = unary_comp_.find(label.name);
    if (it == unary_comp_.end())
      throw DataError("label '" + label.name + "' not in the model alphabet");
    return it->second;
  }

  const Composition& binary_composition(const Label& label) const {
    auto it = binary_comp_.find(to_string(label));
    if (it == binary_comp_.end())
      throw DataError("label '" + to_string(label) + "' not in the model alphabet");
    return it->second;
  }

  Parameter* word_table = nullptr;
  Parameter* pos_table = nullptr;
  Parameter* char_table = nullptr;
  Parameter* action_table = nullptr;
  LstmParams char_fw, char_bw, buffer_lstm, history_lstm, stack_lstm;
  Parameter* w_leaf = nullptr;
  Parameter* b_leaf = nullptr;
  Parameter* w_out = nullptr;
  Parameter* b_out = nullptr;

 private:
  ModelConfig config_;
  Vocabulary vocab_;
  ActionAlphabet alphabet_;
  ParameterStore store_;
  std::map<std::string, Composition> unary_comp_;
  std::map<std::string, Composition> binary_comp_;
};

// Initializes in-vocabulary word rows from a pretrained table; exact match
// first, then ASCII-lowercase fallback. Uncovered rows keep their random
// initialization.
inline CoverageReport apply_pretrained_embeddings(Model& model, const EmbeddingTable& table) {
  if (table.dim != static_cast<std::size_t>(model.config().word_dim))
    throw DataError("embedding dim " + std::to_string(table.dim) +
                    " does not match word_dim " + std::to_string(model.config().word_dim));
  CoverageReport report;
  const auto& vocab = model.vocab();
  report.total = vocab.tokens.size();
  for (std::size_t i = 0; i < vocab.tokens.size(); ++i) {
    auto it = table.vectors.find(vocab.tokens[i]);
    if (it == table.vectors.end()) it = table.vectors.find(ascii_lower(vocab.tokens[i]));
    if (it == table.vectors.end()) continue;
    ++report.covered;
    for (std::size_t j = 0; j < table.dim; ++j)
      model.word_table->value.at(i, j) = it->second[j];
  }
  return report;
}

// --- Checkpoint --------------------------------------------------------------

inline constexpr const char* kModelFormatName = "nestrec-model";
inline constexpr int kModelFormatVersion = 1;

inline json model_to_json(const Model& model) {
  json params = json::array();
  for (const Parameter* p : model.params().all()) {
    params.push_back({{"name", p->name},
                      {"shape", p->value.shape},
                      {"values", p->value.v}});
  }
  return {{"format", kModelFormatName},
          {"version", kModelFormatVersion},
          {"config", config_to_json(model.config())},
          {"labels", model.vocab().labels},
          {"tokens", model.vocab().tokens},
          {"chars", model.vocab().chars},
          {"pos", model.vocab().pos_tags},
          {"params", params}};
}

// Atomic write: temp file in the same directory, then rename.
inline void save_model(const Model& model, const std::string& path) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot open for writing: " + tmp);
    out << model_to_json(model).dump();
    if (!out) throw DataError("failed writing checkpoint: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Model model_from_json(const json& j) {
  if (!j.contains("format") || j.at("format").get<std::string>() != kModelFormatName)
    throw DataError("not a model checkpoint (missing format header)");
  if (j.at("version").get<int>() != kModelFormatVersion)
    throw DataError("unsupported checkpoint version " + j.at("version").dump());
  ModelConfig config = config_from_json(j.at("config"));
  Vocabulary vocab;
  vocab.labels = j.at("labels").get<std::vector<std::string>>();
  vocab.tokens = j.at("tokens").get<std::vector<std::string>>();
  vocab.chars = j.at("chars").get<std::vector<std::string>>();
  vocab.pos_tags = j.at("pos").get<std::vector<std::string>>();
  vocab.rebuild_indices();

  Model model(config, std::move(vocab), /*seed=*/0);
  std::size_t filled = 0;
  for (const auto& entry : j.at("params")) {
    std::string name = entry.at("name").get<std::string>();
    Parameter* p = model.params().find(name);
    if (!p) throw DataError("checkpoint has unknown parameter '" + name + "'");
    auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape != p->value.shape)
      throw DataError("checkpoint shape mismatch for '" + name + "'");
    auto values = entry.at("values").get<std::vector<double>>();
    if (values.size() != p->value.size())
      throw DataError("checkpoint value count mismatch for '" + name + "'");
    p->value.v = std::move(values);
    ++filled;
  }
  if (filled != model.params().count())
    throw DataError("checkpoint is missing " +
                    std::to_string(model.params().count() - filled) + " parameter(s)");
  return model;
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("unreadable model file " + path + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace nestrec
