#pragma once

// Corpus ingestion and serialization. The interchange format is JSON lines:
// one object per sentence with "tokens", "pos" and "mentions" (half-open
// spans), converted to inclusive spans at this boundary. See
// docs/corpus-format.md for the schema.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "nestrec/annotation.hpp"

namespace nestrec {

using nlohmann::json;

struct LoadOptions {
  bool strict = true;          // invalid records fail the load; lenient skips them
  bool drop_conflicts = false; // keep the first of identically-spanned mentions
};

struct LoadIssue {
  std::size_t line = 0;  // 1-based
  std::string message;
  bool fatal = true;  // false for logged drops under drop_conflicts
};

struct LoadResult {
  std::vector<SentenceAnnotation> sentences;
  std::vector<LoadIssue> issues;

  bool ok() const {
    for (const auto& issue : issues)
      if (issue.fatal) return false;
    return true;
  }
  std::string issue_summary() const {
    std::ostringstream out;
    for (const auto& issue : issues)
      out << "line " << issue.line << ": " << issue.message << "\n";
    return out.str();
  }
};

namespace detail {

inline void check_label_name(const std::string& name) {
  if (name.empty()) throw DataError("empty label");
  if (name.back() == '*') throw DataError("label '" + name + "' ends in the reserved '*'");
  if (name == "$") throw DataError("label '$' collides with the terminal symbol");
}

inline SentenceAnnotation parse_record(const json& record, const LoadOptions& options,
                                       std::vector<std::string>* drop_log) {
  static const std::vector<std::string> kKeys = {"tokens", "pos", "mentions"};
  for (const auto& [key, value] : record.items())
    if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end())
      throw DataError("unknown key '" + key + "'");

  SentenceAnnotation sentence;
  sentence.tokens = record.at("tokens").get<std::vector<std::string>>();
  sentence.pos_tags = record.at("pos").get<std::vector<std::string>>();
  if (sentence.tokens.empty()) throw DataError("empty token sequence");
  if (sentence.tokens.size() != sentence.pos_tags.size())
    throw DataError("tokens/pos length mismatch: " + std::to_string(sentence.tokens.size()) +
                    " vs " + std::to_string(sentence.pos_tags.size()));
  for (const auto& t : sentence.tokens)
    if (t.empty()) throw DataError("empty token");
  for (const auto& t : sentence.pos_tags)
    if (t.empty()) throw DataError("empty POS tag");

  std::map<Span, std::string> seen_spans;
  for (const auto& m : record.at("mentions")) {
    int start = m.at("start").get<int>();
    int end_exclusive = m.at("end").get<int>();
    std::string label = m.at("label").get<std::string>();
    check_label_name(label);
    if (start < 0 || end_exclusive <= start || end_exclusive > sentence.size())
      throw DataError("mention [" + std::to_string(start) + "," +
                      std::to_string(end_exclusive) + ") out of bounds for length " +
                      std::to_string(sentence.size()));
    Span span{start, end_exclusive - 1};
    auto it = seen_spans.find(span);
    if (it != seen_spans.end() && it->second != label) {
      if (options.drop_conflicts) {
        if (drop_log)
          drop_log->push_back("dropped mention " + to_string(span) + "," + label +
                              " conflicting with kept label " + it->second);
        continue;
      }
      throw DataError("mentions " + to_string(span) + "," + it->second + " and " +
                      to_string(span) + "," + label + " share an identical span");
    }
    seen_spans.emplace(span, label);
    sentence.mentions.insert(MentionAnnotation(span, std::move(label)));
  }

  NestingReport nesting = validate_nesting(sentence.mentions, sentence.size());
  if (!nesting.ok()) throw DataError(nesting.summary());
  return sentence;
}

}  // namespace detail

inline LoadResult load_corpus_stream(std::istream& in, const LoadOptions& options = {}) {
  LoadResult result;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    try {
      json record = json::parse(line);
      std::vector<std::string> drops;
      SentenceAnnotation sentence = detail::parse_record(record, options, &drops);
      for (auto& message : drops)
        result.issues.push_back({line_number, std::move(message), false});
      result.sentences.push_back(std::move(sentence));
    } catch (const json::exception& e) {
      result.issues.push_back({line_number, e.what(), options.strict});
    } catch (const DataError& e) {
      result.issues.push_back({line_number, e.what(), options.strict});
    }
  }
  return result;
}

inline LoadResult load_corpus(const std::string& path, const LoadOptions& options = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file: " + path);
  return load_corpus_stream(in, options);
}

// Strict entry point for pipelines: throws on any fatal issue.
inline std::vector<SentenceAnnotation> load_corpus_strict(const std::string& path,
                                                          const LoadOptions& options = {}) {
  LoadResult result = load_corpus(path, options);
  if (!result.ok())
    throw DataError("invalid corpus " + path + ":\n" + result.issue_summary());
  return std::move(result.sentences);
}

inline json sentence_to_json(const SentenceAnnotation& sentence) {
  json mentions = json::array();
  for (const auto& m : sentence.mentions)
    mentions.push_back({{"start", m.span.start},
                        {"end", m.span.end + 1},
                        {"label", m.label.name}});
  return {{"tokens", sentence.tokens}, {"pos", sentence.pos_tags}, {"mentions", mentions}};
}

inline void save_corpus(const std::string& path,
                        std::span<const SentenceAnnotation> sentences) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  for (const auto& s : sentences) out << sentence_to_json(s).dump() << "\n";
}

// --- Vocabulary --------------------------------------------------------------

inline std::string ascii_lower(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Splits UTF-8 into code points; invalid bytes fall back to single-byte units.
inline std::vector<std::string> utf8_units(const std::string& s) {
  std::vector<std::string> units;
  std::size_t i = 0;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3
                      : (c >> 3) == 0x1E ? 4 : 1;
    if (i + len > s.size()) len = 1;
    units.push_back(s.substr(i, len));
    i += len;
  }
  return units;
}

// Index spaces for tokens, characters, POS tags and the label alphabet.
// Reserved rows (UNK, and the $ symbol for the token/POS spaces) sit after
// the regular entries, so serialized inventories never contain sentinels.
struct Vocabulary {
  std::vector<std::string> tokens;
  std::vector<std::string> chars;
  std::vector<std::string> pos_tags;
  std::vector<std::string> labels;  // sorted base labels
  std::map<std::string, long long> token_counts;

  std::unordered_map<std::string, int> token_index;
  std::unordered_map<std::string, int> char_index;
  std::unordered_map<std::string, int> pos_index;

  int unk_token_id() const { return static_cast<int>(tokens.size()); }
  int eos_token_id() const { return static_cast<int>(tokens.size()) + 1; }
  int token_table_size() const { return static_cast<int>(tokens.size()) + 2; }

  int unk_char_id() const { return static_cast<int>(chars.size()); }
  int eos_char_id() const { return static_cast<int>(chars.size()) + 1; }
  int char_table_size() const { return static_cast<int>(chars.size()) + 2; }

  int unk_pos_id() const { return static_cast<int>(pos_tags.size()); }
  int eos_pos_id() const { return static_cast<int>(pos_tags.size()) + 1; }
  int pos_table_size() const { return static_cast<int>(pos_tags.size()) + 2; }

  // Exact match, then ASCII-lowercase fallback, then UNK.
  int token_id(const std::string& token) const {
    auto it = token_index.find(token);
    if (it != token_index.end()) return it->second;
    it = token_index.find(ascii_lower(token));
    if (it != token_index.end()) return it->second;
    return unk_token_id();
  }

  int char_id(const std::string& unit) const {
    auto it = char_index.find(unit);
    return it == char_index.end() ? unk_char_id() : it->second;
  }

  int pos_id(const std::string& tag) const {
    auto it = pos_index.find(tag);
    return it == pos_index.end() ? unk_pos_id() : it->second;
  }

  void rebuild_indices() {
    token_index.clear();
    char_index.clear();
    pos_index.clear();
    for (std::size_t i = 0; i < tokens.size(); ++i) token_index[tokens[i]] = static_cast<int>(i);
    for (std::size_t i = 0; i < chars.size(); ++i) char_index[chars[i]] = static_cast<int>(i);
    for (std::size_t i = 0; i < pos_tags.size(); ++i) pos_index[pos_tags[i]] = static_cast<int>(i);
  }
};

namespace detail {

// Frequency order with lexicographic tie-breaking, so identical corpora give
// identical inventories regardless of sentence order.
inline std::vector<std::string> by_frequency(const std::map<std::string, long long>& counts) {
  std::vector<std::string> items;
  items.reserve(counts.size());
  for (const auto& [k, _] : counts) items.push_back(k);
  std::sort(items.begin(), items.end(), [&](const std::string& a, const std::string& b) {
    long long ca = counts.at(a), cb = counts.at(b);
    if (ca != cb) return ca > cb;
    return a < b;
  });
  return items;
}

}  // namespace detail

inline Vocabulary build_vocabulary(std::span<const SentenceAnnotation> corpus) {
  Vocabulary vocab;
  std::map<std::string, long long> char_counts, pos_counts;
  std::set<std::string> label_set;
  for (const auto& sentence : corpus) {
    for (const auto& token : sentence.tokens) {
      ++vocab.token_counts[token];
      for (const auto& unit : utf8_units(token)) ++char_counts[unit];
    }
    for (const auto& tag : sentence.pos_tags) ++pos_counts[tag];
    for (const auto& m : sentence.mentions) label_set.insert(m.label.name);
  }
  vocab.tokens = detail::by_frequency(vocab.token_counts);
  vocab.chars = detail::by_frequency(char_counts);
  vocab.pos_tags = detail::by_frequency(pos_counts);
  vocab.labels.assign(label_set.begin(), label_set.end());
  vocab.rebuild_indices();
  return vocab;
}

// --- Pretrained embeddings ---------------------------------------------------

struct EmbeddingTable {
  std::size_t dim = 0;
  std::unordered_map<std::string, std::vector<double>> vectors;
};

// Text format: token followed by `dim` whitespace-separated reals per line.
inline EmbeddingTable load_embeddings(const std::string& path, std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embeddings file: " + path);
  EmbeddingTable table;
  table.dim = dim;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token))
      throw DataError("embeddings line " + std::to_string(line_number) + ": empty line");
    std::vector<double> values;
    values.reserve(dim);
    double x;
    while (fields >> x) values.push_back(x);
    if (values.size() != dim)
      throw DataError("embeddings line " + std::to_string(line_number) + ": expected " +
                      std::to_string(dim) + " values, got " + std::to_string(values.size()));
    table.vectors[token] = std::move(values);
  }
  return table;
}

struct CoverageReport {
  std::size_t covered = 0;
  std::size_t total = 0;
  double percent() const {
    return total == 0 ? 0.0 : 100.0 * static_cast<double>(covered) / static_cast<double>(total);
  }
};

// --- Corpus statistics -------------------------------------------------------

struct CorpusStats {
  std::size_t sentences = 0;
  std::size_t tokens = 0;
  std::size_t mentions = 0;
  std::size_t nested_mentions = 0;  // contains or is contained by another
  std::size_t sentences_with_nesting = 0;
  std::size_t max_nesting_depth = 0;  // 1 = mention with nothing nested inside
  std::map<std::string, std::size_t> label_histogram;
  std::map<int, std::size_t> length_histogram;

  double nested_mention_percent() const {
    return mentions == 0 ? 0.0 : 100.0 * static_cast<double>(nested_mentions) / mentions;
  }
  double nested_sentence_percent() const {
    return sentences == 0 ? 0.0
                          : 100.0 * static_cast<double>(sentences_with_nesting) / sentences;
  }
};

inline CorpusStats corpus_stats(std::span<const SentenceAnnotation> corpus) {
  CorpusStats stats;
  for (const auto& sentence : corpus) {
    ++stats.sentences;
    stats.tokens += sentence.tokens.size();
    ++stats.length_histogram[sentence.size()];
    std::vector<MentionAnnotation> ms(sentence.mentions.begin(), sentence.mentions.end());
    bool sentence_nested = false;
    for (const auto& m : ms) {
      ++stats.mentions;
      ++stats.label_histogram[m.label.name];
      bool nested = false;
      for (const auto& other : ms) {
        if (m == other) continue;
        if (m.span.contains(other.span) || other.span.contains(m.span)) nested = true;
      }
      if (nested) {
        ++stats.nested_mentions;
        sentence_nested = true;
      }
    }
    if (sentence_nested) ++stats.sentences_with_nesting;

    // longest containment chain; mentions sorted by span length
    std::sort(ms.begin(), ms.end(), [](const auto& a, const auto& b) {
      return a.span.length() < b.span.length();
    });
    std::vector<std::size_t> depth(ms.size(), 1);
    for (std::size_t i = 0; i < ms.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (ms[i].span.contains(ms[j].span) && ms[i].span != ms[j].span)
          depth[i] = std::max(depth[i], depth[j] + 1);
    for (auto d : depth) stats.max_nesting_depth = std::max(stats.max_nesting_depth, d);
  }
  return stats;
}

inline json stats_to_json(const CorpusStats& stats) {
  json labels = json::object();
  for (const auto& [label, count] : stats.label_histogram) labels[label] = count;
  json lengths = json::object();
  for (const auto& [length, count] : stats.length_histogram)
    lengths[std::to_string(length)] = count;
  return {{"sentences", stats.sentences},
          {"tokens", stats.tokens},
          {"mentions", stats.mentions},
          {"nested_mentions", stats.nested_mentions},
          {"nested_mention_percent", stats.nested_mention_percent()},
          {"sentences_with_nesting", stats.sentences_with_nesting},
          {"nested_sentence_percent", stats.nested_sentence_percent()},
          {"max_nesting_depth", stats.max_nesting_depth},
          {"label_histogram", labels},
          {"length_histogram", lengths}};
}

}  // namespace nestrec
