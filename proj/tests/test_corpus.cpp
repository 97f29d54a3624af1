#include "nestrec/corpus.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nestrec/rng.hpp"
#include "support/synthetic.hpp"

using namespace nestrec;

namespace {

LoadResult load_text(const std::string& text, LoadOptions options = {}) {
  std::istringstream in(text);
  return load_corpus_stream(in, options);
}

struct TempFile {
  std::filesystem::path path;
  explicit TempFile(const std::string& name) {
    path = std::filesystem::temp_directory_path() / ("nestrec_test_" + name);
  }
  ~TempFile() { std::filesystem::remove(path); }
};

}  // namespace

TEST_CASE("load_corpus parses records and converts spans to inclusive form") {
  auto result = load_text(
      R"({"tokens":["French","officials","greeted","her"],"pos":["JJ","NNS","VBD","PRP"],)"
      R"("mentions":[{"start":0,"end":1,"label":"GPE"},{"start":0,"end":2,"label":"PER"},)"
      R"({"start":3,"end":4,"label":"PER"}]})"
      "\n");
  REQUIRE(result.ok());
  REQUIRE(result.sentences.size() == 1);
  const auto& s = result.sentences[0];
  MentionSet expected = {{0, 0, "GPE"}, {0, 1, "PER"}, {3, 3, "PER"}};
  REQUIRE(s.mentions == expected);
}

TEST_CASE("load_corpus surfaces malformed input with line numbers") {
  SECTION("empty input is an empty corpus") {
    auto result = load_text("");
    REQUIRE(result.ok());
    REQUIRE(result.sentences.empty());
  }
  SECTION("broken JSON") {
    auto result = load_text("{not json\n");
    REQUIRE_FALSE(result.ok());
    REQUIRE(result.issues[0].line == 1);
  }
  SECTION("length mismatch") {
    auto result = load_text(R"({"tokens":["a","b"],"pos":["N"],"mentions":[]})" "\n");
    REQUIRE_FALSE(result.ok());
    REQUIRE(result.issues[0].message.find("length mismatch") != std::string::npos);
  }
  SECTION("crossing mentions name the line") {
    auto result = load_text(
        "{\"tokens\":[\"a\",\"b\"],\"pos\":[\"N\",\"N\"],\"mentions\":[]}\n"
        R"({"tokens":["a","b","c","d"],"pos":["N","N","N","N"],)"
        R"("mentions":[{"start":0,"end":3,"label":"A"},{"start":1,"end":4,"label":"B"}]})"
        "\n");
    REQUIRE_FALSE(result.ok());
    REQUIRE(result.issues.size() == 1);
    REQUIRE(result.issues[0].line == 2);
    REQUIRE(result.issues[0].message.find("cross") != std::string::npos);
  }
  SECTION("out-of-bounds, unknown keys, reserved labels") {
    REQUIRE_FALSE(load_text(
        R"({"tokens":["a"],"pos":["N"],"mentions":[{"start":0,"end":2,"label":"A"}]})" "\n").ok());
    REQUIRE_FALSE(load_text(R"({"tokens":["a"],"pos":["N"],"mention":[]})" "\n").ok());
    REQUIRE_FALSE(load_text(
        R"({"tokens":["a"],"pos":["N"],"mentions":[{"start":0,"end":1,"label":"A*"}]})" "\n").ok());
    REQUIRE_FALSE(load_text(
        R"({"tokens":["a"],"pos":["N"],"mentions":[{"start":0,"end":1,"label":"$"}]})" "\n").ok());
  }
}

TEST_CASE("lenient mode skips invalid records and keeps the rest") {
  std::string text =
      "{\"tokens\":[\"a\"],\"pos\":[\"N\"],\"mentions\":[]}\n"
      "{broken\n"
      "{\"tokens\":[\"b\"],\"pos\":[\"N\"],\"mentions\":[]}\n";
  auto strict = load_text(text);
  REQUIRE_FALSE(strict.ok());
  auto lenient = load_text(text, {.strict = false});
  REQUIRE(lenient.ok());
  REQUIRE(lenient.sentences.size() == 2);
  REQUIRE(lenient.issues.size() == 1);
  REQUIRE(lenient.issues[0].line == 2);
}

TEST_CASE("identical spans with different labels are rejected unless dropped") {
  std::string line =
      R"({"tokens":["a","b"],"pos":["N","N"],)"
      R"("mentions":[{"start":0,"end":2,"label":"A"},{"start":0,"end":2,"label":"B"}]})"
      "\n";
  SECTION("default: validation violation") {
    auto result = load_text(line);
    REQUIRE_FALSE(result.ok());
    REQUIRE(result.issues[0].message.find("identical span") != std::string::npos);
  }
  SECTION("drop-conflicts keeps the first in input order and logs the drop") {
    auto result = load_text(line, {.strict = true, .drop_conflicts = true});
    REQUIRE(result.ok());
    MentionSet expected = {{0, 1, "A"}};
    REQUIRE(result.sentences[0].mentions == expected);
    REQUIRE(result.issues.size() == 1);
    REQUIRE_FALSE(result.issues[0].fatal);
  }
  SECTION("exact duplicates are deduplicated silently") {
    auto result = load_text(
        R"({"tokens":["a","b"],"pos":["N","N"],)"
        R"("mentions":[{"start":0,"end":2,"label":"A"},{"start":0,"end":2,"label":"A"}]})"
        "\n");
    REQUIRE(result.ok());
    REQUIRE(result.issues.empty());
    REQUIRE(result.sentences[0].mentions.size() == 1);
  }
}

TEST_CASE("corpus save/load round-trip is the identity") {
  Rng rng(404);
  auto corpus = testing::random_corpus(rng, 40);
  TempFile file("roundtrip.jsonl");
  save_corpus(file.path.string(), corpus);
  auto reloaded = load_corpus_strict(file.path.string());
  REQUIRE(reloaded.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    REQUIRE(reloaded[i].tokens == corpus[i].tokens);
    REQUIRE(reloaded[i].pos_tags == corpus[i].pos_tags);
    REQUIRE(reloaded[i].mentions == corpus[i].mentions);
  }
  // and a second serialization is byte-identical
  TempFile file2("roundtrip2.jsonl");
  save_corpus(file2.path.string(), reloaded);
  std::ifstream a(file.path), b(file2.path);
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  REQUIRE(sa.str() == sb.str());
}

TEST_CASE("vocabulary construction is deterministic and order-independent") {
  Rng rng(11);
  auto corpus = testing::random_corpus(rng, 30);
  auto vocab = build_vocabulary(corpus);

  std::vector<SentenceAnnotation> reversed(corpus.rbegin(), corpus.rend());
  auto vocab2 = build_vocabulary(reversed);
  REQUIRE(vocab.tokens == vocab2.tokens);
  REQUIRE(vocab.chars == vocab2.chars);
  REQUIRE(vocab.pos_tags == vocab2.pos_tags);
  REQUIRE(vocab.labels == vocab2.labels);

  SECTION("ids are dense from 0 with reserved rows after regular entries") {
    for (std::size_t i = 0; i < vocab.tokens.size(); ++i)
      REQUIRE(vocab.token_index.at(vocab.tokens[i]) == static_cast<int>(i));
    REQUIRE(vocab.unk_token_id() == static_cast<int>(vocab.tokens.size()));
    REQUIRE(vocab.token_table_size() == static_cast<int>(vocab.tokens.size()) + 2);
  }
  SECTION("labels are sorted and closed under temporary derivation downstream") {
    REQUIRE(std::is_sorted(vocab.labels.begin(), vocab.labels.end()));
  }
  SECTION("unknown tokens fall back to lowercase before UNK") {
    Vocabulary v;
    v.tokens = {"indonesian", "leaders"};
    v.rebuild_indices();
    REQUIRE(v.token_id("Indonesian") == 0);
    REQUIRE(v.token_id("INDONESIAN") == 0);
    REQUIRE(v.token_id("visited") == v.unk_token_id());
  }
}

TEST_CASE("utf8_units splits code points") {
  auto units = utf8_units("a\xC3\xA9z");  // a, e-acute, z
  REQUIRE(units.size() == 3);
  REQUIRE(units[0] == "a");
  REQUIRE(units[1] == "\xC3\xA9");
  REQUIRE(units[2] == "z");
}

TEST_CASE("load_embeddings parses the text format") {
  TempFile file("embeddings.txt");
  {
    std::ofstream out(file.path);
    out << "the 0.1 0.2 0.3 0.4\n";
    out << "indonesian -1 2 -3 4\n";
    out << "of 0 0 0.5 0\n";
  }
  SECTION("three entries with dim 4") {
    auto table = load_embeddings(file.path.string(), 4);
    REQUIRE(table.vectors.size() == 3);
    REQUIRE(table.vectors.at("indonesian")[3] == 4.0);
  }
  SECTION("dimension mismatch reports the line number") {
    try {
      load_embeddings(file.path.string(), 5);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      REQUIRE(std::string(e.what()).find("line 1") != std::string::npos);
    }
  }
}

TEST_CASE("corpus_stats counts nesting by the containment definition") {
  SECTION("nested pair fixture: 3 mentions, 2 nested") {
    std::vector<SentenceAnnotation> corpus = {testing::nested_pair_fixture()};
    auto stats = corpus_stats(corpus);
    REQUIRE(stats.mentions == 3);
    REQUIRE(stats.nested_mentions == 2);
    REQUIRE(stats.nested_mention_percent() == Catch::Approx(100.0 * 2.0 / 3.0));
    REQUIRE(stats.sentences_with_nesting == 1);
    REQUIRE(stats.max_nesting_depth == 2);
    REQUIRE(stats.label_histogram.at("PER") == 2);
  }
  SECTION("no mentions means zero nesting") {
    SentenceAnnotation s;
    s.tokens = {"a", "b"};
    s.pos_tags = {"N", "N"};
    std::vector<SentenceAnnotation> corpus = {s};
    auto stats = corpus_stats(corpus);
    REQUIRE(stats.nested_mention_percent() == 0.0);
    REQUIRE(stats.max_nesting_depth == 0);
  }
  SECTION("disjoint mentions are not nested") {
    SentenceAnnotation s;
    s.tokens = {"a", "b", "c", "d"};
    s.pos_tags = {"N", "N", "N", "N"};
    s.mentions.insert({0, 1, "A"});
    s.mentions.insert({2, 3, "B"});
    std::vector<SentenceAnnotation> corpus = {s};
    auto stats = corpus_stats(corpus);
    REQUIRE(stats.nested_mentions == 0);
    REQUIRE(stats.max_nesting_depth == 1);
  }
}
