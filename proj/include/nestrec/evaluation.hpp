#pragma once

// Exact-match mention scoring (micro P/R/F1), the nested/non-nested corpus
// split, and single-thread decode throughput measurement.

#include <algorithm>
#include <chrono>
#include <map>
#include <span>
#include <thread>
#include <vector>

#include "nestrec/parser.hpp"

namespace nestrec {

struct PRF {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  double precision() const {
    return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  double recall() const {
    return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
  double f1() const {
    double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
};

// A prediction is a true positive iff an identical (span, label) pair exists
// in the same sentence's gold set; micro-aggregated over sentences.
inline PRF score(std::span<const MentionSet> gold, std::span<const MentionSet> pred) {
  if (gold.size() != pred.size())
    throw DataError("gold/pred sentence counts differ: " + std::to_string(gold.size()) +
                    " vs " + std::to_string(pred.size()));
  PRF prf;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    for (const auto& m : pred[i])
      gold[i].count(m) ? ++prf.tp : ++prf.fp;
    for (const auto& m : gold[i])
      if (!pred[i].count(m)) ++prf.fn;
  }
  return prf;
}

inline std::map<std::string, PRF> score_per_label(std::span<const MentionSet> gold,
                                                  std::span<const MentionSet> pred) {
  if (gold.size() != pred.size()) throw DataError("gold/pred sentence counts differ");
  std::map<std::string, PRF> by_label;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    for (const auto& m : pred[i])
      gold[i].count(m) ? ++by_label[m.label.name].tp : ++by_label[m.label.name].fp;
    for (const auto& m : gold[i])
      if (!pred[i].count(m)) ++by_label[m.label.name].fn;
  }
  return by_label;
}

inline bool has_nested_mentions(const SentenceAnnotation& sentence) {
  for (auto a = sentence.mentions.begin(); a != sentence.mentions.end(); ++a)
    for (auto b = std::next(a); b != sentence.mentions.end(); ++b)
      if (a->span.contains(b->span) || b->span.contains(a->span)) return true;
  return false;
}

struct NestedSplit {
  std::vector<SentenceAnnotation> nested;
  std::vector<SentenceAnnotation> non_nested;
  std::vector<bool> is_nested;  // per input sentence, in order
};

// Exhaustive, disjoint partition: a sentence is in the nested portion iff
// some mention pair in it has a containment relation.
inline NestedSplit split_nested(std::span<const SentenceAnnotation> corpus) {
  NestedSplit split;
  split.is_nested.reserve(corpus.size());
  for (const auto& sentence : corpus) {
    bool nested = has_nested_mentions(sentence);
    split.is_nested.push_back(nested);
    (nested ? split.nested : split.non_nested).push_back(sentence);
  }
  return split;
}

// Greedy-decodes a corpus; sentences are independent, so they may fan out
// across threads (results keep corpus order).
inline std::vector<MentionSet> decode_corpus(Model& model,
                                             std::span<const SentenceAnnotation> corpus,
                                             int threads = 1) {
  std::vector<MentionSet> predictions(corpus.size());
  if (threads <= 1) {
    for (std::size_t i = 0; i < corpus.size(); ++i)
      predictions[i] = greedy_decode(model, corpus[i]).mentions;
    return predictions;
  }
  std::vector<std::thread> workers;
  std::size_t chunk = (corpus.size() + threads - 1) / threads;
  for (int w = 0; w < threads; ++w) {
    std::size_t begin = w * chunk;
    std::size_t end = std::min(corpus.size(), begin + chunk);
    if (begin >= end) break;
    workers.emplace_back([&, begin, end] {
      for (std::size_t i = begin; i < end; ++i)
        predictions[i] = greedy_decode(model, corpus[i]).mentions;
    });
  }
  for (auto& t : workers) t.join();
  return predictions;
}

struct BenchResult {
  double median_wps = 0.0;
  double min_wps = 0.0;
  double max_wps = 0.0;
  std::size_t total_tokens = 0;
  int repetitions = 0;
};

// Words decoded per second over full-corpus passes: median over repetitions
// after one warm-up pass. Single-threaded by contract.
inline BenchResult bench_decode(Model& model, std::span<const SentenceAnnotation> corpus,
                                int repetitions = 3) {
  if (corpus.empty()) throw DataError("bench_decode on an empty corpus");
  if (repetitions < 1) throw DataError("bench_decode needs at least one repetition");
  std::size_t tokens = 0;
  for (const auto& s : corpus) tokens += s.tokens.size();

  decode_corpus(model, corpus, 1);  // warm-up

  std::vector<double> wps;
  wps.reserve(repetitions);
  for (int rep = 0; rep < repetitions; ++rep) {
    auto start = std::chrono::steady_clock::now();
    decode_corpus(model, corpus, 1);
    std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    wps.push_back(static_cast<double>(tokens) / elapsed.count());
  }
  std::sort(wps.begin(), wps.end());
  BenchResult result;
  result.total_tokens = tokens;
  result.repetitions = repetitions;
  result.min_wps = wps.front();
  result.max_wps = wps.back();
  result.median_wps = wps[wps.size() / 2];
  if (wps.size() % 2 == 0) result.median_wps = 0.5 * (wps[wps.size() / 2 - 1] + wps[wps.size() / 2]);
  return result;
}

}  // namespace nestrec
