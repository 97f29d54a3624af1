#pragma once

// Teacher-forced training: per-sentence updates (backward, global-norm clip,
// Adam, decoupled l2 decay), per-epoch dev F1 with best-checkpoint keeping and
// patience-based early stopping.

#include <chrono>
#include <cmath>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "nestrec/evaluation.hpp"
#include "nestrec/optimizer.hpp"
#include "nestrec/parser.hpp"

namespace nestrec {

struct TrainConfig {
  int max_epochs = 50;
  int patience = 5;           // epochs without dev improvement before stopping
  double l2 = 1e-6;           // decoupled decay per update step
  AdamConfig adam;
  double clip_threshold = 3.0;
  int eval_threads = 1;
  std::string checkpoint_path;  // written on every improvement when non-empty

  void validate() const {
    if (max_epochs < 1) throw DataError("max_epochs must be at least 1");
    if (patience < 1) throw DataError("patience must be at least 1");
    if (clip_threshold <= 0.0) throw DataError("clip threshold must be positive");
    if (l2 < 0.0) throw DataError("l2 coefficient must be non-negative");
    if (eval_threads < 1) throw DataError("eval_threads must be at least 1");
  }
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double mean_nll = 0.0;  // action-level
  double dev_precision = 0.0;
  double dev_recall = 0.0;
  double dev_f1 = 0.0;
  double seconds = 0.0;
  bool best = false;
};

inline json epoch_to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},        {"mean_nll", r.mean_nll},
          {"dev_precision", r.dev_precision}, {"dev_recall", r.dev_recall},
          {"dev_f1", r.dev_f1},      {"seconds", r.seconds},
          {"best", r.best}};
}

struct TrainLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;   // 1-based; 0 = never improved
  double best_f1 = 0.0;
};

namespace detail {

inline std::vector<Tensor> snapshot_values(const ParameterStore& store) {
  std::vector<Tensor> values;
  for (const Parameter* p : store.all()) values.push_back(p->value);
  return values;
}

inline void restore_values(ParameterStore& store, const std::vector<Tensor>& values) {
  auto params = store.all();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace detail

// Trains in place and leaves the model at its best-dev-F1 parameters.
// Sentences must already have passed validation (oracle extraction throws on
// any that have not). A gold action rejected by the constraint system aborts:
// that is an internal inconsistency, never skipped.
inline TrainLog train(Model& model, std::span<const SentenceAnnotation> train_set,
                      std::span<const SentenceAnnotation> dev_set, const TrainConfig& config,
                      std::uint64_t seed, std::ostream* log_out = nullptr) {
  config.validate();
  if (train_set.empty()) throw DataError("empty training corpus");

  std::vector<std::vector<Action>> gold;
  gold.reserve(train_set.size());
  for (const auto& sentence : train_set)
    gold.push_back(oracle_actions(mentions_to_forest(sentence)));

  std::vector<MentionSet> dev_gold;
  dev_gold.reserve(dev_set.size());
  for (const auto& sentence : dev_set) dev_gold.push_back(sentence.mentions);

  auto params = model.params().all();
  Adam adam(config.adam);
  Rng rng(seed);

  TrainLog log;
  std::vector<Tensor> best_values = detail::snapshot_values(model.params());
  int epochs_since_best = 0;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    auto epoch_start = std::chrono::steady_clock::now();

    // seeded Fisher-Yates shuffle
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.below(static_cast<int>(i))]);

    double nll_sum = 0.0;
    long long action_count = 0;
    for (std::size_t idx : order) {
      model.params().zero_grads();
      Tape tape;
      SentenceLossResult sentence_loss =
          teacher_forced_loss(model, tape, train_set[idx], gold[idx], &rng);
      if (!std::isfinite(sentence_loss.total_nll))
        throw InternalError("non-finite loss at epoch " + std::to_string(epoch) +
                            ", sentence " + std::to_string(idx));
      tape.backward(sentence_loss.loss);
      clip_global_norm(params, config.clip_threshold);
      adam.step(params);
      apply_weight_decay(params, config.l2);
      nll_sum += sentence_loss.total_nll;
      action_count += sentence_loss.steps;
    }

    auto predictions = decode_corpus(model, dev_set, config.eval_threads);
    PRF dev = score(dev_gold, predictions);

    EpochRecord record;
    record.epoch = epoch;
    record.mean_nll = action_count == 0 ? 0.0 : nll_sum / static_cast<double>(action_count);
    record.dev_precision = dev.precision();
    record.dev_recall = dev.recall();
    record.dev_f1 = dev.f1();
    record.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();

    if (record.dev_f1 > log.best_f1 || log.best_epoch == 0) {
      log.best_f1 = record.dev_f1;
      log.best_epoch = epoch;
      record.best = true;
      best_values = detail::snapshot_values(model.params());
      if (!config.checkpoint_path.empty()) save_model(model, config.checkpoint_path);
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
    }

    log.epochs.push_back(record);
    if (log_out) (*log_out) << epoch_to_json(record).dump() << "\n";

    if (epochs_since_best >= config.patience) break;
  }

  detail::restore_values(model.params(), best_values);
  return log;
}

}  // namespace nestrec
