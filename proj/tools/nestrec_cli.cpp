// Command-line front end for the nested mention recognizer.
//
// Exit codes: 0 success, 1 validation/data failure, 2 usage error,
// 3 internal invariant breach.

#include <CLI11.hpp>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "nestrec/corpus.hpp"
#include "nestrec/evaluation.hpp"
#include "nestrec/model.hpp"
#include "nestrec/training.hpp"
#include "nestrec/transition.hpp"

namespace {

using namespace nestrec;

constexpr int kExitOk = 0;
constexpr int kExitData = 1;
constexpr int kExitUsage = 2;
constexpr int kExitInternal = 3;

std::string hardware_string() {
  std::ifstream cpuinfo("/proc/cpuinfo");
  std::string line;
  while (std::getline(cpuinfo, line)) {
    if (line.rfind("model name", 0) == 0) {
      auto colon = line.find(':');
      if (colon != std::string::npos) return line.substr(colon + 2);
    }
  }
  return "unknown CPU";
}

std::string percent1(double fraction) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1) << 100.0 * fraction;
  return out.str();
}

// ---- run configuration ------------------------------------------------------

struct Paths {
  std::string train;
  std::string dev;
  std::string embeddings;  // optional
  std::string model_out = "model.json";
  std::string log_out;  // optional
};

struct RunConfig {
  std::optional<std::uint64_t> seed;
  ModelConfig model;
  TrainConfig train;
  Paths paths;
};

void reject_unknown_keys(const json& j, std::initializer_list<const char*> known,
                         const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (std::find_if(known.begin(), known.end(),
                     [&](const char* k) { return key == k; }) == known.end())
      throw DataError("unknown config key '" + key + "' in " + where);
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  reject_unknown_keys(j,
                      {"max_epochs", "patience", "l2", "adam_alpha", "adam_beta1",
                       "adam_beta2", "adam_epsilon", "clip_threshold", "eval_threads"},
                      "train");
  if (j.contains("max_epochs")) c.max_epochs = j.at("max_epochs").get<int>();
  if (j.contains("patience")) c.patience = j.at("patience").get<int>();
  if (j.contains("l2")) c.l2 = j.at("l2").get<double>();
  if (j.contains("adam_alpha")) c.adam.alpha = j.at("adam_alpha").get<double>();
  if (j.contains("adam_beta1")) c.adam.beta1 = j.at("adam_beta1").get<double>();
  if (j.contains("adam_beta2")) c.adam.beta2 = j.at("adam_beta2").get<double>();
  if (j.contains("adam_epsilon")) c.adam.epsilon = j.at("adam_epsilon").get<double>();
  if (j.contains("clip_threshold")) c.clip_threshold = j.at("clip_threshold").get<double>();
  if (j.contains("eval_threads")) c.eval_threads = j.at("eval_threads").get<int>();
  return c;
}

json train_config_to_json(const TrainConfig& c) {
  return {{"max_epochs", c.max_epochs},   {"patience", c.patience},
          {"l2", c.l2},                   {"adam_alpha", c.adam.alpha},
          {"adam_beta1", c.adam.beta1},   {"adam_beta2", c.adam.beta2},
          {"adam_epsilon", c.adam.epsilon}, {"clip_threshold", c.clip_threshold},
          {"eval_threads", c.eval_threads}};
}

RunConfig run_config_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("unreadable config " + path + ": " + e.what());
  }
  reject_unknown_keys(j, {"seed", "model", "train", "paths"}, "config");
  RunConfig config;
  if (j.contains("seed")) config.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("model")) config.model = config_from_json(j.at("model"));
  if (j.contains("train")) config.train = train_config_from_json(j.at("train"));
  if (j.contains("paths")) {
    const json& p = j.at("paths");
    reject_unknown_keys(p, {"train", "dev", "embeddings", "model_out", "log_out"}, "paths");
    if (p.contains("train")) config.paths.train = p.at("train").get<std::string>();
    if (p.contains("dev")) config.paths.dev = p.at("dev").get<std::string>();
    if (p.contains("embeddings") && !p.at("embeddings").is_null())
      config.paths.embeddings = p.at("embeddings").get<std::string>();
    if (p.contains("model_out")) config.paths.model_out = p.at("model_out").get<std::string>();
    if (p.contains("log_out")) config.paths.log_out = p.at("log_out").get<std::string>();
  }
  return config;
}

json effective_config_json(const RunConfig& config) {
  return {{"seed", config.seed ? json(*config.seed) : json(nullptr)},
          {"model", config_to_json(config.model)},
          {"train", train_config_to_json(config.train)},
          {"paths",
           {{"train", config.paths.train},
            {"dev", config.paths.dev},
            {"embeddings", config.paths.embeddings.empty() ? json(nullptr)
                                                           : json(config.paths.embeddings)},
            {"model_out", config.paths.model_out},
            {"log_out", config.paths.log_out}}}};
}

// ---- subcommands -------------------------------------------------------------

int cmd_validate(const std::string& corpus_path, bool drop_conflicts) {
  LoadResult result = load_corpus(corpus_path, {.strict = true, .drop_conflicts = drop_conflicts});
  for (const auto& issue : result.issues)
    std::cerr << (issue.fatal ? "error" : "note") << ": line " << issue.line << ": "
              << issue.message << "\n";
  if (!result.ok()) {
    std::cout << "INVALID: " << result.sentences.size() << " sentence(s) parsed, "
              << result.issues.size() << " issue(s)\n";
    return kExitData;
  }
  std::cout << "OK: " << result.sentences.size() << " sentence(s)\n";
  return kExitOk;
}

int cmd_stats(const std::string& corpus_path, bool lenient, bool drop_conflicts) {
  LoadOptions options{.strict = !lenient, .drop_conflicts = drop_conflicts};
  LoadResult result = load_corpus(corpus_path, options);
  if (!result.ok()) throw DataError("invalid corpus " + corpus_path + ":\n" + result.issue_summary());
  for (const auto& issue : result.issues)
    std::cerr << "note: line " << issue.line << ": " << issue.message << "\n";
  std::cout << stats_to_json(corpus_stats(result.sentences)).dump(2) << "\n";
  return kExitOk;
}

int cmd_oracle_check(const std::string& corpus_path, const std::string& dump_path) {
  auto corpus = load_corpus_strict(corpus_path);
  std::ofstream dump;
  if (!dump_path.empty()) {
    dump.open(dump_path);
    if (!dump) throw DataError("cannot open for writing: " + dump_path);
  }

  ActionAlphabet alphabet(build_vocabulary(corpus).labels);
  std::size_t max_len = 0;
  double total_len = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& sentence = corpus[i];
    Forest forest = mentions_to_forest(sentence);
    auto actions = oracle_actions(forest);
    if (actions.size() > static_cast<std::size_t>(3 * sentence.size()))
      throw InternalError("sentence " + std::to_string(i) + ": oracle length " +
                          std::to_string(actions.size()) + " exceeds 3n = " +
                          std::to_string(3 * sentence.size()));
    Forest rebuilt = replay(actions, sentence.size(), alphabet);
    if (!forests_equal(forest, rebuilt) || forest_to_mentions(rebuilt) != sentence.mentions)
      throw InternalError("sentence " + std::to_string(i) + ": oracle round-trip mismatch");
    max_len = std::max(max_len, actions.size());
    total_len += static_cast<double>(actions.size());
    if (dump.is_open()) {
      for (const auto& action : actions) dump << to_string(action) << "\n";
      dump << "\n";
    }
  }
  std::cout << "round-trip ok: " << corpus.size() << " sentence(s)\n";
  if (!corpus.empty()) {
    std::cout << "max action sequence length: " << max_len << "\n";
    std::cout << "mean action sequence length: " << std::fixed << std::setprecision(2)
              << total_len / static_cast<double>(corpus.size()) << "\n";
  }
  std::cout << "3n bound: satisfied\n";
  return kExitOk;
}

int cmd_train(const RunConfig& config, bool drop_conflicts) {
  if (!config.seed) throw DataError("train requires a seed (config key 'seed' or --seed)");
  if (config.paths.train.empty()) throw DataError("train requires paths.train");
  if (config.paths.dev.empty()) throw DataError("train requires paths.dev");

  std::cerr << "effective config: " << effective_config_json(config).dump() << "\n";

  LoadOptions load_options{.strict = true, .drop_conflicts = drop_conflicts};
  auto train_set = load_corpus_strict(config.paths.train, load_options);
  auto dev_set = load_corpus_strict(config.paths.dev, load_options);
  if (train_set.empty()) throw DataError("training corpus is empty");

  Model model(config.model, build_vocabulary(train_set), *config.seed);
  std::cerr << "parameters: " << model.params().total_values() << " values in "
            << model.params().count() << " tensors; action alphabet size "
            << model.alphabet().size() << "\n";

  if (!config.paths.embeddings.empty()) {
    auto table = load_embeddings(config.paths.embeddings,
                                 static_cast<std::size_t>(config.model.word_dim));
    auto coverage = apply_pretrained_embeddings(model, table);
    std::cerr << "pretrained embedding coverage: " << coverage.covered << "/"
              << coverage.total << " (" << std::fixed << std::setprecision(1)
              << coverage.percent() << "%)\n";
  }

  TrainConfig train_config = config.train;
  train_config.checkpoint_path = config.paths.model_out;

  std::ofstream log_file;
  std::ostream* log_stream = nullptr;
  if (!config.paths.log_out.empty()) {
    log_file.open(config.paths.log_out);
    if (!log_file) throw DataError("cannot open for writing: " + config.paths.log_out);
    log_stream = &log_file;
  }

  TrainLog log = train(model, train_set, dev_set, train_config, *config.seed, log_stream);
  save_model(model, config.paths.model_out);

  std::cout << "epochs run: " << log.epochs.size() << "\n";
  std::cout << "best epoch: " << log.best_epoch << " (dev F1 " << percent1(log.best_f1)
            << ")\n";
  std::cout << "model written to " << config.paths.model_out << "\n";
  return kExitOk;
}

int cmd_decode(const std::string& model_path, const std::string& input_path,
               const std::string& output_path, int threads, bool lenient) {
  Model model = load_model(model_path);
  auto result = load_corpus(input_path, {.strict = !lenient});
  if (!result.ok())
    throw DataError("invalid corpus " + input_path + ":\n" + result.issue_summary());
  for (const auto& issue : result.issues)
    std::cerr << "note: line " << issue.line << ": " << issue.message << "\n";
  const auto& corpus = result.sentences;

  auto start = std::chrono::steady_clock::now();
  auto predictions = decode_corpus(model, corpus, threads);
  std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;

  std::vector<SentenceAnnotation> output = corpus;
  for (std::size_t i = 0; i < output.size(); ++i) output[i].mentions = predictions[i];
  save_corpus(output_path, output);

  std::size_t tokens = 0;
  for (const auto& s : corpus) tokens += s.tokens.size();
  std::cout << "decoded " << corpus.size() << " sentence(s), " << tokens << " token(s) in "
            << std::fixed << std::setprecision(3) << elapsed.count() << " s ("
            << std::setprecision(0) << static_cast<double>(tokens) / elapsed.count()
            << " w/s, " << threads << " thread(s))\n";
  std::cout << "predictions written to " << output_path << "\n";
  return kExitOk;
}

void print_prf(const std::string& name, const PRF& prf) {
  std::cout << std::left << std::setw(14) << name << " P=" << percent1(prf.precision())
            << " R=" << percent1(prf.recall()) << " F1=" << percent1(prf.f1())
            << "  (tp=" << prf.tp << " fp=" << prf.fp << " fn=" << prf.fn << ")\n";
}

int cmd_eval(const std::string& gold_path, const std::string& pred_path, bool with_split,
             const std::string& json_out) {
  auto gold_corpus = load_corpus_strict(gold_path);
  auto pred_corpus = load_corpus_strict(pred_path);
  if (gold_corpus.size() != pred_corpus.size())
    throw DataError("gold and pred have different sentence counts");

  std::vector<MentionSet> gold, pred;
  for (const auto& s : gold_corpus) gold.push_back(s.mentions);
  for (const auto& s : pred_corpus) pred.push_back(s.mentions);

  PRF overall = score(gold, pred);
  auto by_label = score_per_label(gold, pred);
  print_prf("overall", overall);
  for (const auto& [label, prf] : by_label) print_prf("  " + label, prf);

  json report = {{"overall",
                  {{"precision", overall.precision()},
                   {"recall", overall.recall()},
                   {"f1", overall.f1()},
                   {"tp", overall.tp},
                   {"fp", overall.fp},
                   {"fn", overall.fn}}}};
  for (const auto& [label, prf] : by_label)
    report["per_label"][label] = {{"precision", prf.precision()},
                                  {"recall", prf.recall()},
                                  {"f1", prf.f1()}};

  if (with_split) {
    // split by the gold sentences' nesting, pairing predictions by position
    auto split = split_nested(gold_corpus);
    std::vector<MentionSet> gold_nested, pred_nested, gold_flat, pred_flat;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (split.is_nested[i]) {
        gold_nested.push_back(gold[i]);
        pred_nested.push_back(pred[i]);
      } else {
        gold_flat.push_back(gold[i]);
        pred_flat.push_back(pred[i]);
      }
    }
    PRF nested = score(gold_nested, pred_nested);
    PRF flat = score(gold_flat, pred_flat);
    std::cout << "sentences with nested mentions: " << gold_nested.size() << "\n";
    print_prf("nested", nested);
    std::cout << "sentences without nested mentions: " << gold_flat.size() << "\n";
    print_prf("non-nested", flat);
    report["nested"] = {{"sentences", gold_nested.size()},
                        {"precision", nested.precision()},
                        {"recall", nested.recall()},
                        {"f1", nested.f1()}};
    report["non_nested"] = {{"sentences", gold_flat.size()},
                            {"precision", flat.precision()},
                            {"recall", flat.recall()},
                            {"f1", flat.f1()}};
  }

  if (!json_out.empty()) {
    std::ofstream out(json_out);
    if (!out) throw DataError("cannot open for writing: " + json_out);
    out << report.dump(2) << "\n";
  }
  return kExitOk;
}

int cmd_bench(const std::string& model_path, const std::string& input_path, int repetitions) {
  Model model = load_model(model_path);
  auto corpus = load_corpus_strict(input_path);
  auto result = bench_decode(model, corpus, repetitions);
  std::cout << "corpus: " << corpus.size() << " sentence(s), " << result.total_tokens
            << " token(s)\n";
  std::cout << "hardware: " << hardware_string() << "\n";
  std::cout << "threads: 1 (benchmark contract)\n";
  std::cout << std::fixed << std::setprecision(1);
  std::cout << "words/second: median " << result.median_wps << " over "
            << result.repetitions << " repetition(s) (min " << result.min_wps << ", max "
            << result.max_wps << ")\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transition-based nested entity mention recognizer"};
  app.require_subcommand(1);

  std::string corpus_path, model_path, input_path, output_path, gold_path, pred_path;
  std::string config_path, dump_path, json_out;
  bool drop_conflicts = false, with_split = false;
  int threads = 1, repetitions = 3;

  auto* validate = app.add_subcommand("validate", "Check a corpus file for nesting violations");
  validate->add_option("corpus", corpus_path, "corpus file (JSON lines)")->required();
  validate->add_flag("--drop-conflicts", drop_conflicts,
                     "keep the first of identically-spanned mentions instead of failing");

  auto* stats = app.add_subcommand("stats", "Print corpus statistics");
  stats->add_option("corpus", corpus_path)->required();
  stats->add_flag("--drop-conflicts", drop_conflicts);
  bool lenient = false;
  stats->add_flag("--lenient", lenient, "skip invalid records instead of failing");

  auto* oracle_check =
      app.add_subcommand("oracle-check", "Verify oracle round-trips and the 3n bound");
  oracle_check->add_option("corpus", corpus_path)->required();
  oracle_check->add_option("--dump-actions", dump_path,
                           "write gold action sequences (one action per line, blank line "
                           "between sentences)");

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", config_path, "JSON run configuration")->required();
  std::optional<std::uint64_t> seed_override;
  std::optional<int> max_epochs_override, patience_override;
  std::optional<double> dropout_override, l2_override, lr_override;
  std::optional<std::string> train_override, dev_override, model_out_override,
      log_out_override, embeddings_override;
  train_cmd->add_option("--seed", seed_override, "override config seed");
  train_cmd->add_option("--train", train_override, "override paths.train");
  train_cmd->add_option("--dev", dev_override, "override paths.dev");
  train_cmd->add_option("--embeddings", embeddings_override, "override paths.embeddings");
  train_cmd->add_option("--model-out", model_out_override, "override paths.model_out");
  train_cmd->add_option("--log-out", log_out_override, "override paths.log_out");
  train_cmd->add_option("--max-epochs", max_epochs_override);
  train_cmd->add_option("--patience", patience_override);
  train_cmd->add_option("--dropout", dropout_override);
  train_cmd->add_option("--l2", l2_override);
  train_cmd->add_option("--lr", lr_override, "Adam step size");
  train_cmd->add_flag("--drop-conflicts", drop_conflicts);

  auto* decode = app.add_subcommand("decode", "Greedy-decode a corpus");
  decode->add_option("--model", model_path)->required();
  decode->add_option("--input", input_path)->required();
  decode->add_option("--output", output_path)->required();
  decode->add_option("--threads", threads, "decode threads (default 1)");
  decode->add_flag("--lenient", lenient, "skip invalid records instead of failing");

  auto* eval = app.add_subcommand("eval", "Score predictions against gold");
  eval->add_option("--gold", gold_path)->required();
  eval->add_option("--pred", pred_path)->required();
  eval->add_flag("--split-nested", with_split,
                 "also score the nested / non-nested sentence portions separately");
  eval->add_option("--json-out", json_out, "write the full report as JSON");

  auto* bench = app.add_subcommand("bench", "Measure decode throughput (single thread)");
  bench->add_option("--model", model_path)->required();
  bench->add_option("--input", input_path)->required();
  bench->add_option("--reps", repetitions, "timed repetitions (default 3)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (app.got_subcommand(validate)) return cmd_validate(corpus_path, drop_conflicts);
    if (app.got_subcommand(stats)) return cmd_stats(corpus_path, lenient, drop_conflicts);
    if (app.got_subcommand(oracle_check)) return cmd_oracle_check(corpus_path, dump_path);
    if (app.got_subcommand(train_cmd)) {
      RunConfig config = run_config_from_file(config_path);
      if (seed_override) config.seed = *seed_override;
      if (train_override) config.paths.train = *train_override;
      if (dev_override) config.paths.dev = *dev_override;
      if (embeddings_override) config.paths.embeddings = *embeddings_override;
      if (model_out_override) config.paths.model_out = *model_out_override;
      if (log_out_override) config.paths.log_out = *log_out_override;
      if (max_epochs_override) config.train.max_epochs = *max_epochs_override;
      if (patience_override) config.train.patience = *patience_override;
      if (dropout_override) config.model.dropout = *dropout_override;
      if (l2_override) config.train.l2 = *l2_override;
      if (lr_override) config.train.adam.alpha = *lr_override;
      return cmd_train(config, drop_conflicts);
    }
    if (app.got_subcommand(decode))
      return cmd_decode(model_path, input_path, output_path, threads, lenient);
    if (app.got_subcommand(eval)) return cmd_eval(gold_path, pred_path, with_split, json_out);
    if (app.got_subcommand(bench)) return cmd_bench(model_path, input_path, repetitions);
  } catch (const InternalError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const ConstraintViolation& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const ReplayError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}
