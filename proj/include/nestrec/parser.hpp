#pragma once

// Runs transition episodes over the neural scorer: builds word/buffer/history
// representations, keeps the stack encoded incrementally, produces the
// mask-restricted action distribution each step, and drives teacher-forced
// training or greedy decoding.

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nestrec/model.hpp"

namespace nestrec {

namespace detail {

// Final forward and backward hidden states over the token's characters.
inline Var char_bilstm(Model& model, Tape& tape, const std::vector<int>& char_ids) {
  Var table = tape.leaf(*model.char_table);
  LstmState fw = lstm_initial(tape, model.char_fw);
  for (int id : char_ids) fw = lstm_step(tape, model.char_fw, pick_row(table, id), fw);
  LstmState bw = lstm_initial(tape, model.char_bw);
  for (auto it = char_ids.rbegin(); it != char_ids.rend(); ++it)
    bw = lstm_step(tape, model.char_bw, pick_row(table, *it), bw);
  return concat({fw.h, bw.h});
}

}  // namespace detail

// e_x = [word embedding, POS embedding, char-BiLSTM final states]; dropout on
// the concatenated vector in training mode only.
inline Var embed_word(Model& model, Tape& tape, const std::string& token,
                      const std::string& pos, bool training, Rng* dropout_rng) {
  if (token.empty()) throw DataError("cannot embed an empty token");
  const Vocabulary& vocab = model.vocab();
  Var e_w = pick_row(tape.leaf(*model.word_table), vocab.token_id(token));
  Var e_p = pick_row(tape.leaf(*model.pos_table), vocab.pos_id(pos));

  std::vector<int> char_ids;
  for (const auto& unit : utf8_units(token)) char_ids.push_back(vocab.char_id(unit));
  Var c_w = detail::char_bilstm(model, tape, char_ids);

  Var e_x = concat({e_w, e_p, c_w});
  if (training && model.config().dropout > 0.0) {
    if (!dropout_rng) throw InternalError("training-mode embedding without an RNG");
    e_x = dropout(e_x, model.config().dropout, true, *dropout_rng);
  }
  return e_x;
}

// The terminal symbol's representation: dedicated word/POS/char rows.
inline Var embed_eos(Model& model, Tape& tape, bool training, Rng* dropout_rng) {
  const Vocabulary& vocab = model.vocab();
  Var e_w = pick_row(tape.leaf(*model.word_table), vocab.eos_token_id());
  Var e_p = pick_row(tape.leaf(*model.pos_table), vocab.eos_pos_id());
  Var c_w = detail::char_bilstm(model, tape, {vocab.eos_char_id()});
  Var e_x = concat({e_w, e_p, c_w});
  if (training && model.config().dropout > 0.0) {
    if (!dropout_rng) throw InternalError("training-mode embedding without an RNG");
    e_x = dropout(e_x, model.config().dropout, true, *dropout_rng);
  }
  return e_x;
}

// h_leaf = tanh(W_leaf [e_x, b_k] + b_leaf), with b_k the buffer state at the
// moment of the shift.
inline Var leaf_repr(Model& model, Tape& tape, const Var& e_x, const Var& buffer_state) {
  return tanh(affine(tape.leaf(*model.w_leaf), concat({e_x, buffer_state}),
                     tape.leaf(*model.b_leaf)));
}

inline Var compose_unary(Model& model, Tape& tape, const Label& label, const Var& child) {
  const Composition& comp = model.unary_composition(label);
  return tanh(affine(tape.leaf(*comp.w), child, tape.leaf(*comp.b)));
}

inline Var compose_binary(Model& model, Tape& tape, const Label& label, const Var& left,
                          const Var& right) {
  const Composition& comp = model.binary_composition(label);
  return tanh(affine(tape.leaf(*comp.w), concat({left, right}), tape.leaf(*comp.b)));
}

// Stack-LSTM: stored (h, c) states with a position index. push computes one
// step from the current position; pop retreats the position without
// recomputation, restoring the prior summary exactly.
class StackEncoder {
 public:
  StackEncoder(Tape& tape, Model& model)
      : tape_(&tape), lstm_(&model.stack_lstm) {
    states_.push_back(lstm_initial(tape, *lstm_));
  }

  void push(const Var& node_repr) {
    nodes_.push_back(node_repr);
    states_.push_back(lstm_step(*tape_, *lstm_, node_repr, states_.back()));
  }

  // Returns the popped element's node representation.
  Var pop() {
    if (nodes_.empty()) throw InternalError("pop from an empty stack encoder");
    Var node = nodes_.back();
    nodes_.pop_back();
    states_.pop_back();
    return node;
  }

  Var summary() const { return states_.back().h; }
  std::size_t depth() const { return nodes_.size(); }

 private:
  Tape* tape_;
  const LstmParams* lstm_;
  std::vector<LstmState> states_;  // states_[0] is the learned initial state
  std::vector<Var> nodes_;
};

// One transition episode bound to a tape. Exposes the per-step pieces
// (validity, p_k, logits, distribution) so that training, decoding and the
// test suites drive the same machinery.
class Episode {
 public:
  Episode(Model& model, Tape& tape, const SentenceAnnotation& sentence, bool training,
          Rng* dropout_rng)
      : model_(&model),
        tape_(&tape),
        stack_(tape, model),
        parser_state_(initial_state(sentence.size())) {
    int n = sentence.size();
    word_reprs_.reserve(n + 1);
    for (int i = 0; i < n; ++i)
      word_reprs_.push_back(
          embed_word(model, tape, sentence.tokens[i], sentence.pos_tags[i], training, dropout_rng));
    word_reprs_.push_back(embed_eos(model, tape, training, dropout_rng));

    // One right-to-left pass; buffer_states_[i] encodes positions i..n, so a
    // step with buffer front i reads its b_k in O(1).
    buffer_states_.assign(n + 1, Var{});
    LstmState state = lstm_initial(tape, model.buffer_lstm);
    for (int i = n; i >= 0; --i) {
      state = lstm_step(tape, model.buffer_lstm, word_reprs_[i], state);
      buffer_states_[i] = state.h;
    }

    history_state_ = lstm_initial(tape, model.history_lstm);
  }

  const ParserState& state() const { return parser_state_; }
  bool terminal() const { return parser_state_.terminal(); }
  int steps() const { return steps_; }

  const ValidityReport& validity() {
    if (!cached_validity_)
      cached_validity_ = valid_actions(parser_state_, model_->alphabet());
    return *cached_validity_;
  }

  // p_k = [b_k, s_k, a_k]; empty stack/history read the learned initial states.
  Var state_vector() {
    if (terminal()) throw InternalError("state_vector on a terminal episode");
    return concat({buffer_states_[parser_state_.buffer_front], stack_.summary(),
                   history_state_.h});
  }

  Var logits() {
    return affine(tape_->leaf(*model_->w_out), state_vector(), tape_->leaf(*model_->b_out));
  }

  // Eq-restricted distribution over the alphabet; invalid entries are exactly 0.
  std::vector<double> action_distribution() {
    return masked_softmax(logits().value(), validity().valid);
  }

  // Argmax over valid actions; ties break to the lowest alphabet index.
  int choose_greedy() {
    const Tensor& scores = logits().value();
    const auto& mask = validity().valid;
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < static_cast<int>(mask.size()); ++i) {
      if (!mask[i]) continue;
      if (scores.v[i] > best_score) {
        best_score = scores.v[i];
        best = i;
      }
    }
    if (best < 0) throw InternalError("no valid action to choose (dead state)");
    return best;
  }

  // Applies the action at `action_index`, updating the stack encoder, the
  // action history and the symbolic state. Returns the step loss when
  // requested. A masked-out index aborts: for gold actions that signals an
  // oracle/constraint inconsistency.
  std::optional<Var> advance(int action_index, bool with_loss) {
    const ValidityReport& report = validity();
    if (action_index < 0 || action_index >= static_cast<int>(report.valid.size()))
      throw InternalError("action index out of range");
    const Action& action = model_->alphabet().at(action_index);
    if (!report.valid[action_index])
      throw InternalError("action " + to_string(action) + " is masked out (" +
                          constraint_name(report.blocked_by[action_index]) + ")");

    std::optional<Var> loss;
    if (with_loss) loss = nll_masked_softmax(logits(), report.valid, action_index);

    switch (action.kind) {
      case Action::Kind::Shift:
        if (parser_state_.words_remaining()) {
          int i = parser_state_.buffer_front;
          stack_.push(leaf_repr(*model_, *tape_, word_reprs_[i], buffer_states_[i]));
        }
        // shifting $ terminates; nothing is scored afterwards
        break;
      case Action::Kind::Reduce: {
        Var right = stack_.pop();
        Var left = stack_.pop();
        stack_.push(compose_binary(*model_, *tape_, action.label, left, right));
        break;
      }
      case Action::Kind::Unary: {
        Var child = stack_.pop();
        stack_.push(compose_unary(*model_, *tape_, action.label, child));
        break;
      }
    }

    history_state_ = lstm_step(*tape_, model_->history_lstm,
                               pick_row(tape_->leaf(*model_->action_table),
                                        static_cast<std::size_t>(action_index)),
                               history_state_);
    parser_state_ = apply(parser_state_, model_->alphabet(), action);
    cached_validity_.reset();
    ++steps_;
    return loss;
  }

  const std::vector<Var>& buffer_states() const { return buffer_states_; }
  StackEncoder& stack_encoder() { return stack_; }
  Var history_summary() const { return history_state_.h; }

 private:
  Model* model_;
  Tape* tape_;
  std::vector<Var> word_reprs_;    // positions 0..n-1 plus $ at n
  std::vector<Var> buffer_states_; // suffix encodings, index = buffer front
  StackEncoder stack_;
  LstmState history_state_;
  ParserState parser_state_;
  std::optional<ValidityReport> cached_validity_;
  int steps_ = 0;
};

struct SentenceLossResult {
  Var loss;          // summed step NLL on the tape
  double total_nll = 0.0;
  int steps = 0;
};

// Teacher-forced episode loss: sum over steps of the masked NLL of the gold
// action. The l2 term is applied by the optimizer, not materialized here.
inline SentenceLossResult teacher_forced_loss(Model& model, Tape& tape,
                                              const SentenceAnnotation& sentence,
                                              const std::vector<Action>& gold,
                                              Rng* dropout_rng) {
  Episode episode(model, tape, sentence, /*training=*/true, dropout_rng);
  Var total = tape.constant(Tensor::scalar(0.0));
  for (const Action& action : gold) {
    int idx = model.alphabet().index_of(action);
    auto step_loss = episode.advance(idx, /*with_loss=*/true);
    total = add(total, *step_loss);
  }
  if (!episode.terminal())
    throw InternalError("gold action sequence did not reach the terminal state");
  SentenceLossResult result;
  result.loss = total;
  result.total_nll = total.scalar();
  result.steps = static_cast<int>(gold.size());
  return result;
}

struct DecodeResult {
  MentionSet mentions;
  std::vector<Action> trace;
};

// Greedy decoding: argmax valid action until terminal. Termination within 3n
// actions is guaranteed by the validity constraints.
inline DecodeResult greedy_decode(Model& model, const SentenceAnnotation& sentence) {
  Tape tape;
  Episode episode(model, tape, sentence, /*training=*/false, nullptr);
  while (!episode.terminal()) episode.advance(episode.choose_greedy(), /*with_loss=*/false);
  DecodeResult result;
  result.trace = episode.state().history;
  Forest forest = replay(result.trace, sentence.size(), model.alphabet());
  result.mentions = forest_to_mentions(forest);
  return result;
}

}  // namespace nestrec
