#pragma once

// Shift-reduce transition system over (stack, buffer front index, action
// history). Builds binarized forests bottom-up in at most 3n actions.
//
// Validity combines the seven hard constraints with two extensions:
//   - a lone temporary among the top two must be t1 (the left reduce operand),
//     keeping temporaries in left-child position only;
//   - a feasibility guard: once only $ remains in the buffer, an action whose
//     successor state cannot reach termination is invalid. With real words
//     remaining, Shift always rescues and the guard is skipped.

#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nestrec/forest.hpp"

namespace nestrec {

// Shift | Reduce-X (temporary allowed) | Unary-X (temporary forbidden).
struct Action {
  enum class Kind { Shift, Reduce, Unary };

  Kind kind = Kind::Shift;
  Label label;  // Reduce/Unary only

  auto operator<=>(const Action&) const = default;
};

inline Action shift_action() { return {Action::Kind::Shift, {}}; }
inline Action reduce_action(Label label) { return {Action::Kind::Reduce, std::move(label)}; }
inline Action unary_action(Label label) { return {Action::Kind::Unary, std::move(label)}; }

// Wire form: SHIFT | REDUCE(X) | REDUCE(X*) | UNARY(X), one per line.
inline std::string to_string(const Action& action) {
  switch (action.kind) {
    case Action::Kind::Shift: return "SHIFT";
    case Action::Kind::Reduce: return "REDUCE(" + to_string(action.label) + ")";
    case Action::Kind::Unary: return "UNARY(" + to_string(action.label) + ")";
  }
  return "?";
}

inline Action parse_action(const std::string& text) {
  if (text == "SHIFT") return shift_action();
  auto open = text.find('(');
  if (open != std::string::npos && text.back() == ')') {
    std::string head = text.substr(0, open);
    std::string name = text.substr(open + 1, text.size() - open - 2);
    bool temporary = !name.empty() && name.back() == '*';
    if (temporary) name.pop_back();
    if (name.empty()) throw DataError("empty label in action: " + text);
    if (head == "REDUCE") return reduce_action(Label{name, temporary});
    if (head == "UNARY") {
      if (temporary) throw DataError("unary action with temporary label: " + text);
      return unary_action(Label{name, false});
    }
  }
  throw DataError("unparseable action: " + text);
}

// The finite action inventory for a corpus: SHIFT, one UNARY per base label,
// one REDUCE per base label and per derived temporary. Index order is fixed
// (and is the tie-break order for consumers choosing among valid actions):
// SHIFT, UNARY(L1..Lk), then REDUCE(L1), REDUCE(L1*), ..., REDUCE(Lk*).
class ActionAlphabet {
 public:
  explicit ActionAlphabet(std::vector<std::string> sorted_base_labels)
      : base_labels_(std::move(sorted_base_labels)) {
    actions_.push_back(shift_action());
    for (const auto& name : base_labels_) actions_.push_back(unary_action(base_label(name)));
    for (const auto& name : base_labels_) {
      actions_.push_back(reduce_action(base_label(name)));
      actions_.push_back(reduce_action(temp_label(name)));
    }
    for (std::size_t i = 0; i < actions_.size(); ++i) index_[actions_[i]] = static_cast<int>(i);
  }

  int size() const { return static_cast<int>(actions_.size()); }
  const Action& at(int index) const { return actions_.at(index); }
  const std::vector<Action>& actions() const { return actions_; }
  const std::vector<std::string>& base_labels() const { return base_labels_; }

  int index_of(const Action& action) const {
    auto it = index_.find(action);
    if (it == index_.end())
      throw DataError("action " + to_string(action) + " not in the alphabet");
    return it->second;
  }

  static constexpr int kShiftIndex = 0;

 private:
  std::vector<std::string> base_labels_;
  std::vector<Action> actions_;
  std::map<Action, int> index_;
};

// The state [S, i, A]: stack of tree elements, buffer front index into the
// extended sequence x_0..x_{n-1},$, and the action history. Values: apply()
// returns a new state; nodes are shared, never mutated.
struct ParserState {
  std::vector<NodePtr> stack;
  int buffer_front = 0;
  std::vector<Action> history;
  int sentence_length = 0;

  // Terminal iff $ has been shifted.
  bool terminal() const { return buffer_front > sentence_length; }
  bool buffer_empty() const { return terminal(); }
  // True while the buffer front is a real word (not $).
  bool words_remaining() const { return buffer_front < sentence_length; }
};

inline ParserState initial_state(int sentence_length) {
  if (sentence_length < 1) throw DataError("sentence length must be at least 1");
  return ParserState{{}, 0, {}, sentence_length};
}

enum class Constraint : std::uint8_t {
  None,
  BufferEmpty,      // Shift needs a non-empty buffer
  EmptyStack,       // Unary needs a non-empty stack
  StackTooSmall,    // Reduce needs at least two elements
  TopLabeled,       // no unary over an already-labeled element
  TemporaryPair,    // a lone temporary t1 = X* admits only Reduce-X*/Reduce-X
  TopTemporary,     // a lone temporary in t0 position cannot be reduced
  BothTemporary,    // two temporaries on top admit no reduce
  TemporaryRemains, // $ cannot shift while any temporary is on the stack
  WouldStrand,      // successor state could never terminate
};

inline const char* constraint_name(Constraint c) {
  switch (c) {
    case Constraint::None: return "none";
    case Constraint::BufferEmpty: return "buffer-empty";
    case Constraint::EmptyStack: return "empty-stack";
    case Constraint::StackTooSmall: return "stack-too-small";
    case Constraint::TopLabeled: return "top-labeled";
    case Constraint::TemporaryPair: return "temporary-pair";
    case Constraint::TopTemporary: return "top-temporary";
    case Constraint::BothTemporary: return "both-temporary";
    case Constraint::TemporaryRemains: return "temporary-remains";
    case Constraint::WouldStrand: return "would-strand";
  }
  return "?";
}

// Per-action validity over the alphabet, with the blocking constraint for
// each invalid entry.
struct ValidityReport {
  std::vector<bool> valid;
  std::vector<Constraint> blocked_by;

  bool any_valid() const {
    for (bool v : valid)
      if (v) return true;
    return false;
  }
  int count_valid() const {
    int n = 0;
    for (bool v : valid) n += v;
    return n;
  }
};

class ConstraintViolation : public std::runtime_error {
 public:
  ConstraintViolation(const Action& action, Constraint constraint)
      : std::runtime_error("action " + to_string(action) + " violates constraint '" +
                           constraint_name(constraint) + "'"),
        constraint_(constraint) {}
  Constraint constraint() const { return constraint_; }

 private:
  Constraint constraint_;
};

namespace detail {

// Feasibility search once only $ remains. Deadness depends only on each stack
// element's (temporary?, bare leaf?) shape, never on which base label it
// carries, so states are abstracted to a code vector: 0 leaf, 1 labeled
// non-temporary, 2 temporary. The sub-space shrinks (reduces pop, a unary
// converts a leaf exactly once), so memoized search terminates.
class FeasibilityOracle {
 public:
  bool alive(const std::vector<std::uint8_t>& stack_codes) {
    auto it = memo_.find(stack_codes);
    if (it != memo_.end()) return it->second;
    // every move pops an element or converts a leaf, so the recursion is on a
    // strictly shrinking space
    bool result = compute(stack_codes);
    memo_[stack_codes] = result;
    return result;
  }

 private:
  bool compute(const std::vector<std::uint8_t>& codes) {
    bool any_temporary = false;
    for (auto c : codes) any_temporary |= (c == 2);
    if (!any_temporary) return true;  // $ is shiftable: terminates
    // Unary over a bare leaf top.
    if (!codes.empty() && codes.back() == 0) {
      auto next = codes;
      next.back() = 1;
      if (alive(next)) return true;
    }
    // Reduces over the top two.
    if (codes.size() >= 2) {
      std::uint8_t t0 = codes[codes.size() - 1];
      std::uint8_t t1 = codes[codes.size() - 2];
      bool top_two_reducible =
          !(t0 == 2 && t1 == 2) &&  // both temporary: no reduce
          !(t0 == 2 && t1 != 2);    // lone temporary must sit in t1
      if (top_two_reducible) {
        for (std::uint8_t result : {std::uint8_t{1}, std::uint8_t{2}}) {
          auto next = codes;
          next.pop_back();
          next.back() = result;
          if (alive(next)) return true;
        }
      }
    }
    return false;
  }

  std::map<std::vector<std::uint8_t>, bool> memo_;
};

inline std::uint8_t stack_code(const NodePtr& node) {
  if (node->is_leaf()) return 0;
  return node->is_temporary() ? std::uint8_t{2} : std::uint8_t{1};
}

}  // namespace detail

// Valid actions V(S, i, A) for a non-terminal state, as a mask over the
// alphabet. Throws if the state is terminal.
inline ValidityReport valid_actions(const ParserState& state, const ActionAlphabet& alphabet) {
  if (state.terminal())
    throw InternalError("valid_actions queried on a terminal state");

  const auto& stack = state.stack;
  const std::size_t depth = stack.size();
  const NodePtr* top = depth >= 1 ? &stack[depth - 1] : nullptr;
  const NodePtr* below = depth >= 2 ? &stack[depth - 2] : nullptr;

  bool any_temporary = false;
  for (const auto& node : stack) any_temporary |= node->is_temporary();

  ValidityReport report;
  report.valid.assign(alphabet.size(), false);
  report.blocked_by.assign(alphabet.size(), Constraint::None);

  auto block = [&](int idx, Constraint c) { report.blocked_by[idx] = c; };

  for (int idx = 0; idx < alphabet.size(); ++idx) {
    const Action& action = alphabet.at(idx);
    Constraint verdict = Constraint::None;
    switch (action.kind) {
      case Action::Kind::Shift:
        if (state.buffer_empty())
          verdict = Constraint::BufferEmpty;
        else if (!state.words_remaining() && any_temporary)
          verdict = Constraint::TemporaryRemains;
        break;
      case Action::Kind::Unary:
        if (depth < 1)
          verdict = Constraint::EmptyStack;
        else if (!(*top)->is_leaf())
          verdict = Constraint::TopLabeled;
        break;
      case Action::Kind::Reduce: {
        if (depth < 2) {
          verdict = Constraint::StackTooSmall;
          break;
        }
        bool top_temp = (*top)->is_temporary();
        bool below_temp = (*below)->is_temporary();
        if (top_temp && below_temp) {
          verdict = Constraint::BothTemporary;
        } else if (top_temp) {
          verdict = Constraint::TopTemporary;
        } else if (below_temp) {
          // Only Reduce-X* and Reduce-X for the temporary's base label X.
          if (action.label.name != (*below)->label.name) verdict = Constraint::TemporaryPair;
        }
        break;
      }
    }
    if (verdict != Constraint::None) {
      block(idx, verdict);
      continue;
    }
    report.valid[idx] = true;
  }

  // Feasibility guard: only engaged once no real word can rescue.
  if (!state.words_remaining()) {
    detail::FeasibilityOracle oracle;
    std::vector<std::uint8_t> codes;
    codes.reserve(depth);
    for (const auto& node : stack) codes.push_back(detail::stack_code(node));
    for (int idx = 0; idx < alphabet.size(); ++idx) {
      if (!report.valid[idx]) continue;
      const Action& action = alphabet.at(idx);
      if (action.kind == Action::Kind::Shift) continue;  // shifting $ terminates
      auto next = codes;
      if (action.kind == Action::Kind::Unary) {
        next.back() = 1;
      } else {
        next.pop_back();
        next.back() = action.label.temporary ? 2 : 1;
      }
      if (!oracle.alive(next)) {
        report.valid[idx] = false;
        report.blocked_by[idx] = Constraint::WouldStrand;
      }
    }
  }

  return report;
}

// Applies a valid action; throws ConstraintViolation naming the violated rule
// otherwise. Shift pushes Leaf(buffer_front) (or $ when the buffer front has
// passed the last word, which terminates the episode); Reduce-X pops t0, t1
// and pushes {X -> t1 t0}; Unary-X pops t0 and pushes {X -> t0}.
inline ParserState apply(const ParserState& state, const ActionAlphabet& alphabet,
                         const Action& action) {
  ValidityReport report = valid_actions(state, alphabet);
  int idx = alphabet.index_of(action);
  if (!report.valid[idx]) throw ConstraintViolation(action, report.blocked_by[idx]);

  ParserState next = state;
  switch (action.kind) {
    case Action::Kind::Shift:
      next.stack.push_back(next.words_remaining() ? make_leaf(next.buffer_front)
                                                  : make_terminal());
      next.buffer_front += 1;
      break;
    case Action::Kind::Reduce: {
      NodePtr t0 = next.stack.back();
      next.stack.pop_back();
      NodePtr t1 = next.stack.back();
      next.stack.pop_back();
      next.stack.push_back(make_binary(action.label, std::move(t1), std::move(t0)));
      break;
    }
    case Action::Kind::Unary: {
      NodePtr t0 = next.stack.back();
      next.stack.pop_back();
      next.stack.push_back(make_unary(action.label, std::move(t0)));
      break;
    }
  }
  next.history.push_back(action);
  return next;
}

namespace detail {

inline void emit_oracle(const NodePtr& node, std::vector<Action>& out) {
  switch (node->kind) {
    case TreeNode::Kind::Leaf:
      out.push_back(shift_action());
      return;
    case TreeNode::Kind::Terminal:
      throw InternalError("terminal symbol inside a forest");
    case TreeNode::Kind::Internal:
      for (const auto& child : node->children) emit_oracle(child, out);
      out.push_back(node->children.size() == 1 ? unary_action(node->label)
                                               : reduce_action(node->label));
      return;
  }
}

}  // namespace detail

// Gold action sequence for a forest: post-order over roots left to right,
// then the closing shift of $. Replaying it reproduces the forest exactly;
// length is at most 3n.
inline std::vector<Action> oracle_actions(const Forest& forest) {
  std::vector<Action> actions;
  for (const auto& root : forest.roots) detail::emit_oracle(root, actions);
  actions.push_back(shift_action());  // $
  return actions;
}

class ReplayError : public std::runtime_error {
 public:
  ReplayError(std::size_t step, const std::string& what)
      : std::runtime_error("replay failed at step " + std::to_string(step) + ": " + what),
        step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// Runs an action sequence from the initial state, validating every step, and
// returns the finished forest (the stack beneath the shifted $).
inline Forest replay(const std::vector<Action>& actions, int sentence_length,
                     const ActionAlphabet& alphabet) {
  ParserState state = initial_state(sentence_length);
  for (std::size_t k = 0; k < actions.size(); ++k) {
    if (state.terminal()) throw ReplayError(k, "actions continue past the terminal state");
    try {
      state = apply(state, alphabet, actions[k]);
    } catch (const ConstraintViolation& violation) {
      throw ReplayError(k, violation.what());
    }
  }
  if (!state.terminal())
    throw ReplayError(actions.size(), "sequence ends in a non-terminal state");

  Forest forest;
  forest.roots.assign(state.stack.begin(), state.stack.end() - 1);  // drop $
  for (const auto& root : forest.roots)
    if (root->is_temporary()) throw InternalError("temporary root after replay");
  return forest;
}

}  // namespace nestrec
