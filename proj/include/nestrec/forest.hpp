#pragma once

// Forest representation of nested mentions. Each outermost mention forms a
// tree; words outside every mention form single-node trees. Trees are kept
// binarized (unary/binary only) with left-branching temporary labels.

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include "nestrec/annotation.hpp"

namespace nestrec {

struct TreeNode;
using NodePtr = std::shared_ptr<const TreeNode>;

// Leaf{token index} | Terminal{} (the $ symbol) | Internal{label, 1-2 children}.
// Immutable after construction; shared freely between states and threads.
struct TreeNode {
  enum class Kind { Leaf, Terminal, Internal };

  Kind kind;
  int token = -1;  // Leaf only
  Label label;     // Internal only
  std::vector<NodePtr> children;
  Span span{-1, -1};  // covered token range; {-1,-1} for Terminal

  bool is_leaf() const { return kind == Kind::Leaf; }
  bool is_terminal() const { return kind == Kind::Terminal; }
  bool is_internal() const { return kind == Kind::Internal; }
  bool is_temporary() const { return is_internal() && label.temporary; }
};

inline NodePtr make_leaf(int token_index) {
  auto node = std::make_shared<TreeNode>();
  node->kind = TreeNode::Kind::Leaf;
  node->token = token_index;
  node->span = {token_index, token_index};
  return node;
}

inline NodePtr make_terminal() {
  auto node = std::make_shared<TreeNode>();
  node->kind = TreeNode::Kind::Terminal;
  return node;
}

inline NodePtr make_unary(Label label, NodePtr child) {
  if (label.temporary) throw InternalError("unary node with temporary label " + to_string(label));
  if (!child->is_leaf()) throw InternalError("unary node over a non-leaf child");
  auto node = std::make_shared<TreeNode>();
  node->kind = TreeNode::Kind::Internal;
  node->label = std::move(label);
  node->span = child->span;
  node->children = {std::move(child)};
  return node;
}

inline NodePtr make_binary(Label label, NodePtr left, NodePtr right) {
  if (left->is_terminal() || right->is_terminal())
    throw InternalError("terminal symbol cannot be a reduce operand");
  if (left->span.end + 1 != right->span.start)
    throw InternalError("binary children are not adjacent: " + to_string(left->span) +
                        " / " + to_string(right->span));
  if (right->is_temporary())
    throw InternalError("temporary label as right child");
  if (left->is_temporary() && left->label.name != label.name)
    throw InternalError("temporary left child " + to_string(left->label) +
                        " under mismatched parent " + to_string(label));
  auto node = std::make_shared<TreeNode>();
  node->kind = TreeNode::Kind::Internal;
  node->label = std::move(label);
  node->span = {left->span.start, right->span.end};
  node->children = {std::move(left), std::move(right)};
  return node;
}

// Ordered trees jointly covering token indices 0..n-1; no temporary roots.
struct Forest {
  std::vector<NodePtr> roots;

  int size() const {
    return roots.empty() ? 0 : roots.back()->span.end + 1;
  }
};

inline bool nodes_equal(const NodePtr& a, const NodePtr& b) {
  if (a->kind != b->kind) return false;
  switch (a->kind) {
    case TreeNode::Kind::Leaf:
      return a->token == b->token;
    case TreeNode::Kind::Terminal:
      return true;
    case TreeNode::Kind::Internal:
      if (a->label != b->label || a->children.size() != b->children.size()) return false;
      for (std::size_t i = 0; i < a->children.size(); ++i)
        if (!nodes_equal(a->children[i], b->children[i])) return false;
      return true;
  }
  return false;
}

inline bool forests_equal(const Forest& a, const Forest& b) {
  if (a.roots.size() != b.roots.size()) return false;
  for (std::size_t i = 0; i < a.roots.size(); ++i)
    if (!nodes_equal(a.roots[i], b.roots[i])) return false;
  return true;
}

inline std::string to_string(const NodePtr& node) {
  switch (node->kind) {
    case TreeNode::Kind::Leaf:
      return std::to_string(node->token);
    case TreeNode::Kind::Terminal:
      return "$";
    case TreeNode::Kind::Internal: {
      std::string out = "(" + to_string(node->label);
      for (const auto& child : node->children) out += " " + to_string(child);
      return out + ")";
    }
  }
  return "?";
}

inline std::string to_string(const Forest& forest) {
  std::string out;
  for (std::size_t i = 0; i < forest.roots.size(); ++i) {
    if (i) out += " ";
    out += to_string(forest.roots[i]);
  }
  return out;
}

// Left-branching binarization of label X over already-binarized children
// c1..ck: innermost {X* -> c1, c2}, then {X* -> ., c3}, ..., outermost
// {X -> ., ck}. k = 2 gives {X -> c1, c2}; k = 1 gives {X -> c1}.
inline NodePtr binarize(const Label& label, std::vector<NodePtr> children) {
  if (label.temporary) throw InternalError("binarize called with a temporary label");
  if (children.empty()) throw InternalError("binarize called with no children");
  if (children.size() == 1) return make_unary(label, std::move(children[0]));
  Label temp = temp_label(label.name);
  NodePtr acc = children[0];
  for (std::size_t i = 1; i + 1 < children.size(); ++i)
    acc = make_binary(temp, std::move(acc), std::move(children[i]));
  return make_binary(label, std::move(acc), std::move(children.back()));
}

// Inverse of binarize: collapse the temporary chain of a labeled node back
// into (label, n-ary children). Leaves and non-chain children are returned
// as-is (still binarized below this level).
inline std::pair<Label, std::vector<NodePtr>> debinarize(const NodePtr& node) {
  if (!node->is_internal()) throw InternalError("debinarize called on a non-internal node");
  std::vector<NodePtr> children;
  NodePtr cur = node;
  while (true) {
    if (cur->children.size() == 1) {
      children.push_back(cur->children[0]);
      break;
    }
    children.push_back(cur->children[1]);
    const NodePtr& left = cur->children[0];
    if (left->is_temporary()) {
      cur = left;
    } else {
      children.push_back(left);
      break;
    }
  }
  std::reverse(children.begin(), children.end());
  return {Label{node->label.name, false}, std::move(children)};
}

class RejectedInputError : public DataError {
 public:
  explicit RejectedInputError(NestingReport report)
      : DataError("invalid nesting: " + report.summary()), report_(std::move(report)) {}
  const NestingReport& report() const { return report_; }

 private:
  NestingReport report_;
};

namespace detail {

// N-ary mention tree used while assembling the forest.
struct MentionTree {
  MentionAnnotation mention;
  std::vector<MentionTree> children;
};

inline NodePtr build_node(const MentionTree& tree) {
  std::vector<NodePtr> parts;
  int next = tree.mention.span.start;
  for (const auto& child : tree.children) {
    for (int t = next; t < child.mention.span.start; ++t) parts.push_back(make_leaf(t));
    parts.push_back(build_node(child));
    next = child.mention.span.end + 1;
  }
  for (int t = next; t <= tree.mention.span.end; ++t) parts.push_back(make_leaf(t));
  return binarize(tree.mention.label, std::move(parts));
}

}  // namespace detail

// Maps a validated sentence to its forest: every mention becomes exactly one
// non-temporary labeled node with the same span; uncovered tokens become bare
// leaf roots; roots are ordered left to right.
inline Forest mentions_to_forest(const SentenceAnnotation& sentence) {
  NestingReport report = validate_nesting(sentence.mentions, sentence.size());
  if (!report.ok()) throw RejectedInputError(std::move(report));

  // Mentions sorted by (start asc, end desc) visit each parent before its
  // descendants, so a stack assembles the containment forest in one pass.
  std::vector<MentionAnnotation> order(sentence.mentions.begin(), sentence.mentions.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.span.start != b.span.start) return a.span.start < b.span.start;
    return a.span.end > b.span.end;
  });

  std::vector<detail::MentionTree> outermost;
  std::vector<detail::MentionTree*> open;
  for (const auto& m : order) {
    while (!open.empty() && !open.back()->mention.span.contains(m.span)) open.pop_back();
    auto& siblings = open.empty() ? outermost : open.back()->children;
    siblings.push_back(detail::MentionTree{m, {}});
    open.push_back(&siblings.back());
  }

  Forest forest;
  int next = 0;
  for (const auto& tree : outermost) {
    for (int t = next; t < tree.mention.span.start; ++t) forest.roots.push_back(make_leaf(t));
    forest.roots.push_back(detail::build_node(tree));
    next = tree.mention.span.end + 1;
  }
  for (int t = next; t < sentence.size(); ++t) forest.roots.push_back(make_leaf(t));
  return forest;
}

namespace detail {

inline void collect_mentions(const NodePtr& node, MentionSet& out) {
  if (!node->is_internal()) return;
  if (!node->label.temporary)
    out.insert(MentionAnnotation(node->span, node->label.name));
  for (const auto& child : node->children) collect_mentions(child, out);
}

}  // namespace detail

// One mention per non-temporary labeled node; temporary nodes emit nothing.
inline MentionSet forest_to_mentions(const Forest& forest) {
  MentionSet mentions;
  for (const auto& root : forest.roots) detail::collect_mentions(root, mentions);
  return mentions;
}

}  // namespace nestrec
