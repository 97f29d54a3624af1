#pragma once

// Labeled token spans: the unit of gold data and of system output.

#include <compare>
#include <cstddef>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nestrec {

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

class InternalError : public std::runtime_error {
 public:
  explicit InternalError(const std::string& what) : std::runtime_error(what) {}
};

// A constituent label. Temporary labels (rendered "X*") mark incomplete
// constituents introduced by binarization; they never label a mention.
// The terminal symbol "$" is not a Label.
struct Label {
  std::string name;
  bool temporary = false;

  auto operator<=>(const Label&) const = default;
};

inline std::string to_string(const Label& label) {
  return label.temporary ? label.name + "*" : label.name;
}

inline Label base_label(const std::string& name) { return Label{name, false}; }
inline Label temp_label(const std::string& name) { return Label{name, true}; }

// Token span, 0-based, both ends inclusive. External formats use
// half-open [start, end) and are converted at the I/O boundary.
struct Span {
  int start = 0;
  int end = 0;

  auto operator<=>(const Span&) const = default;

  int length() const { return end - start + 1; }
  bool contains(const Span& other) const {
    return start <= other.start && other.end <= end;
  }
  bool disjoint(const Span& other) const {
    return end < other.start || other.end < start;
  }
  // Overlap without containment either way.
  bool crosses(const Span& other) const {
    return !disjoint(other) && !contains(other) && !other.contains(*this);
  }
};

inline std::string to_string(const Span& span) {
  return "(" + std::to_string(span.start) + "," + std::to_string(span.end) + ")";
}

struct MentionAnnotation {
  Span span;
  Label label;  // never temporary

  MentionAnnotation(Span s, std::string label_name)
      : span(s), label(base_label(std::move(label_name))) {}
  MentionAnnotation(int start, int end, std::string label_name)
      : span{start, end}, label(base_label(std::move(label_name))) {}

  auto operator<=>(const MentionAnnotation&) const = default;
};

using MentionSet = std::set<MentionAnnotation>;

inline std::string to_string(const MentionAnnotation& m) {
  return "(" + std::to_string(m.span.start) + "," + std::to_string(m.span.end) +
         "," + m.label.name + ")";
}

struct NestingViolation {
  enum class Kind { OutOfBounds, Crossing, DuplicateSpan };
  Kind kind;
  MentionAnnotation first;
  MentionAnnotation second;  // == first for OutOfBounds
  std::string message;
};

// Result of checking a mention set against the nesting discipline.
// Violations are the return value, not an error.
struct NestingReport {
  std::vector<NestingViolation> violations;

  bool ok() const { return violations.empty(); }
  std::string summary() const {
    std::ostringstream out;
    for (std::size_t i = 0; i < violations.size(); ++i) {
      if (i) out << "; ";
      out << violations[i].message;
    }
    return out.str();
  }
};

// ok iff no span exceeds bounds, no pair crosses, and no pair shares an
// identical span. Every offending pair is named.
inline NestingReport validate_nesting(const MentionSet& mentions, int sentence_length) {
  NestingReport report;
  for (const auto& m : mentions) {
    if (m.span.start < 0 || m.span.start > m.span.end || m.span.end >= sentence_length) {
      report.violations.push_back(
          {NestingViolation::Kind::OutOfBounds, m, m,
           "mention " + to_string(m) + " out of bounds for length " +
               std::to_string(sentence_length)});
    }
  }
  for (auto a = mentions.begin(); a != mentions.end(); ++a) {
    for (auto b = std::next(a); b != mentions.end(); ++b) {
      if (a->span == b->span) {
        report.violations.push_back(
            {NestingViolation::Kind::DuplicateSpan, *a, *b,
             "mentions " + to_string(*a) + " and " + to_string(*b) +
                 " share an identical span"});
      } else if (a->span.crosses(b->span)) {
        report.violations.push_back(
            {NestingViolation::Kind::Crossing, *a, *b,
             "mentions " + to_string(*a) + " and " + to_string(*b) + " cross"});
      }
    }
  }
  return report;
}

// A tokenized, POS-tagged sentence with its (possibly nested) gold mentions.
struct SentenceAnnotation {
  std::vector<std::string> tokens;
  std::vector<std::string> pos_tags;
  MentionSet mentions;

  int size() const { return static_cast<int>(tokens.size()); }
};

}  // namespace nestrec
