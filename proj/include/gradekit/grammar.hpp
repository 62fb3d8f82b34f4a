// SPDX-License-Identifier: Apache-2.0
//
// Character-level constraint automaton for the structured grading format
//
//   root -> C "</correctness>" L
//   C    -> "correct" | "incorrect"
//   L    -> "<localization>" E "</localization>"
//   E    -> "None" | Sigma_math* | "Lack of intermediate steps"
//
// The automaton accepts the text that follows the literal "<correctness>".
// It is built once (Thompson NFA -> subset construction -> trim) and is
// immutable afterwards, so a single instance can be shared across threads.

#pragma once

#include <algorithm>
#include <array>
#include <bitset>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "gradekit/errors.hpp"

namespace gradekit::grammar {

inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kCorrectnessOpen = "<correctness>";
inline constexpr std::string_view kCorrectnessClose = "</correctness>";
inline constexpr std::string_view kLocalizationOpen = "<localization>";
inline constexpr std::string_view kLocalizationClose = "</localization>";
inline constexpr std::string_view kCorrectLiteral = "correct";
inline constexpr std::string_view kIncorrectLiteral = "incorrect";
inline constexpr std::string_view kNoneLiteral = "None";
inline constexpr std::string_view kLackOfStepsLiteral = "Lack of intermediate steps";

/// Separator emitted between the thinking text and the tagged suffix.
inline constexpr std::string_view kSplice = "</think>\n\n<correctness>";

// ---------------------------------------------------------------------------
// CharSet

/// Set of 7-bit ASCII characters. Bytes >= 0x80 are never members.
class CharSet {
 public:
  static constexpr std::size_t kSize = 128;

  CharSet() = default;
  explicit CharSet(std::string_view chars) {
    for (char c : chars) insert(c);
  }

  static CharSet range(char lo, char hi) {
    CharSet s;
    for (int c = static_cast<unsigned char>(lo); c <= static_cast<unsigned char>(hi); ++c) {
      s.bits_.set(static_cast<std::size_t>(c));
    }
    return s;
  }

  void insert(char c) {
    const auto u = static_cast<unsigned char>(c);
    if (u < kSize) bits_.set(u);
  }
  bool contains(char c) const noexcept {
    const auto u = static_cast<unsigned char>(c);
    return u < kSize && bits_.test(u);
  }
  std::size_t size() const noexcept { return bits_.count(); }
  bool empty() const noexcept { return bits_.none(); }

  CharSet operator|(const CharSet& o) const {
    CharSet s;
    s.bits_ = bits_ | o.bits_;
    return s;
  }
  CharSet operator&(const CharSet& o) const {
    CharSet s;
    s.bits_ = bits_ & o.bits_;
    return s;
  }
  bool operator==(const CharSet&) const = default;

  /// Members in ascending code order.
  std::string chars() const {
    std::string out;
    for (std::size_t c = 0; c < kSize; ++c) {
      if (bits_.test(c)) out.push_back(static_cast<char>(c));
    }
    return out;
  }

 private:
  std::bitset<kSize> bits_;
};

/// Sigma_math, the character class `[a-zA-Z0-9\{\}_^$\().,;'"-=<>+|*/]` read
/// with regular-expression semantics: `"-=` is the range 0x22..0x3D and the
/// backslashes are escapes, so no whitespace and no backslash.
inline const CharSet& math_charset() {
  static const CharSet set = CharSet::range('a', 'z') | CharSet::range('A', 'Z') |
                             CharSet::range('0', '9') | CharSet("{}_^$().,;'") |
                             CharSet::range('"', '=') | CharSet("<>+|*/");
  return set;
}

inline bool is_math_text(std::string_view text) {
  const CharSet& sigma = math_charset();
  return std::all_of(text.begin(), text.end(), [&](char c) { return sigma.contains(c); });
}

// ---------------------------------------------------------------------------
// Structured response

enum class Correctness { Correct, Incorrect };

struct NoneMarker {
  bool operator==(const NoneMarker&) const = default;
};
struct LackOfSteps {
  bool operator==(const LackOfSteps&) const = default;
};
struct MathExpr {
  std::string text;
  bool operator==(const MathExpr&) const = default;
};

using Localization = std::variant<NoneMarker, MathExpr, LackOfSteps>;

struct StructuredResponse {
  std::string thinking;
  Correctness correctness = Correctness::Correct;
  Localization localization = NoneMarker{};

  bool operator==(const StructuredResponse&) const = default;
};

inline std::string_view to_string(Correctness c) {
  return c == Correctness::Correct ? kCorrectLiteral : kIncorrectLiteral;
}

inline std::optional<Correctness> parse_correctness(std::string_view s) {
  if (s == kCorrectLiteral) return Correctness::Correct;
  if (s == kIncorrectLiteral) return Correctness::Incorrect;
  return std::nullopt;
}

/// Payload text of the E production.
inline std::string localization_text(const Localization& loc) {
  if (std::holds_alternative<NoneMarker>(loc)) return std::string(kNoneLiteral);
  if (std::holds_alternative<LackOfSteps>(loc)) return std::string(kLackOfStepsLiteral);
  return std::get<MathExpr>(loc).text;
}

/// Maps an E payload to a Localization. The literal alternatives win over
/// the Sigma_math* reading ("None" is also a valid math string).
inline std::optional<Localization> classify_localization(std::string_view payload) {
  if (payload == kNoneLiteral) return NoneMarker{};
  if (payload == kLackOfStepsLiteral) return LackOfSteps{};
  if (is_math_text(payload)) return MathExpr{std::string(payload)};
  return std::nullopt;
}

/// Tagged suffix, i.e. everything after "<correctness>".
inline std::string render_suffix(Correctness c, const Localization& loc) {
  std::string out;
  out += to_string(c);
  out += kCorrectnessClose;
  out += kLocalizationOpen;
  out += localization_text(loc);
  out += kLocalizationClose;
  return out;
}

inline std::string render(const StructuredResponse& r) {
  std::string out = r.thinking;
  out += kSplice;
  out += render_suffix(r.correctness, r.localization);
  return out;
}

// ---------------------------------------------------------------------------
// Automaton

struct StateId {
  std::uint32_t value = 0;
  auto operator<=>(const StateId&) const = default;
};

class ConstraintAutomaton {
 public:
  static constexpr std::int32_t kNoTransition = -1;
  static constexpr std::size_t kUnreachable = std::numeric_limits<std::size_t>::max();

  StateId start() const noexcept { return StateId{0}; }
  std::size_t state_count() const noexcept { return accepting_.size(); }
  bool contains(StateId s) const noexcept { return s.value < state_count(); }

  bool is_accepting(StateId s) const {
    check(s);
    return accepting_[s.value];
  }

  /// Characters with a defined transition out of `s`.
  const CharSet& allowed(StateId s) const {
    check(s);
    return allowed_[s.value];
  }

  std::optional<StateId> step(StateId s, char c) const {
    check(s);
    const auto u = static_cast<unsigned char>(c);
    if (u >= CharSet::kSize) return std::nullopt;
    const std::int32_t next = table_[s.value][u];
    if (next == kNoTransition) return std::nullopt;
    return StateId{static_cast<std::uint32_t>(next)};
  }

  std::optional<StateId> advance(StateId s, std::string_view text) const {
    std::optional<StateId> cur = s;
    for (char c : text) {
      cur = step(*cur, c);
      if (!cur) return std::nullopt;
    }
    return cur;
  }

  /// Length of the shortest accepted continuation from `s`. Every state kept
  /// after trimming can reach acceptance, so this is always finite.
  std::size_t distance_to_accept(StateId s) const {
    check(s);
    return distance_[s.value];
  }

  /// Shortest-continuation lengths when only characters in `usable` may be
  /// emitted (kUnreachable where acceptance cannot be reached).
  std::vector<std::size_t> distances_to_accept(const CharSet& usable) const {
    const std::size_t n = state_count();
    std::vector<std::vector<std::uint32_t>> reverse(n);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t c = 0; c < CharSet::kSize; ++c) {
        const std::int32_t t = table_[s][c];
        if (t != kNoTransition && usable.contains(static_cast<char>(c))) {
          reverse[static_cast<std::size_t>(t)].push_back(static_cast<std::uint32_t>(s));
        }
      }
    }
    std::vector<std::size_t> dist(n, kUnreachable);
    std::deque<std::uint32_t> queue;
    for (std::size_t s = 0; s < n; ++s) {
      if (accepting_[s]) {
        dist[s] = 0;
        queue.push_back(static_cast<std::uint32_t>(s));
      }
    }
    while (!queue.empty()) {
      const std::uint32_t t = queue.front();
      queue.pop_front();
      for (std::uint32_t s : reverse[t]) {
        if (dist[s] == kUnreachable) {
          dist[s] = dist[t] + 1;
          queue.push_back(s);
        }
      }
    }
    return dist;
  }

 private:
  friend ConstraintAutomaton compile_grammar();

  void check(StateId s) const {
    if (!contains(s)) {
      throw UsageError("unknown automaton state " + std::to_string(s.value) + " (automaton has " +
                       std::to_string(state_count()) + " states)");
    }
  }

  std::vector<std::array<std::int32_t, CharSet::kSize>> table_;
  std::vector<bool> accepting_;
  std::vector<CharSet> allowed_;
  std::vector<std::size_t> distance_;
};

namespace detail {

// Thompson NFA over CharSet-labelled edges.
class Nfa {
 public:
  struct Fragment {
    std::size_t in;
    std::size_t out;
  };

  std::size_t add_state() {
    eps_.emplace_back();
    edges_.emplace_back();
    return eps_.size() - 1;
  }
  void add_eps(std::size_t from, std::size_t to) { eps_[from].push_back(to); }
  void add_edge(std::size_t from, const CharSet& label, std::size_t to) {
    edges_[from].emplace_back(label, to);
  }

  Fragment literal(std::string_view text) {
    const std::size_t in = add_state();
    std::size_t cur = in;
    for (char c : text) {
      const std::size_t next = add_state();
      CharSet label;
      label.insert(c);
      add_edge(cur, label, next);
      cur = next;
    }
    return {in, cur};
  }

  Fragment star(const CharSet& label) {
    const std::size_t s = add_state();
    add_edge(s, label, s);
    return {s, s};
  }

  Fragment alternation(std::span<const Fragment> options) {
    const std::size_t in = add_state();
    const std::size_t out = add_state();
    for (const Fragment& f : options) {
      add_eps(in, f.in);
      add_eps(f.out, out);
    }
    return {in, out};
  }

  Fragment sequence(std::span<const Fragment> parts) {
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) add_eps(parts[i].out, parts[i + 1].in);
    return {parts.front().in, parts.back().out};
  }

  std::vector<std::size_t> closure(std::vector<std::size_t> set) const {
    std::vector<bool> seen(eps_.size(), false);
    std::vector<std::size_t> stack = set;
    for (std::size_t s : set) seen[s] = true;
    while (!stack.empty()) {
      const std::size_t s = stack.back();
      stack.pop_back();
      for (std::size_t t : eps_[s]) {
        if (!seen[t]) {
          seen[t] = true;
          set.push_back(t);
          stack.push_back(t);
        }
      }
    }
    std::sort(set.begin(), set.end());
    return set;
  }

  std::vector<std::size_t> move(const std::vector<std::size_t>& set, char c) const {
    std::vector<std::size_t> out;
    for (std::size_t s : set) {
      for (const auto& [label, to] : edges_[s]) {
        if (label.contains(c)) out.push_back(to);
      }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

 private:
  std::vector<std::vector<std::size_t>> eps_;
  std::vector<std::vector<std::pair<CharSet, std::size_t>>> edges_;
};

}  // namespace detail

inline ConstraintAutomaton compile_grammar() {
  detail::Nfa nfa;
  using Fragment = detail::Nfa::Fragment;

  const std::array<Fragment, 2> verdicts{nfa.literal(kCorrectLiteral),
                                         nfa.literal(kIncorrectLiteral)};
  const std::array<Fragment, 3> payloads{nfa.literal(kNoneLiteral), nfa.star(math_charset()),
                                         nfa.literal(kLackOfStepsLiteral)};
  const std::array<Fragment, 5> root{nfa.alternation(verdicts), nfa.literal(kCorrectnessClose),
                                     nfa.literal(kLocalizationOpen), nfa.alternation(payloads),
                                     nfa.literal(kLocalizationClose)};
  const Fragment whole = nfa.sequence(root);

  // Subset construction.
  std::map<std::vector<std::size_t>, std::uint32_t> index;
  std::vector<std::vector<std::size_t>> subsets;
  std::vector<std::array<std::int32_t, CharSet::kSize>> table;

  auto intern = [&](std::vector<std::size_t> subset) -> std::uint32_t {
    auto [it, inserted] = index.emplace(subset, static_cast<std::uint32_t>(subsets.size()));
    if (inserted) {
      subsets.push_back(std::move(subset));
      table.emplace_back();
      table.back().fill(ConstraintAutomaton::kNoTransition);
    }
    return it->second;
  };

  intern(nfa.closure({whole.in}));
  for (std::size_t d = 0; d < subsets.size(); ++d) {
    for (std::size_t c = 0; c < CharSet::kSize; ++c) {
      auto moved = nfa.move(subsets[d], static_cast<char>(c));
      if (moved.empty()) continue;
      const std::uint32_t target = intern(nfa.closure(std::move(moved)));
      table[d][c] = static_cast<std::int32_t>(target);
    }
  }

  const std::size_t n = subsets.size();
  std::vector<bool> accepting(n, false);
  for (std::size_t d = 0; d < n; ++d) {
    accepting[d] = std::binary_search(subsets[d].begin(), subsets[d].end(), whole.out);
  }

  // Keep only states that can still reach acceptance so that every offered
  // character extends a viable prefix.
  std::vector<std::vector<std::size_t>> reverse(n);
  for (std::size_t d = 0; d < n; ++d) {
    for (std::int32_t t : table[d]) {
      if (t != ConstraintAutomaton::kNoTransition) reverse[static_cast<std::size_t>(t)].push_back(d);
    }
  }
  std::vector<bool> live(accepting);
  std::vector<std::size_t> stack;
  for (std::size_t d = 0; d < n; ++d) {
    if (live[d]) stack.push_back(d);
  }
  while (!stack.empty()) {
    const std::size_t t = stack.back();
    stack.pop_back();
    for (std::size_t s : reverse[t]) {
      if (!live[s]) {
        live[s] = true;
        stack.push_back(s);
      }
    }
  }
  // The start state is live (the language is non-empty) and keeps id 0.
  std::vector<std::int32_t> renumber(n, ConstraintAutomaton::kNoTransition);
  std::int32_t next_id = 0;
  for (std::size_t d = 0; d < n; ++d) {
    if (live[d]) renumber[d] = next_id++;
  }

  ConstraintAutomaton a;
  for (std::size_t d = 0; d < n; ++d) {
    if (!live[d]) continue;
    std::array<std::int32_t, CharSet::kSize> row{};
    row.fill(ConstraintAutomaton::kNoTransition);
    CharSet allowed;
    for (std::size_t c = 0; c < CharSet::kSize; ++c) {
      const std::int32_t t = table[d][c];
      if (t != ConstraintAutomaton::kNoTransition && live[static_cast<std::size_t>(t)]) {
        row[c] = renumber[static_cast<std::size_t>(t)];
        allowed.insert(static_cast<char>(c));
      }
    }
    a.table_.push_back(row);
    a.accepting_.push_back(accepting[d]);
    a.allowed_.push_back(allowed);
  }
  CharSet everything = CharSet::range('\0', '\x7f');
  a.distance_ = a.distances_to_accept(everything);
  return a;
}

/// Process-wide compiled instance.
inline const ConstraintAutomaton& structured_grammar() {
  static const ConstraintAutomaton automaton = compile_grammar();
  return automaton;
}

inline CharSet allowed_next(const ConstraintAutomaton& automaton, StateId state) {
  return automaton.allowed(state);
}

inline bool validate(const ConstraintAutomaton& automaton, std::string_view text) {
  const auto end = automaton.advance(automaton.start(), text);
  return end && automaton.is_accepting(*end);
}

/// Token-level masking: indices of `vocabulary` entries whose full text is a
/// path from `state`.
inline std::vector<std::size_t> allowed_tokens(const ConstraintAutomaton& automaton, StateId state,
                                               std::span<const std::string> vocabulary) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < vocabulary.size(); ++i) {
    if (!vocabulary[i].empty() && automaton.advance(state, vocabulary[i])) out.push_back(i);
  }
  return out;
}

/// The grammar as a regular expression, for inference servers that accept a
/// guided-decoding regex. The character class is the verbatim Sigma_math.
inline std::string regex_pattern() {
  return "(correct|incorrect)</correctness><localization>"
         "(None|[a-zA-Z0-9\\{\\}_^$\\().,;'\"-=<>+|*/]*|Lack of intermediate steps)"
         "</localization>";
}

// ---------------------------------------------------------------------------
// Parsing

struct TaggedSuffix {
  Correctness correctness;
  Localization localization;
};

/// Parses the text after "<correctness>". `base_offset` is added to error
/// positions so they refer to the caller's full text.
inline TaggedSuffix parse_suffix(std::string_view suffix, std::size_t base_offset = 0) {
  const ConstraintAutomaton& a = structured_grammar();
  StateId s = a.start();
  for (std::size_t i = 0; i < suffix.size(); ++i) {
    const auto next = a.step(s, suffix[i]);
    if (!next) {
      throw MalformedResponse("unexpected character in structured suffix", base_offset + i);
    }
    s = *next;
  }
  if (!a.is_accepting(s)) {
    throw MalformedResponse("structured suffix ends prematurely", base_offset + suffix.size());
  }

  // Accepted, so the suffix is C "</correctness><localization>" E "</localization>".
  const std::size_t c_end = suffix.find(kCorrectnessClose);
  const auto correctness = parse_correctness(suffix.substr(0, c_end));
  const std::size_t e_begin = c_end + kCorrectnessClose.size() + kLocalizationOpen.size();
  const std::size_t e_end = suffix.size() - kLocalizationClose.size();
  const auto localization = classify_localization(suffix.substr(e_begin, e_end - e_begin));
  if (!correctness || !localization) {
    throw MalformedResponse("structured suffix failed to classify", base_offset);
  }
  return {*correctness, *localization};
}

/// Splits a full model response into thinking text and the tagged verdict.
///
/// The split point is the first "</think>" that is followed (after optional
/// whitespace) by "<correctness>" and a suffix accepted by the grammar. Since
/// the suffix alphabet has no newline, a "</think>" quoted inside the
/// thinking text can never produce a valid split before the real one.
inline StructuredResponse parse_response(std::string_view full_text) {
  std::optional<MalformedResponse> first_error;
  std::size_t search_from = 0;
  while (true) {
    const std::size_t think_pos = full_text.find(kThinkClose, search_from);
    if (think_pos == std::string_view::npos) break;
    search_from = think_pos + 1;

    std::size_t cursor = think_pos + kThinkClose.size();
    while (cursor < full_text.size() &&
           (full_text[cursor] == ' ' || full_text[cursor] == '\n' || full_text[cursor] == '\r' ||
            full_text[cursor] == '\t')) {
      ++cursor;
    }
    if (full_text.substr(cursor, kCorrectnessOpen.size()) != kCorrectnessOpen) {
      if (!first_error) first_error.emplace("expected \"<correctness>\" after \"</think>\"", cursor);
      continue;
    }
    const std::size_t suffix_begin = cursor + kCorrectnessOpen.size();
    try {
      const TaggedSuffix tagged = parse_suffix(full_text.substr(suffix_begin), suffix_begin);
      return StructuredResponse{std::string(full_text.substr(0, think_pos)), tagged.correctness,
                                tagged.localization};
    } catch (const MalformedResponse& e) {
      if (!first_error) first_error = e;
    }
  }
  if (first_error) throw *first_error;
  if (full_text.find(kCorrectnessOpen) == std::string_view::npos) {
    throw MalformedResponse("missing \"<correctness>\" tag", full_text.size());
  }
  throw MalformedResponse("missing \"</think>\" tag", full_text.size());
}

}  // namespace gradekit::grammar
