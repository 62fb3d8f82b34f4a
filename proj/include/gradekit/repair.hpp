// SPDX-License-Identifier: Apache-2.0
//
// Post-processing for budget-truncated teacher generations: cut the text back
// to the last complete thought, splice in "</think>\n\n<correctness>", and let
// a grammar-constrained generator finish the tagged verdict.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gradekit/errors.hpp"
#include "gradekit/grammar.hpp"
#include "gradekit/http.hpp"

namespace gradekit::repair {

// ---------------------------------------------------------------------------
// Token counting

inline bool is_space(char c) {
  return c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\f' || c == '\v';
}

/// Whitespace-delimited tokenization, the default budget tokenizer.
inline std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t begin = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > begin) out.emplace_back(text.substr(begin, i - begin));
  }
  return out;
}

inline std::size_t whitespace_token_count(std::string_view text) {
  std::size_t n = 0;
  bool in_token = false;
  for (char c : text) {
    const bool space = is_space(c);
    if (!space && !in_token) ++n;
    in_token = !space;
  }
  return n;
}

using TokenCounter = std::function<std::size_t(std::string_view)>;

class TokenBudget {
 public:
  explicit TokenBudget(std::size_t max_tokens) : max_tokens_(max_tokens) {
    if (max_tokens == 0) throw UsageError("token budget must be positive");
  }
  std::size_t max_tokens() const noexcept { return max_tokens_; }

 private:
  std::size_t max_tokens_;
};

// ---------------------------------------------------------------------------
// Generators

/// Text generator used to finish a repaired response.
///
/// Contract: with a constraint supplied, the returned text is a prefix of a
/// string accepted by the constraint, and is accepted whenever generation
/// stopped on its own.
class Generator {
 public:
  virtual ~Generator() = default;

  virtual std::string generate(std::string_view prompt,
                               const grammar::ConstraintAutomaton* constraint,
                               std::size_t max_tokens) = 0;

  virtual std::size_t token_count(std::string_view text) const {
    return whitespace_token_count(text);
  }

  /// Whether generate() may be called from several threads at once.
  virtual bool thread_safe() const { return false; }
};

/// Returns the same completion for every prompt.
class ScriptedGenerator final : public Generator {
 public:
  explicit ScriptedGenerator(std::string completion) : completion_(std::move(completion)) {}

  std::string generate(std::string_view, const grammar::ConstraintAutomaton*,
                       std::size_t) override {
    return completion_;
  }
  bool thread_safe() const override { return true; }

 private:
  std::string completion_;
};

/// Random walk over the constraint automaton: uniform over allowed
/// characters, stopping with `stop_probability` in accepting states and
/// steering to the nearest accepting state once `max_chars` is reached.
class RandomConstrainedGenerator final : public Generator {
 public:
  explicit RandomConstrainedGenerator(std::uint64_t seed, double stop_probability = 0.3,
                                      std::size_t max_chars = 160)
      : rng_(seed), stop_probability_(stop_probability), max_chars_(max_chars) {}

  std::string generate(std::string_view, const grammar::ConstraintAutomaton* constraint,
                       std::size_t) override {
    if (constraint == nullptr) throw GeneratorError("random generator requires a constraint");
    const auto& a = *constraint;
    std::string out;
    grammar::StateId st = a.start();
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    while (true) {
      if (a.is_accepting(st) && (out.size() >= max_chars_ || coin(rng_) < stop_probability_)) break;
      std::string options = a.allowed(st).chars();
      if (out.size() >= max_chars_) {
        const std::size_t here = a.distance_to_accept(st);
        std::erase_if(options, [&](char c) { return a.distance_to_accept(*a.step(st, c)) >= here; });
      }
      const char c = options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng_)];
      out.push_back(c);
      st = *a.step(st, c);
    }
    return out;
  }

 private:
  std::mt19937_64 rng_;
  double stop_probability_;
  std::size_t max_chars_;
};

struct RemoteGeneratorConfig {
  std::string endpoint;  // e.g. http://localhost:8000/v1
  std::string model;
  std::string api_key;
  std::chrono::milliseconds timeout{120000};
  double temperature = 0.0;
};

/// OpenAI-compatible text-completions client. The grammar is sent as a
/// `guided_regex` field (understood by vLLM-style servers); the returned
/// text is validated locally by the repair loop either way.
class RemoteGenerator final : public Generator {
 public:
  explicit RemoteGenerator(RemoteGeneratorConfig cfg) : cfg_(std::move(cfg)) {}

  std::string generate(std::string_view prompt, const grammar::ConstraintAutomaton* constraint,
                       std::size_t max_tokens) override {
    nlohmann::json body{{"model", cfg_.model},
                        {"prompt", std::string(prompt)},
                        {"max_tokens", max_tokens},
                        {"temperature", cfg_.temperature}};
    if (constraint != nullptr) body["guided_regex"] = grammar::regex_pattern();
    http::Response res;
    try {
      res = http::post_json(cfg_.endpoint, "/completions", body, cfg_.api_key, cfg_.timeout);
    } catch (const http::TransportError& e) {
      throw GeneratorError(e.what());
    }
    if (res.status != 200) {
      throw GeneratorError("completion endpoint returned HTTP " + std::to_string(res.status));
    }
    try {
      return nlohmann::json::parse(res.body).at("choices").at(0).at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw GeneratorError(std::string("unexpected completion payload: ") + e.what());
    }
  }
  bool thread_safe() const override { return true; }

 private:
  RemoteGeneratorConfig cfg_;
};

// ---------------------------------------------------------------------------
// Truncation

namespace detail {

// Offsets of thought boundaries outside math delimiters ($..$, $$..$$,
// \(..\), \[..\]).
struct Boundaries {
  std::optional<std::size_t> paragraph;   // start of the last "\n\n"
  std::optional<std::size_t> terminator;  // end (exclusive) of the last sentence
};

inline Boundaries scan_boundaries(std::string_view text) {
  enum class Math { None, Dollar, DoubleDollar, Paren, Bracket };
  Math math = Math::None;
  Boundaries b;
  const std::size_t n = text.size();
  for (std::size_t i = 0; i < n; ++i) {
    const char c = text[i];
    const char next = i + 1 < n ? text[i + 1] : '\0';
    if (c == '\\') {
      if (math == Math::None && next == '(') math = Math::Paren;
      else if (math == Math::None && next == '[') math = Math::Bracket;
      else if (math == Math::Paren && next == ')') math = Math::None;
      else if (math == Math::Bracket && next == ']') math = Math::None;
      ++i;  // the escaped character never counts as a delimiter or terminator
      continue;
    }
    if (c == '$') {
      if (next == '$') {
        if (math == Math::None) math = Math::DoubleDollar;
        else if (math == Math::DoubleDollar) math = Math::None;
        ++i;
      } else if (math == Math::None) {
        math = Math::Dollar;
      } else if (math == Math::Dollar) {
        math = Math::None;
      }
      continue;
    }
    if (math != Math::None) continue;
    if (c == '\n' && next == '\n') b.paragraph = i;
    if (c == '\n') {
      b.terminator = i;
    } else if ((c == '.' || c == '!' || c == '?') && (i + 1 == n || is_space(next))) {
      b.terminator = i + 1;
    }
  }
  return b;
}

inline std::string_view rtrim(std::string_view s) {
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Prefix of `text` ending at the last complete thought.
///
/// An existing "</think>" ends the thinking outright. Otherwise the cut is
/// the last paragraph break, else the last sentence terminator ('.', '!', '?'
/// followed by whitespace or end of text, or a newline); boundaries inside
/// math delimiters are ignored. Returns "" if there is no boundary.
inline std::string truncate_last_thought(std::string_view text) {
  if (const std::size_t pos = text.find(grammar::kThinkClose); pos != std::string_view::npos) {
    return std::string(detail::rtrim(text.substr(0, pos)));
  }
  const detail::Boundaries b = detail::scan_boundaries(text);
  if (b.paragraph) {
    const std::string_view cut = detail::rtrim(text.substr(0, *b.paragraph));
    if (!cut.empty()) return std::string(cut);
  }
  if (b.terminator) return std::string(detail::rtrim(text.substr(0, *b.terminator)));
  return {};
}

// ---------------------------------------------------------------------------
// Repair

struct RepairOptions {
  /// Overrides the generator's token counter for the budget test.
  TokenCounter token_counter;
  std::size_t completion_max_tokens = 256;
  int max_attempts = 3;
};

struct RepairOutcome {
  /// Response text relative to the prompt.
  std::string text;
  bool repaired = false;
  int attempts = 0;

  /// prompt || text, the form the original procedure returns.
  std::string full_text(std::string_view prompt) const { return std::string(prompt) + text; }
};

inline RepairOutcome repair(std::string_view output, std::string_view prompt, TokenBudget budget,
                            Generator& gen, const RepairOptions& options = {}) {
  const std::size_t tokens =
      options.token_counter ? options.token_counter(output) : gen.token_count(output);
  if (tokens < budget.max_tokens()) return RepairOutcome{std::string(output), false, 0};

  std::string spliced = truncate_last_thought(output);
  spliced += grammar::kSplice;
  std::string continued_prompt(prompt);
  continued_prompt += spliced;

  const auto& automaton = grammar::structured_grammar();
  for (int attempt = 1; attempt <= options.max_attempts; ++attempt) {
    std::string completion;
    try {
      completion = gen.generate(continued_prompt, &automaton, options.completion_max_tokens);
    } catch (const std::exception& e) {
      throw GeneratorError(std::string("generator failed during repair (attempt ") +
                           std::to_string(attempt) + "): " + e.what());
    }
    // A second "</think>" in the verdict would make the splice ambiguous.
    if (grammar::validate(automaton, completion) &&
        completion.find(grammar::kThinkClose) == std::string::npos) {
      return RepairOutcome{spliced + completion, true, attempt};
    }
  }
  throw RepairFailed("constrained completion did not reach an accepting state after " +
                     std::to_string(options.max_attempts) + " attempts");
}

struct RepairJob {
  std::string id;
  std::string prompt;
  std::string output;
};

struct RepairJobResult {
  std::string id;
  std::optional<RepairOutcome> outcome;
  std::string error;
};

/// Repairs a batch on `threads` workers. Calls into a generator that is not
/// thread-safe are serialized. Results keep input order.
inline std::vector<RepairJobResult> repair_all(const std::vector<RepairJob>& jobs, TokenBudget budget,
                                               Generator& gen, const RepairOptions& options = {},
                                               std::size_t threads = 1) {
  class Serialized final : public Generator {
   public:
    explicit Serialized(Generator& inner) : inner_(inner) {}
    std::string generate(std::string_view p, const grammar::ConstraintAutomaton* c,
                         std::size_t m) override {
      std::lock_guard lock(mu_);
      return inner_.generate(p, c, m);
    }
    std::size_t token_count(std::string_view t) const override { return inner_.token_count(t); }
    bool thread_safe() const override { return true; }

   private:
    Generator& inner_;
    std::mutex mu_;
  };

  Serialized serialized(gen);
  Generator& target = gen.thread_safe() ? gen : static_cast<Generator&>(serialized);

  std::vector<RepairJobResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      results[i].id = jobs[i].id;
      try {
        results[i].outcome = repair(jobs[i].output, jobs[i].prompt, budget, target, options);
      } catch (const Error& e) {
        results[i].error = e.what();
      }
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, jobs.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return results;
}

}  // namespace gradekit::repair
