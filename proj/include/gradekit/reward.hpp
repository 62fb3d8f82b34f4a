// SPDX-License-Identifier: Apache-2.0
//
// Composite reward for a sampled grading response:
//
//   r = r_match + r_loc + r_len + r_cos + r_rep

#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gradekit/errors.hpp"
#include "gradekit/grammar.hpp"
#include "gradekit/judge.hpp"

namespace gradekit::reward {

using grammar::Correctness;
using grammar::Localization;

/// One (question, reference answer, student answer) tuple with its gold
/// label (correctness, error description).
struct GradingInstance {
  std::string id;
  std::string question_id;
  std::string question;
  std::string reference_answer;
  std::string student_answer;
  Correctness gold_correctness = Correctness::Correct;
  std::string gold_error;  // empty when the answer is correct
};

inline void check_instance(const GradingInstance& inst) {
  if (inst.gold_correctness == Correctness::Correct && !inst.gold_error.empty()) {
    throw UsageError("instance " + inst.id + ": a correct answer cannot carry an error description");
  }
}

struct RewardBreakdown {
  double match = 0.0;
  double loc = 0.0;
  double len = 0.0;
  double cos = 0.0;
  double rep = 0.0;
  double total = 0.0;

  bool operator==(const RewardBreakdown&) const = default;
};

struct CosineRewardConfig {
  std::size_t max_length = 4096;
  double min_correct = 0.1;
  double max_correct = 0.5;
  double min_wrong = -0.5;
  double max_wrong = -0.1;
};

enum class JudgeFailurePolicy { Propagate, ScoreZero };

struct RewardConfig {
  CosineRewardConfig cosine;
  std::size_t repetition_ngram = 3;
  double repetition_max_penalty = 0.5;
  JudgeFailurePolicy on_judge_failure = JudgeFailurePolicy::Propagate;
};

inline constexpr std::size_t kLengthBonusThreshold = 150;
inline constexpr double kLengthBonus = 0.25;

inline double reward_match(Correctness predicted, Correctness gold) {
  return predicted == gold ? 1.0 : 0.0;
}

/// 1 when the predicted localization correctly describes the error. A
/// correct gold answer has nothing to localize, so only NoneMarker scores;
/// NoneMarker on an incorrect answer never scores. Everything else goes to
/// the judge.
inline double reward_loc(const Localization& predicted, const GradingInstance& inst,
                         judge::Judge& judge) {
  const bool predicted_none = std::holds_alternative<grammar::NoneMarker>(predicted);
  if (inst.gold_correctness == Correctness::Correct) return predicted_none ? 1.0 : 0.0;
  if (predicted_none) return 0.0;

  judge::JudgeRequest req;
  req.question = inst.question;
  req.reference_answer = inst.reference_answer;
  req.gold_error = inst.gold_error;
  req.predicted_localization = grammar::localization_text(predicted);
  return judge.judge(req).verdict == judge::Verdict::CorrectDescription ? 1.0 : 0.0;
}

inline double reward_len(std::size_t response_tokens) {
  return response_tokens >= kLengthBonusThreshold ? kLengthBonus : 0.0;
}

/// Cosine length schedule: the "max" value at length 0 falling to the "min"
/// value at max_length. Lengths beyond max_length are clamped.
inline double reward_cosine(std::size_t response_tokens, bool is_match, const CosineRewardConfig& cfg) {
  if (cfg.max_length == 0) throw UsageError("cosine reward max_length must be positive");
  const double lo = is_match ? cfg.min_correct : cfg.min_wrong;
  const double hi = is_match ? cfg.max_correct : cfg.max_wrong;
  const double t = static_cast<double>(std::min(response_tokens, cfg.max_length)) /
                   static_cast<double>(cfg.max_length);
  // Written as a convex combination so both endpoints are hit exactly.
  const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  return w * hi + (1.0 - w) * lo;
}

/// -max_penalty * (repeated n-grams / total n-grams); 0 for sequences
/// shorter than n.
inline double reward_repetition(std::span<const std::string> tokens, std::size_t n, double max_penalty) {
  if (n == 0) throw UsageError("repetition n-gram order must be >= 1");
  if (max_penalty < 0.0) throw UsageError("repetition max_penalty must be >= 0");
  if (tokens.size() < n) return 0.0;
  const std::size_t total = tokens.size() - n + 1;
  std::set<std::vector<std::string>> seen;
  for (std::size_t i = 0; i < total; ++i) seen.emplace(tokens.begin() + i, tokens.begin() + i + n);
  const std::size_t repeated = total - seen.size();
  if (repeated == 0) return 0.0;
  return -max_penalty * static_cast<double>(repeated) / static_cast<double>(total);
}

inline RewardBreakdown sum_components(double match, double loc, double len, double cos, double rep) {
  return RewardBreakdown{match, loc, len, cos, rep, match + loc + len + cos + rep};
}

/// Scores a parsed response; `tokens` is the full response tokenized.
inline RewardBreakdown composite_reward(const grammar::StructuredResponse& response,
                                        std::span<const std::string> tokens,
                                        const GradingInstance& inst, judge::Judge& judge,
                                        const RewardConfig& cfg) {
  check_instance(inst);
  const double match = reward_match(response.correctness, inst.gold_correctness);
  double loc = 0.0;
  try {
    loc = reward_loc(response.localization, inst, judge);
  } catch (const Error&) {
    if (cfg.on_judge_failure == JudgeFailurePolicy::Propagate) throw;
  }
  return sum_components(match, loc, reward_len(tokens.size()),
                        reward_cosine(tokens.size(), match == 1.0, cfg.cosine),
                        reward_repetition(tokens, cfg.repetition_ngram, cfg.repetition_max_penalty));
}

/// Score for output that does not follow the structured format: no match or
/// localization credit, length terms as for a wrong answer.
inline RewardBreakdown malformed_reward(std::span<const std::string> tokens, const RewardConfig& cfg) {
  return sum_components(0.0, 0.0, reward_len(tokens.size()),
                        reward_cosine(tokens.size(), false, cfg.cosine),
                        reward_repetition(tokens, cfg.repetition_ngram, cfg.repetition_max_penalty));
}

}  // namespace gradekit::reward
