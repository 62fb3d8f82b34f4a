// SPDX-License-Identifier: Apache-2.0
//
// Synthetic grading environment for the toy GRPO policy. Each prompt is a
// one-line addition "a+b=c" that is either right or wrong; the policy
// writes the structured suffix (everything after "<correctness>") one
// character at a time and is scored with the composite reward and the stub
// judge.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gradekit/errors.hpp"
#include "gradekit/grammar.hpp"
#include "gradekit/grpo.hpp"
#include "gradekit/judge.hpp"
#include "gradekit/random.hpp"
#include "gradekit/reward.hpp"

namespace gradekit::grpo {

/// Characters the toy policy can write; the last symbol is end-of-sequence.
class Vocabulary {
 public:
  Vocabulary() {
    std::string chars;
    auto add = [&chars](std::string_view s) {
      for (char c : s) {
        if (chars.find(c) == std::string::npos) chars.push_back(c);
      }
    };
    add(grammar::kCorrectLiteral);
    add(grammar::kIncorrectLiteral);
    add(grammar::kCorrectnessClose);
    add(grammar::kLocalizationOpen);
    add(grammar::kLocalizationClose);
    add(grammar::kNoneLiteral);
    add(grammar::kLackOfStepsLiteral);
    add("0123456789+-=x");
    chars_ = chars;
    for (char c : chars_) usable_.insert(c);
  }

  std::uint32_t size() const { return static_cast<std::uint32_t>(chars_.size() + 1); }
  int eos() const { return static_cast<int>(chars_.size()); }
  char symbol_char(int s) const { return chars_.at(static_cast<std::size_t>(s)); }
  const grammar::CharSet& charset() const { return usable_; }

  std::string decode(const std::vector<int>& tokens) const {
    std::string out;
    for (int t : tokens) {
      if (t != eos()) out.push_back(symbol_char(t));
    }
    return out;
  }

 private:
  std::string chars_;
  grammar::CharSet usable_;
};

struct ToyEnvConfig {
  std::uint32_t num_prompts = 8;  // half right, half wrong
  std::uint64_t seed = 0;         // instance generation
  std::size_t max_len = 96;       // symbols per response including EOS
  bool constrained = true;        // grammar-masked rollouts
  reward::RewardConfig reward;    // cosine.max_length is set to max_len
};

/// Addition instances; even indices are correct, odd ones are off by 1..3.
inline std::vector<reward::GradingInstance> toy_instances(std::uint32_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<reward::GradingInstance> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto a = uniform_int(rng, 1, 9);
    const auto b = uniform_int(rng, 1, 9);
    const bool right = i % 2 == 0;
    const auto delta = uniform_int(rng, 1, 3) * (uniform_int(rng, 0, 1) ? 1 : -1);
    const auto c = right ? a + b : a + b + delta;
    reward::GradingInstance inst;
    inst.id = "toy-" + std::to_string(i);
    inst.question_id = inst.id;
    inst.question = std::to_string(a) + "+" + std::to_string(b) + "=x";
    inst.reference_answer = "x=" + std::to_string(a + b);
    inst.student_answer = std::to_string(a) + "+" + std::to_string(b) + "=" + std::to_string(c);
    inst.gold_correctness = right ? grammar::Correctness::Correct : grammar::Correctness::Incorrect;
    if (!right) inst.gold_error = inst.student_answer;
    out.push_back(std::move(inst));
  }
  return out;
}

class ToyGradingEnv final : public Environment {
 public:
  explicit ToyGradingEnv(ToyEnvConfig cfg) : cfg_(std::move(cfg)), instances_(toy_instances(cfg_.num_prompts, cfg_.seed)) {
    if (cfg_.num_prompts == 0) throw UsageError("toy environment needs at least one prompt");
    cfg_.reward.cosine.max_length = cfg_.max_len;
    const auto& a = grammar::structured_grammar();
    dist_ = a.distances_to_accept(vocab_.charset());
    if (dist_[a.start().value] + 1 > cfg_.max_len) {
      throw UsageError("max_len " + std::to_string(cfg_.max_len) + " is too short for any valid response (needs " +
                       std::to_string(dist_[a.start().value] + 1) + ")");
    }
  }

  const Vocabulary& vocabulary() const { return vocab_; }
  const std::vector<reward::GradingInstance>& instances() const { return instances_; }
  const ToyEnvConfig& config() const { return cfg_; }

  PolicyShape policy_shape(std::uint32_t order = 2) const { return {cfg_.num_prompts, vocab_.size(), order}; }

  std::uint32_t num_prompts() const override { return cfg_.num_prompts; }

  std::vector<std::uint32_t> prompts_for_step(std::size_t) const override {
    std::vector<std::uint32_t> all(cfg_.num_prompts);
    for (std::uint32_t i = 0; i < cfg_.num_prompts; ++i) all[i] = i;
    return all;
  }

  /// Symbols allowed next from automaton state `s` with `remaining` symbols
  /// (EOS included) left: the walk must still be able to finish in time.
  SymbolMask constrained_mask(grammar::StateId s, std::size_t remaining) const {
    const auto& a = grammar::structured_grammar();
    SymbolMask mask = 0;
    for (int sym = 0; sym < vocab_.eos(); ++sym) {
      const auto next = a.step(s, vocab_.symbol_char(sym));
      if (next && dist_[next->value] != grammar::ConstraintAutomaton::kUnreachable &&
          dist_[next->value] + 2 <= remaining) {
        mask |= SymbolMask{1} << sym;
      }
    }
    if (a.is_accepting(s)) mask |= SymbolMask{1} << vocab_.eos();
    return mask;
  }

  Rollout rollout(const ToyPolicy& policy, std::uint32_t prompt, Rng& rng) const override {
    const auto& a = grammar::structured_grammar();
    const SymbolMask full = policy.shape().full_mask();
    Rollout r;
    r.prompt = prompt;
    std::vector<double> scratch;
    std::optional<grammar::StateId> state = a.start();
    while (r.tokens.size() < cfg_.max_len) {
      const SymbolMask mask = cfg_.constrained ? constrained_mask(*state, cfg_.max_len - r.tokens.size()) : full;
      const std::uint32_t row = policy.context_row(prompt, r.tokens, r.tokens.size());
      const int sym = policy.sample(row, mask, rng, scratch);
      r.rows.push_back(row);
      r.masks.push_back(mask);
      r.logprobs_old.push_back(policy.log_prob(row, mask, sym));
      r.tokens.push_back(sym);
      if (sym == vocab_.eos()) break;
      if (state) state = a.step(*state, vocab_.symbol_char(sym));
      if (cfg_.constrained && !state) throw Error("constrained rollout left the grammar");
    }
    r.text = vocab_.decode(r.tokens);
    r.valid = state && a.is_accepting(*state);
    return r;
  }

  reward::RewardBreakdown score(const Rollout& r) const {
    std::vector<std::string> toks;
    for (int t : r.tokens) {
      if (t != vocab_.eos()) toks.emplace_back(1, vocab_.symbol_char(t));
    }
    if (!r.valid) return reward::malformed_reward(toks, cfg_.reward);
    const auto tagged = grammar::parse_suffix(r.text);
    const grammar::StructuredResponse resp{"", tagged.correctness, tagged.localization};
    return reward::composite_reward(resp, toks, instances_.at(r.prompt), judge_, cfg_.reward);
  }

  double reward(const Rollout& r) const override { return score(r).total; }

 private:
  ToyEnvConfig cfg_;
  std::vector<reward::GradingInstance> instances_;
  Vocabulary vocab_;
  std::vector<std::size_t> dist_;
  mutable judge::StubJudge judge_;
};

}  // namespace gradekit::grpo
