// SPDX-License-Identifier: Apache-2.0

#include "gradekit/grpo.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "gradekit/toyenv.hpp"
#include "support/grpo_oracle.hpp"

namespace gg = gradekit::grpo;
using gradekit::testing::random_gradient_case;

TEST(Advantages, Examples) {
  const auto a = gg::standardize_advantages(std::vector<double>{1, 2, 3});
  EXPECT_NEAR(a[0], -std::sqrt(1.5), 1e-12);
  EXPECT_EQ(a[1], 0.0);
  EXPECT_NEAR(a[2], std::sqrt(1.5), 1e-12);
  EXPECT_EQ(gg::standardize_advantages(std::vector<double>{5, 5, 5}), (std::vector<double>{0, 0, 0}));
  EXPECT_EQ(gg::standardize_advantages(std::vector<double>{0, 1}), (std::vector<double>{-1, 1}));
  EXPECT_THROW(gg::standardize_advantages(std::vector<double>{1}), gradekit::UsageError);
}

TEST(Advantages, NormalizedAndShiftInvariant) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> U(-5, 5);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> r(2 + rng() % 30);
    for (auto& x : r) x = U(rng);
    const auto a = gg::standardize_advantages(r);
    double mean = 0, var = 0;
    for (double x : a) mean += x / a.size();
    for (double x : a) var += (x - mean) * (x - mean) / a.size();
    ASSERT_NEAR(mean, 0.0, 1e-9);
    ASSERT_NEAR(std::sqrt(var), 1.0, 1e-9);
    const double shift = U(rng);
    auto shifted = r;
    for (auto& x : shifted) x += shift;
    const auto b = gg::standardize_advantages(shifted);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-9);
  }
}

TEST(ClippedTerm, Examples) {
  EXPECT_DOUBLE_EQ(gg::clipped_term(1.3, 1.0, 0.2), 1.2);
  EXPECT_EQ(gg::clipped_term(1.0, -2.0, 0.2), -2.0);
  // min(A*rho, A*clip(rho)) = min(-0.5, -0.8).
  EXPECT_DOUBLE_EQ(gg::clipped_term(0.5, -1.0, 0.2), -0.8);
}

TEST(KlEstimate, ExamplesAndGrid) {
  EXPECT_EQ(gg::kl_estimate(-0.7, -0.7), 0.0);
  EXPECT_NEAR(gg::kl_estimate(std::log(0.5), std::log(0.25)), 0.5 - std::log(0.5) - 1.0, 1e-15);
  EXPECT_NEAR(gg::kl_estimate(std::log(0.5), std::log(0.25)), 0.19315, 1e-5);
  for (int i = 0; i < 100; ++i) {
    for (int j = 0; j < 100; ++j) {
      const double lt = -10.0 + 10.0 * i / 99.0;
      const double lr = -10.0 + 10.0 * j / 99.0;
      ASSERT_GE(gg::kl_estimate(lt, lr), 0.0);
      if (i == j) {
        ASSERT_EQ(gg::kl_estimate(lt, lr), 0.0);
      }
    }
  }
}

TEST(Objective, IdentityPoliciesGiveZero) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    auto c = random_gradient_case(rng);
    c.ref = c.policy;
    for (auto& r : c.group.responses) {
      for (std::size_t k = 0; k < r.tokens.size(); ++k) {
        r.logprobs_old[k] = c.policy.log_prob(r.rows[k], r.masks[k], r.tokens[k]);
        const double lp = c.policy.log_prob(r.rows[k], r.masks[k], r.tokens[k]);
        ASSERT_EQ(std::exp(lp - r.logprobs_old[k]), 1.0);
        ASSERT_EQ(gg::kl_estimate(lp, c.ref.log_prob(r.rows[k], r.masks[k], r.tokens[k])), 0.0);
      }
    }
    EXPECT_NEAR(gg::grpo_objective(c.group, c.policy, c.ref, c.cfg), 0.0, 1e-12);
  }
}

TEST(Objective, HandWorkedSingleTokenGroup) {
  // One context, two symbols; theta gives pi(0) = e/(e+1), pi(1) = 1/(e+1).
  gg::ToyPolicy policy({1, 2, 0});
  policy.parameters() = {1.0, 0.0};
  const gg::ToyPolicy ref = policy;
  const double p0 = std::exp(1.0) / (std::exp(1.0) + 1.0);
  const double p1 = 1.0 - p0;
  gg::GroupSample g;
  const double old[3] = {0.5, 0.5, 0.9};  // pi_old of each sampled symbol
  const int sym[3] = {0, 1, 0};
  for (int i = 0; i < 3; ++i) {
    gg::Rollout r;
    r.tokens = {sym[i]};
    r.rows = {0};
    r.masks = {3};
    r.logprobs_old = {std::log(old[i])};
    g.responses.push_back(r);
  }
  g.advantages = {1.0, -1.0, 0.5};
  gg::GrpoConfig cfg;
  cfg.kl_coeff = 0.0;
  // rho = (p0/.5, p1/.5, p0/.9) = (1.4621, 0.5379, 0.8123):
  //   i=0: A=1,   rho clipped to 1.2 -> 1.2
  //   i=1: A=-1,  min(-0.5379, -0.8) -> -0.8
  //   i=2: A=0.5, rho inside band    -> 0.40612
  const double expected = (std::min(p0 / 0.5, 1.2) + std::min(-p1 / 0.5, -0.8) + 0.5 * (p0 / 0.9)) / 3.0;
  EXPECT_NEAR(gg::grpo_objective(g, policy, ref, cfg), expected, 1e-15);
  EXPECT_NEAR(expected, (1.2 - 0.8 + 0.5 * 0.7310585786300049 / 0.9) / 3.0, 1e-12);
}

TEST(Objective, LinearInBeta) {
  std::mt19937_64 rng(3);
  auto c = random_gradient_case(rng);
  double kl = 0;
  for (const auto& r : c.group.responses) {
    double seq = 0;
    for (std::size_t k = 0; k < r.tokens.size(); ++k) {
      seq += gg::kl_estimate(c.policy.log_prob(r.rows[k], r.masks[k], r.tokens[k]),
                             c.ref.log_prob(r.rows[k], r.masks[k], r.tokens[k]));
    }
    kl += seq / r.tokens.size() / c.group.responses.size();
  }
  ASSERT_GT(kl, 0.0);
  const double j1 = gg::grpo_objective(c.group, c.policy, c.ref, c.cfg);
  auto doubled = c.cfg;
  doubled.kl_coeff *= 2;
  EXPECT_NEAR(gg::grpo_objective(c.group, c.policy, c.ref, doubled), j1 - c.cfg.kl_coeff * kl, 1e-12);
}

TEST(Objective, RejectsEmptyResponse) {
  std::mt19937_64 rng(4);
  auto c = random_gradient_case(rng);
  c.group.responses[0] = gg::Rollout{};
  EXPECT_THROW(gg::grpo_objective(c.group, c.policy, c.ref, c.cfg), gradekit::UsageError);
}

TEST(Gradient, MatchesCentralDifferences) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    auto c = random_gradient_case(rng);
    ASSERT_LE(c.policy.parameters().size(), 200u);
    const double err = gradekit::testing::gradient_relative_error(c);
    EXPECT_LT(err, 1e-4) << "config " << t;
  }
}

TEST(Training, ZeroLearningRateLeavesParameters) {
  gg::ToyGradingEnv env({});
  gg::ToyPolicy policy(env.policy_shape());
  std::mt19937_64 rng(6);
  for (auto& v : policy.parameters()) v = static_cast<double>(rng() % 100) / 50.0;
  const auto before = policy.parameters();
  gg::GrpoConfig cfg;
  cfg.learning_rate = 0.0;
  gg::TrainerState st;
  gg::train_step(policy, policy, env, cfg, 0, st);
  EXPECT_EQ(policy.parameters(), before);
}

TEST(Training, BitIdenticalAcrossRuns) {
  gg::ToyGradingEnv env({});
  gg::GrpoConfig cfg;
  cfg.steps = 5;
  cfg.seed = 42;
  gg::ToyPolicy a(env.policy_shape());
  gg::ToyPolicy b(env.policy_shape());
  const auto ma = gg::train(a, env, cfg);
  const auto mb = gg::train(b, env, cfg);
  EXPECT_EQ(a.parameters(), b.parameters());
  for (std::size_t i = 0; i < ma.size(); ++i) EXPECT_EQ(ma[i].mean_reward, mb[i].mean_reward);
}

TEST(Training, ConstrainedRolloutsAreAlwaysValid) {
  gg::ToyGradingEnv env({});
  gg::ToyPolicy policy(env.policy_shape());
  std::mt19937_64 rng(7);
  for (auto& v : policy.parameters()) v = static_cast<double>(rng() % 1000) / 100.0 - 5.0;
  double validity = 0.0;
  gg::evaluate_policy(policy, env, 64, 1, &validity);
  EXPECT_EQ(validity, 1.0);
}

TEST(Training, UnconstrainedRandomPolicyIsMostlyInvalid) {
  gg::ToyEnvConfig cfg;
  cfg.constrained = false;
  gg::ToyGradingEnv env(cfg);
  gg::ToyPolicy policy(env.policy_shape());
  double validity = 1.0;
  const double r = gg::evaluate_policy(policy, env, 32, 1, &validity);
  EXPECT_LT(validity, 0.01);
  EXPECT_LT(r, 0.0);
}

TEST(Training, ImprovesMeanReward) {
  gg::ToyGradingEnv env({});
  gg::ToyPolicy policy(env.policy_shape());
  gg::GrpoConfig cfg;
  cfg.steps = 300;
  cfg.seed = 9;
  const double before = gg::evaluate_policy(policy, env, 32, 12345);
  const auto metrics = gg::train(policy, env, cfg);
  double validity = 0.0;
  const double after = gg::evaluate_policy(policy, env, 32, 12345, &validity);
  EXPECT_GT(after, before + 0.2) << "before " << before << " after " << after;
  EXPECT_EQ(validity, 1.0);
  EXPECT_EQ(metrics.back().validity_rate, 1.0);
}

TEST(Training, NonFiniteGradientAbortsWithDump) {
  gg::ToyGradingEnv env({});
  gg::ToyPolicy policy(env.policy_shape());
  const gg::ToyPolicy ref = policy;
  const std::uint32_t bos_row = policy.context_row(0, std::vector<int>{}, 0);
  policy.parameters()[bos_row * policy.shape().vocab_size] = std::nan("");
  gg::TrainerState st;
  try {
    gg::train_step(policy, ref, env, {}, 0, st);
    FAIL();
  } catch (const gradekit::TrainingDiverged& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 0"), std::string::npos);
    EXPECT_NE(msg.find("text=\""), std::string::npos);
  }
}

TEST(ToyEnv, InstancesAndVocabulary) {
  gg::ToyGradingEnv env({});
  EXPECT_LE(env.vocabulary().size(), 64u);
  int correct = 0;
  for (const auto& inst : env.instances()) {
    gradekit::reward::check_instance(inst);
    correct += inst.gold_correctness == gradekit::grammar::Correctness::Correct;
  }
  EXPECT_EQ(correct * 2, static_cast<int>(env.instances().size()));
  gg::ToyEnvConfig short_cfg;
  short_cfg.max_len = 20;
  EXPECT_THROW(gg::ToyGradingEnv{short_cfg}, gradekit::UsageError);
}

TEST(ToyEnv, PerfectResponsesScoreHighest) {
  gg::ToyGradingEnv env({});
  const auto& v = env.vocabulary();
  auto encode = [&](const std::string& s) {
    gg::Rollout r;
    for (char ch : s) {
      for (int k = 0; k < v.eos(); ++k) {
        if (v.symbol_char(k) == ch) r.tokens.push_back(k);
      }
    }
    r.tokens.push_back(v.eos());
    r.text = s;
    r.valid = gradekit::grammar::validate(gradekit::grammar::structured_grammar(), s);
    return r;
  };
  auto r0 = encode("correct</correctness><localization>None</localization>");
  r0.prompt = 0;  // a correct instance
  EXPECT_NEAR(env.score(r0).match + env.score(r0).loc, 2.0, 0);
  auto r1 = encode("incorrect</correctness><localization>" + env.instances()[1].gold_error + "</localization>");
  r1.prompt = 1;
  EXPECT_NEAR(env.score(r1).match + env.score(r1).loc, 2.0, 0);
}

TEST(Snapshot, RoundTripAndLayout) {
  gg::ToyPolicy p({3, 5, 1});
  std::mt19937_64 rng(8);
  for (auto& v : p.parameters()) v = static_cast<double>(rng()) / 1e18 - 9.0;
  std::stringstream ss;
  gg::write_snapshot(ss, p);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 8 + 16 + 16 + p.parameters().size() * 8);
  EXPECT_EQ(bytes.substr(0, 8), "GKTOYPOL");
  EXPECT_EQ(bytes[8], 1);                      // version, little-endian
  EXPECT_EQ(bytes[12], 3);                     // prompts
  EXPECT_EQ(bytes[16], 5);                     // vocab
  EXPECT_EQ(bytes[24], static_cast<char>(18)); // rows = 3 * (5 + 1)
  double first;
  std::memcpy(&first, bytes.data() + 40, 8);  // host is little-endian here
  EXPECT_EQ(first, p.parameters()[0]);
  const auto q = gg::read_snapshot(ss);
  EXPECT_EQ(q.shape(), p.shape());
  EXPECT_EQ(q.parameters(), p.parameters());
  std::stringstream bad("GKTOYPOX");
  EXPECT_THROW(gg::read_snapshot(bad), gradekit::UsageError);
}
