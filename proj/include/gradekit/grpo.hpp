// SPDX-License-Identifier: Apache-2.0
//
// Group Relative Policy Optimization on a tabular autoregressive policy.
//
//   J = 1/|G| sum_i 1/|y_i| sum_t [ min(A_i rho_it, A_i clip(rho_it, 1-eps, 1+eps))
//                                   - beta D_it ]
//   rho_it = pi_theta / pi_old,   D_it = pi_ref/pi_theta - log(pi_ref/pi_theta) - 1
//
// A_i are the group's rewards standardized with the population std.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gradekit/errors.hpp"
#include "gradekit/random.hpp"

namespace gradekit::grpo {

// ---------------------------------------------------------------------------
// Scalar pieces

inline std::vector<double> standardize_advantages(std::span<const double> rewards, double eps_std = 1e-8) {
  if (rewards.size() < 2) throw UsageError("a group needs at least two rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sigma = std::sqrt(var / n);
  std::vector<double> out(rewards.size(), 0.0);
  if (sigma < eps_std) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / sigma;
  return out;
}

inline double clipped_term(double ratio, double advantage, double eps) {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(advantage * ratio, advantage * clipped);
}

/// Per-token estimator of KL(pi_theta || pi_ref); always >= 0.
inline double kl_estimate(double logp_theta, double logp_ref) {
  const double d = logp_ref - logp_theta;
  return std::exp(d) - d - 1.0;
}

// ---------------------------------------------------------------------------
// Policy

using SymbolMask = std::uint64_t;  // bit a set = symbol a may be emitted

struct PolicyShape {
  std::uint32_t num_prompts = 1;
  std::uint32_t vocab_size = 2;  // <= 64
  std::uint32_t order = 1;       // context window k

  bool operator==(const PolicyShape&) const = default;

  std::uint64_t rows() const {
    std::uint64_t r = num_prompts;
    for (std::uint32_t i = 0; i < order; ++i) r *= vocab_size + 1ULL;  // + BOS
    return r;
  }
  SymbolMask full_mask() const { return vocab_size == 64 ? ~SymbolMask{0} : (SymbolMask{1} << vocab_size) - 1; }
};

/// Logits indexed by (prompt, last k symbols) x next symbol.
class ToyPolicy {
 public:
  explicit ToyPolicy(PolicyShape shape) : shape_(shape) {
    if (shape.num_prompts == 0 || shape.vocab_size < 2 || shape.vocab_size > 64) {
      throw UsageError("toy policy needs >= 1 prompt and 2..64 symbols");
    }
    if (shape.rows() * shape.vocab_size > (std::uint64_t{1} << 31)) {
      throw UsageError("toy policy table too large; lower the context order");
    }
    theta_.assign(shape.rows() * shape.vocab_size, 0.0);
  }

  const PolicyShape& shape() const noexcept { return shape_; }
  std::vector<double>& parameters() noexcept { return theta_; }
  const std::vector<double>& parameters() const noexcept { return theta_; }

  /// Row for predicting position t of `seq` (positions before 0 are BOS).
  std::uint32_t context_row(std::uint32_t prompt, std::span<const int> seq, std::size_t t) const {
    if (prompt >= shape_.num_prompts) throw UsageError("prompt id out of range");
    std::uint64_t row = prompt;
    for (std::uint32_t j = shape_.order; j > 0; --j) {
      const std::int64_t pos = static_cast<std::int64_t>(t) - j;
      const std::uint64_t sym = pos < 0 ? shape_.vocab_size : static_cast<std::uint64_t>(seq[pos]);
      row = row * (shape_.vocab_size + 1ULL) + sym;
    }
    return static_cast<std::uint32_t>(row);
  }

  std::span<const double> logits(std::uint32_t row) const {
    return {theta_.data() + static_cast<std::size_t>(row) * shape_.vocab_size, shape_.vocab_size};
  }

  /// Softmax restricted to `mask`; entries outside the mask are 0.
  void probabilities(std::uint32_t row, SymbolMask mask, std::vector<double>& out) const {
    if (mask == 0) throw UsageError("empty symbol mask");
    const auto z = logits(row);
    out.assign(shape_.vocab_size, 0.0);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::uint32_t a = 0; a < shape_.vocab_size; ++a) {
      if (mask >> a & 1) mx = std::max(mx, z[a]);
    }
    double total = 0.0;
    for (std::uint32_t a = 0; a < shape_.vocab_size; ++a) {
      if (mask >> a & 1) total += out[a] = std::exp(z[a] - mx);
    }
    for (double& p : out) p /= total;
  }

  double log_prob(std::uint32_t row, SymbolMask mask, int symbol) const {
    if (!(mask >> symbol & 1)) throw UsageError("symbol outside its mask");
    const auto z = logits(row);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::uint32_t a = 0; a < shape_.vocab_size; ++a) {
      if (mask >> a & 1) mx = std::max(mx, z[a]);
    }
    double total = 0.0;
    for (std::uint32_t a = 0; a < shape_.vocab_size; ++a) {
      if (mask >> a & 1) total += std::exp(z[a] - mx);
    }
    return z[symbol] - mx - std::log(total);
  }

  int sample(std::uint32_t row, SymbolMask mask, Rng& rng, std::vector<double>& scratch) const {
    probabilities(row, mask, scratch);
    double u = uniform01(rng);
    int last = -1;
    for (std::uint32_t a = 0; a < shape_.vocab_size; ++a) {
      if (!(mask >> a & 1)) continue;
      last = static_cast<int>(a);
      if (u < scratch[a]) return last;
      u -= scratch[a];
    }
    return last;  // rounding fell off the end
  }

 private:
  PolicyShape shape_;
  std::vector<double> theta_;
};

// ---------------------------------------------------------------------------
// Groups and the objective

/// One sampled response with everything the objective needs per token.
struct Rollout {
  std::uint32_t prompt = 0;
  std::vector<int> tokens;
  std::vector<std::uint32_t> rows;
  std::vector<SymbolMask> masks;
  std::vector<double> logprobs_old;
  bool valid = false;   // grammar-valid output
  std::string text;     // decoded, for logs and dumps
};

struct GroupSample {
  std::vector<Rollout> responses;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

struct GrpoConfig {
  std::size_t group_size = 8;
  double clip_eps = 0.2;
  double kl_coeff = 0.04;
  double learning_rate = 20.0;  // suits the tabular toy policy; gradients carry 1/(G|y|)
  double momentum = 0.0;
  std::size_t steps = 500;
  std::uint64_t seed = 0;
  double eps_std = 1e-8;
  /// Gradient steps per sampled batch; 1 keeps theta_old == theta at sampling.
  std::size_t inner_epochs = 1;
};

inline void check_config(const GrpoConfig& c) {
  if (c.group_size < 2) throw UsageError("group_size must be >= 2");
  if (!(c.clip_eps > 0.0 && c.clip_eps < 1.0)) throw UsageError("clip_eps must lie in (0, 1)");
  if (!(c.kl_coeff >= 0.0)) throw UsageError("kl_coeff must be >= 0");
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) throw UsageError("learning_rate must be >= 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw UsageError("momentum must lie in [0, 1)");
  if (c.inner_epochs == 0) throw UsageError("inner_epochs must be >= 1");
  if (!(c.eps_std > 0.0)) throw UsageError("eps_std must be positive");
}

inline void check_group(const GroupSample& g) {
  if (g.responses.size() < 2) throw UsageError("a group needs at least two responses");
  if (g.advantages.size() != g.responses.size()) throw UsageError("advantages do not match responses");
  for (const auto& r : g.responses) {
    if (r.tokens.empty()) throw UsageError("empty response in group");
    if (r.rows.size() != r.tokens.size() || r.masks.size() != r.tokens.size() ||
        r.logprobs_old.size() != r.tokens.size()) {
      throw UsageError("rollout bookkeeping is inconsistent");
    }
  }
}

inline double grpo_objective(const GroupSample& g, const ToyPolicy& policy, const ToyPolicy& ref,
                             const GrpoConfig& cfg) {
  check_group(g);
  double total = 0.0;
  for (std::size_t i = 0; i < g.responses.size(); ++i) {
    const Rollout& r = g.responses[i];
    double seq = 0.0;
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      const double lp = policy.log_prob(r.rows[t], r.masks[t], r.tokens[t]);
      const double lr = ref.log_prob(r.rows[t], r.masks[t], r.tokens[t]);
      const double rho = std::exp(lp - r.logprobs_old[t]);
      seq += clipped_term(rho, g.advantages[i], cfg.clip_eps) - cfg.kl_coeff * kl_estimate(lp, lr);
    }
    total += seq / static_cast<double>(r.tokens.size());
  }
  return total / static_cast<double>(g.responses.size());
}

/// Adds scale * dJ/dtheta to `grad`.
inline void accumulate_gradient(const GroupSample& g, const ToyPolicy& policy, const ToyPolicy& ref,
                                const GrpoConfig& cfg, std::vector<double>& grad, double scale = 1.0) {
  check_group(g);
  const std::uint32_t V = policy.shape().vocab_size;
  grad.resize(policy.parameters().size(), 0.0);
  std::vector<double> probs;
  const double inv_g = scale / static_cast<double>(g.responses.size());
  for (std::size_t i = 0; i < g.responses.size(); ++i) {
    const Rollout& r = g.responses[i];
    const double A = g.advantages[i];
    const double w = inv_g / static_cast<double>(r.tokens.size());
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      policy.probabilities(r.rows[t], r.masks[t], probs);
      const double lp = policy.log_prob(r.rows[t], r.masks[t], r.tokens[t]);
      const double lr = ref.log_prob(r.rows[t], r.masks[t], r.tokens[t]);
      const double rho = std::exp(lp - r.logprobs_old[t]);
      const double clipped = std::clamp(rho, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
      // The min picks the unclipped branch (gradient A*rho) unless the
      // clipped one is strictly smaller, whose gradient is 0.
      const double d_clip = A * rho <= A * clipped ? A * rho : 0.0;
      const double d_kl = 1.0 - std::exp(lr - lp);
      const double coeff = w * (d_clip - cfg.kl_coeff * d_kl);
      if (!std::isfinite(coeff) || !std::isfinite(lp)) {
        throw TrainingDiverged("non-finite gradient (response " + std::to_string(i) + ", token " +
                               std::to_string(t) + ")");
      }
      double* row = grad.data() + static_cast<std::size_t>(r.rows[t]) * V;
      for (std::uint32_t a = 0; a < V; ++a) {
        if (r.masks[t] >> a & 1) row[a] -= coeff * probs[a];
      }
      row[r.tokens[t]] += coeff;
    }
  }
}

/// Mean per-token KL estimate of the group's tokens.
inline double mean_kl(const GroupSample& g, const ToyPolicy& policy, const ToyPolicy& ref) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& r : g.responses) {
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      total += kl_estimate(policy.log_prob(r.rows[t], r.masks[t], r.tokens[t]),
                           ref.log_prob(r.rows[t], r.masks[t], r.tokens[t]));
      ++n;
    }
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------------------
// Training

/// A source of prompts plus a sampler and a reward for responses.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::uint32_t num_prompts() const = 0;
  /// Prompts trained on at a given step.
  virtual std::vector<std::uint32_t> prompts_for_step(std::size_t step) const = 0;
  virtual Rollout rollout(const ToyPolicy& policy, std::uint32_t prompt, Rng& rng) const = 0;
  virtual double reward(const Rollout& r) const = 0;
};

struct StepMetrics {
  std::size_t step = 0;
  double mean_reward = 0.0;
  double mean_kl = 0.0;
  double validity_rate = 0.0;
};

struct TrainerState {
  std::vector<double> velocity;  // momentum buffer
};

inline std::string dump_group(const GroupSample& g) {
  std::ostringstream ss;
  ss.precision(17);
  for (std::size_t i = 0; i < g.responses.size(); ++i) {
    ss << "  [" << i << "] prompt=" << g.responses[i].prompt << " reward=" << g.rewards[i]
       << " advantage=" << g.advantages[i] << " text=\"" << g.responses[i].text << "\"\n";
  }
  return ss.str();
}

inline GroupSample sample_group(const ToyPolicy& policy, const Environment& env, std::uint32_t prompt,
                                const GrpoConfig& cfg, Rng& rng) {
  GroupSample g;
  for (std::size_t i = 0; i < cfg.group_size; ++i) {
    g.responses.push_back(env.rollout(policy, prompt, rng));
    g.rewards.push_back(env.reward(g.responses.back()));
  }
  g.advantages = standardize_advantages(g.rewards, cfg.eps_std);
  return g;
}

/// One GRPO update. Rollouts draw from a step-specific stream, so a run is
/// reproducible from (seed, step) alone.
inline StepMetrics train_step(ToyPolicy& policy, const ToyPolicy& ref, const Environment& env,
                              const GrpoConfig& cfg, std::size_t step, TrainerState& state) {
  check_config(cfg);
  if (!(policy.shape() == ref.shape())) throw UsageError("policy and reference shapes differ");
  Rng rng(derive_seed(cfg.seed, step));
  std::vector<GroupSample> groups;
  for (std::uint32_t prompt : env.prompts_for_step(step)) {
    groups.push_back(sample_group(policy, env, prompt, cfg, rng));
  }
  if (groups.empty()) throw UsageError("environment produced no prompts");

  StepMetrics m;
  m.step = step;
  std::size_t n = 0;
  std::size_t valid = 0;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.responses.size(); ++i) {
      m.mean_reward += g.rewards[i];
      valid += g.responses[i].valid;
      ++n;
    }
    m.mean_kl += mean_kl(g, policy, ref) / static_cast<double>(groups.size());
  }
  m.mean_reward /= static_cast<double>(n);
  m.validity_rate = static_cast<double>(valid) / static_cast<double>(n);

  auto& theta = policy.parameters();
  for (std::size_t epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
    std::vector<double> grad(theta.size(), 0.0);
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      try {
        accumulate_gradient(groups[gi], policy, ref, cfg, grad, 1.0 / static_cast<double>(groups.size()));
      } catch (const TrainingDiverged& e) {
        throw TrainingDiverged(std::string(e.what()) + " at step " + std::to_string(step) + ", group " +
                               std::to_string(gi) + ":\n" + dump_group(groups[gi]));
      }
    }
    if (cfg.momentum > 0.0) {
      state.velocity.resize(theta.size(), 0.0);
      for (std::size_t k = 0; k < theta.size(); ++k) {
        state.velocity[k] = cfg.momentum * state.velocity[k] + grad[k];
        theta[k] += cfg.learning_rate * state.velocity[k];
      }
    } else {
      for (std::size_t k = 0; k < theta.size(); ++k) theta[k] += cfg.learning_rate * grad[k];
    }
  }
  return m;
}

/// Runs cfg.steps updates; the reference policy is the initial one.
inline std::vector<StepMetrics> train(ToyPolicy& policy, const Environment& env, const GrpoConfig& cfg,
                                      const std::function<void(const StepMetrics&)>& on_step = {}) {
  const ToyPolicy ref = policy;
  TrainerState state;
  std::vector<StepMetrics> out;
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    out.push_back(train_step(policy, ref, env, cfg, s, state));
    if (on_step) on_step(out.back());
  }
  return out;
}

/// Mean reward over `samples` rollouts per prompt from a fixed seed.
inline double evaluate_policy(const ToyPolicy& policy, const Environment& env, std::size_t samples,
                              std::uint64_t seed, double* validity_rate = nullptr) {
  Rng rng(seed);
  double total = 0.0;
  std::size_t valid = 0;
  std::size_t n = 0;
  for (std::uint32_t p = 0; p < env.num_prompts(); ++p) {
    for (std::size_t i = 0; i < samples; ++i) {
      const Rollout r = env.rollout(policy, p, rng);
      total += env.reward(r);
      valid += r.valid;
      ++n;
    }
  }
  if (validity_rate) *validity_rate = n ? static_cast<double>(valid) / static_cast<double>(n) : 0.0;
  return n ? total / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------------------
// Snapshot: little-endian
//   bytes 0..7    magic "GKTOYPOL"
//   u32           format version (1)
//   u32 u32 u32   num_prompts, vocab_size, order
//   u64 u64       rows, cols
//   f64 x rows*cols  logits, row-major

inline constexpr char kSnapshotMagic[8] = {'G', 'K', 'T', 'O', 'Y', 'P', 'O', 'L'};
inline constexpr std::uint32_t kSnapshotVersion = 1;

namespace detail {

inline void put_le(std::ostream& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_le(std::istream& in, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = in.get();
    if (c == EOF) throw UsageError("policy snapshot is truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace detail

inline void write_snapshot(std::ostream& out, const ToyPolicy& p) {
  out.write(kSnapshotMagic, sizeof kSnapshotMagic);
  detail::put_le(out, kSnapshotVersion, 4);
  detail::put_le(out, p.shape().num_prompts, 4);
  detail::put_le(out, p.shape().vocab_size, 4);
  detail::put_le(out, p.shape().order, 4);
  detail::put_le(out, p.shape().rows(), 8);
  detail::put_le(out, p.shape().vocab_size, 8);
  for (double v : p.parameters()) detail::put_le(out, std::bit_cast<std::uint64_t>(v), 8);
}

inline ToyPolicy read_snapshot(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kSnapshotMagic, sizeof magic) != 0) {
    throw UsageError("not a gradekit policy snapshot");
  }
  if (detail::get_le(in, 4) != kSnapshotVersion) throw UsageError("unsupported snapshot version");
  PolicyShape shape;
  shape.num_prompts = static_cast<std::uint32_t>(detail::get_le(in, 4));
  shape.vocab_size = static_cast<std::uint32_t>(detail::get_le(in, 4));
  shape.order = static_cast<std::uint32_t>(detail::get_le(in, 4));
  const std::uint64_t rows = detail::get_le(in, 8);
  const std::uint64_t cols = detail::get_le(in, 8);
  ToyPolicy p(shape);
  if (rows != shape.rows() || cols != shape.vocab_size) throw UsageError("snapshot dimensions are inconsistent");
  for (double& v : p.parameters()) v = std::bit_cast<double>(detail::get_le(in, 8));
  return p;
}

inline void save_snapshot(const std::filesystem::path& path, const ToyPolicy& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_snapshot(out, p);
}

inline ToyPolicy load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  return read_snapshot(in);
}

}  // namespace gradekit::grpo
