// SPDX-License-Identifier: Apache-2.0
//
// Cascaded evaluation: error detection (ED) on the correctness tag, then
// error localization (EL) for responses that flagged an error.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "gradekit/errors.hpp"
#include "gradekit/grammar.hpp"
#include "gradekit/judge.hpp"
#include "gradekit/random.hpp"
#include "gradekit/reward.hpp"

namespace gradekit::eval {

using grammar::Correctness;
using grammar::Localization;
using reward::GradingInstance;

enum class ElVerdict { CorrectLoc, WrongLoc, NotEvaluated };

inline std::string_view to_string(ElVerdict v) {
  switch (v) {
    case ElVerdict::CorrectLoc: return "correct_loc";
    case ElVerdict::WrongLoc: return "wrong_loc";
    case ElVerdict::NotEvaluated: return "not_evaluated";
  }
  return "?";
}

struct Prediction {
  std::string instance_id;
  grammar::StructuredResponse response;
};

struct EvalRecord {
  std::string instance_id;
  Correctness pred_c = Correctness::Correct;
  Localization pred_l = grammar::NoneMarker{};
  Correctness gold_c = Correctness::Correct;
  std::string gold_l;  // empty for correct answers
  ElVerdict el_verdict = ElVerdict::NotEvaluated;
  bool judge_failed = false;  // excluded from metrics
  std::string judge_error;
};

struct CascadeOptions {
  /// Concurrent judge calls; 0 uses the judge's own max_in_flight().
  std::size_t max_in_flight = 0;
};

/// Pairs predictions with gold instances by id and applies the cascade.
/// A response that says "correct" skips EL. A "None" localization is right
/// exactly when the answer is correct. A real localization on a correct
/// answer is wrong without asking the judge; on an incorrect answer the
/// judge decides.
inline std::vector<EvalRecord> cascade_evaluate(const std::vector<GradingInstance>& gold,
                                                const std::vector<Prediction>& preds, judge::Judge& judge,
                                                const CascadeOptions& opt = {}) {
  std::unordered_map<std::string, const Prediction*> by_id;
  for (const auto& p : preds) {
    if (!by_id.emplace(p.instance_id, &p).second) throw UsageError("duplicate prediction id " + p.instance_id);
  }
  std::vector<EvalRecord> out;
  std::vector<std::size_t> need_judge;
  for (const auto& g : gold) {
    reward::check_instance(g);
    const auto it = by_id.find(g.id);
    if (it == by_id.end()) throw UsageError("no prediction for instance " + g.id);
    EvalRecord r;
    r.instance_id = g.id;
    r.pred_c = it->second->response.correctness;
    r.pred_l = it->second->response.localization;
    r.gold_c = g.gold_correctness;
    r.gold_l = g.gold_error;
    if (r.pred_c == Correctness::Incorrect) {
      if (std::holds_alternative<grammar::NoneMarker>(r.pred_l)) {
        r.el_verdict = r.gold_c == Correctness::Correct ? ElVerdict::CorrectLoc : ElVerdict::WrongLoc;
      } else if (r.gold_c == Correctness::Correct) {
        r.el_verdict = ElVerdict::WrongLoc;
      } else {
        need_judge.push_back(out.size());
      }
    }
    out.push_back(std::move(r));
  }
  if (out.size() != preds.size()) throw UsageError("predictions reference unknown instance ids");

  std::unordered_map<std::string, const GradingInstance*> gold_by_id;
  for (const auto& g : gold) gold_by_id.emplace(g.id, &g);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < need_judge.size(); k = next++) {
      EvalRecord& r = out[need_judge[k]];
      const GradingInstance& g = *gold_by_id.at(r.instance_id);
      judge::JudgeRequest req;
      req.question = g.question;
      req.reference_answer = g.reference_answer;
      req.gold_error = g.gold_error;
      req.predicted_localization = grammar::localization_text(r.pred_l);
      try {
        r.el_verdict = judge.judge(req).verdict == judge::Verdict::CorrectDescription ? ElVerdict::CorrectLoc
                                                                                      : ElVerdict::WrongLoc;
      } catch (const Error& e) {
        r.judge_failed = true;
        r.judge_error = e.what();
      }
    }
  };
  const std::size_t threads =
      std::max<std::size_t>(1, std::min(need_judge.size(), opt.max_in_flight ? opt.max_in_flight : judge.max_in_flight()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const Confusion&) const = default;
};

/// Percentages, not fractions.
inline double accuracy_pct(const Confusion& c) {
  return c.total() ? 100.0 * static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total()) : 0.0;
}

/// 2PR/(P+R) = 2tp/(2tp+fp+fn); 0 when tp = 0.
inline double f1_pct(std::size_t tp, std::size_t fp, std::size_t fn) {
  if (tp == 0) return 0.0;
  return 100.0 * 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

enum class F1Mode { Binary, Macro };

struct MetricOptions {
  Correctness positive_class = Correctness::Incorrect;
  F1Mode f1_mode = F1Mode::Binary;
};

struct TaskMetrics {
  double accuracy = 0.0;
  double f1 = 0.0;
  Confusion confusion;
};

struct MetricReport {
  TaskMetrics ed;
  TaskMetrics el;
  Correctness positive_class = Correctness::Incorrect;
  F1Mode f1_mode = F1Mode::Binary;
  std::size_t records = 0;
  std::size_t excluded = 0;  // judge failures
};

inline double task_f1(const Confusion& c, F1Mode mode) {
  const double pos = f1_pct(c.tp, c.fp, c.fn);
  if (mode == F1Mode::Binary) return pos;
  return (pos + f1_pct(c.tn, c.fn, c.fp)) / 2.0;
}

/// EL counts an instance as positive when its answer is wrong: a correct
/// localization of a wrong answer is a tp, a missed or wrong one a fn
/// (including answers the cascade never reached EL for), a wrong
/// localization on a right answer a fp.
inline MetricReport compute_metrics(const std::vector<EvalRecord>& records, const MetricOptions& opt = {}) {
  if (records.empty()) throw UsageError("compute_metrics needs at least one record");
  MetricReport m;
  m.positive_class = opt.positive_class;
  m.f1_mode = opt.f1_mode;
  m.records = records.size();
  for (const auto& r : records) {
    if (r.judge_failed) {
      ++m.excluded;
      continue;
    }
    const bool pred_pos = r.pred_c == opt.positive_class;
    const bool gold_pos = r.gold_c == opt.positive_class;
    auto& ed = m.ed.confusion;
    (pred_pos ? (gold_pos ? ed.tp : ed.fp) : (gold_pos ? ed.fn : ed.tn))++;

    auto& el = m.el.confusion;
    if (r.gold_c == Correctness::Incorrect) {
      (r.el_verdict == ElVerdict::CorrectLoc ? el.tp : el.fn)++;
    } else {
      (r.el_verdict == ElVerdict::WrongLoc ? el.fp : el.tn)++;
    }
  }
  if (m.excluded == m.records) throw UsageError("every record was excluded; no metrics to compute");
  for (TaskMetrics* t : {&m.ed, &m.el}) {
    t->accuracy = accuracy_pct(t->confusion);
    t->f1 = task_f1(t->confusion, opt.f1_mode);
  }
  return m;
}

inline double round2(double pct) { return std::round(pct * 100.0) / 100.0; }

// ---------------------------------------------------------------------------
// Dataset balancing

/// Keeps questions that have both correct and incorrect answers and samples
/// k = min(#correct, #incorrect) of each. Selected instances keep their
/// input order.
inline std::vector<GradingInstance> balance_dataset(const std::vector<GradingInstance>& instances,
                                                    std::uint64_t seed) {
  std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> by_question;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    auto& [right, wrong] = by_question[instances[i].question_id];
    (instances[i].gold_correctness == Correctness::Correct ? right : wrong).push_back(i);
  }
  Rng rng(seed);
  auto pick = [&rng](std::vector<std::size_t> idx, std::size_t k) {
    for (std::size_t i = 0; i < k; ++i) {
      const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i),
                                                          static_cast<std::int64_t>(idx.size() - 1)));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  };
  std::vector<std::size_t> keep;
  for (auto& [qid, groups] : by_question) {
    auto& [right, wrong] = groups;
    const std::size_t k = std::min(right.size(), wrong.size());
    if (k == 0) continue;
    for (auto i : pick(right, k)) keep.push_back(i);
    for (auto i : pick(wrong, k)) keep.push_back(i);
  }
  std::sort(keep.begin(), keep.end());
  std::vector<GradingInstance> out;
  out.reserve(keep.size());
  for (auto i : keep) out.push_back(instances[i]);
  return out;
}

}  // namespace gradekit::eval
