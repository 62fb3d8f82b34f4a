// SPDX-License-Identifier: Apache-2.0
//
// JSONL records (one UTF-8 JSON object per line) and the JSON shapes the
// command-line tools read and write.

#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradekit/errors.hpp"
#include "gradekit/eval.hpp"
#include "gradekit/grammar.hpp"
#include "gradekit/reward.hpp"

namespace gradekit::io {

using nlohmann::json;

inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw UsageError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!out.back().is_object()) throw UsageError(path.string() + ":" + std::to_string(lineno) + ": expected an object");
  }
  return out;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : rows) out << r.dump() << '\n';
}

inline void write_json(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) throw UsageError(where + ": missing field \"" + key + "\"");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw UsageError(where + ": field \"" + key + "\" has the wrong type");
  }
}

/// {"id", "question_id"?, "question", "reference_answer", "student_answer",
///  "gold_correctness": "correct"|"incorrect", "gold_error": string|null}
inline reward::GradingInstance instance_from_json(const json& j) {
  const std::string id = field<std::string>(j, "id", "instance");
  const std::string where = "instance " + id;
  reward::GradingInstance inst;
  inst.id = id;
  inst.question_id = j.contains("question_id") ? field<std::string>(j, "question_id", where) : id;
  inst.question = field<std::string>(j, "question", where);
  inst.reference_answer = field<std::string>(j, "reference_answer", where);
  inst.student_answer = j.value("student_answer", "");
  const auto c = grammar::parse_correctness(field<std::string>(j, "gold_correctness", where));
  if (!c) throw UsageError(where + ": gold_correctness must be \"correct\" or \"incorrect\"");
  inst.gold_correctness = *c;
  if (j.contains("gold_error") && !j["gold_error"].is_null()) inst.gold_error = field<std::string>(j, "gold_error", where);
  if (inst.gold_correctness == grammar::Correctness::Incorrect && inst.gold_error.empty()) {
    throw UsageError(where + ": an incorrect answer needs a gold_error");
  }
  reward::check_instance(inst);
  return inst;
}

inline json instance_to_json(const reward::GradingInstance& inst) {
  json j{{"id", inst.id},
         {"question_id", inst.question_id},
         {"question", inst.question},
         {"reference_answer", inst.reference_answer},
         {"student_answer", inst.student_answer},
         {"gold_correctness", grammar::to_string(inst.gold_correctness)}};
  j["gold_error"] = inst.gold_error.empty() ? json(nullptr) : json(inst.gold_error);
  return j;
}

inline std::vector<reward::GradingInstance> read_instances(const std::filesystem::path& path) {
  std::vector<reward::GradingInstance> out;
  for (const auto& j : read_jsonl(path)) out.push_back(instance_from_json(j));
  return out;
}

/// {"id", "response": full model output including "</think>"}. A response
/// outside the structured format is an input error.
inline eval::Prediction prediction_from_json(const json& j) {
  const std::string id = field<std::string>(j, "id", "prediction");
  const std::string text = field<std::string>(j, "response", "prediction " + id);
  try {
    return {id, grammar::parse_response(text)};
  } catch (const MalformedResponse& e) {
    throw UsageError("prediction " + id + ": " + e.what());
  }
}

inline json record_to_json(const eval::EvalRecord& r) {
  json j{{"id", r.instance_id},
         {"pred_correctness", grammar::to_string(r.pred_c)},
         {"pred_localization", grammar::localization_text(r.pred_l)},
         {"gold_correctness", grammar::to_string(r.gold_c)},
         {"el_verdict", eval::to_string(r.el_verdict)},
         {"judge_failed", r.judge_failed}};
  j["gold_error"] = r.gold_l.empty() ? json(nullptr) : json(r.gold_l);
  if (r.judge_failed) j["judge_error"] = r.judge_error;
  return j;
}

inline json task_to_json(const eval::TaskMetrics& t) {
  return json{{"accuracy", eval::round2(t.accuracy)},
              {"f1", eval::round2(t.f1)},
              {"tp", t.confusion.tp},
              {"fp", t.confusion.fp},
              {"tn", t.confusion.tn},
              {"fn", t.confusion.fn}};
}

inline json report_to_json(const eval::MetricReport& m, const std::string& judge_template) {
  return json{{"records", m.records},
              {"evaluated", m.records - m.excluded},
              {"excluded_judge_failures", m.excluded},
              {"positive_class", grammar::to_string(m.positive_class)},
              {"f1_mode", m.f1_mode == eval::F1Mode::Binary ? "binary" : "macro"},
              {"judge_template", judge_template},
              {"ed", task_to_json(m.ed)},
              {"el", task_to_json(m.el)}};
}

}  // namespace gradekit::io
