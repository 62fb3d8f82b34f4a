// SPDX-License-Identifier: Apache-2.0
//
// Localization judges. A judge decides whether a predicted error
// localization correctly describes the gold error. Two transports ship:
// a deterministic normalized-match stub and a client for any
// OpenAI-compatible chat-completions server.

#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <semaphore>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>

#include <openssl/evp.h>

#include <json.hpp>

#include "gradekit/errors.hpp"
#include "gradekit/http.hpp"

namespace gradekit::judge {

enum class Verdict { CorrectDescription, WrongDescription };

struct JudgeRequest {
  std::string question;
  std::string reference_answer;
  std::optional<std::string> gold_error;
  std::string predicted_localization;
  std::string template_id = "loc-judge-v1";
};

struct JudgeVerdict {
  Verdict verdict = Verdict::WrongDescription;
  std::string raw_reply;
  std::chrono::milliseconds latency{0};
  std::string template_id;
};

class Judge {
 public:
  virtual ~Judge() = default;
  virtual JudgeVerdict judge(const JudgeRequest& request) = 0;
  /// Upper bound on concurrent judge() calls the implementation accepts.
  virtual std::size_t max_in_flight() const { return 1; }
};

// ---------------------------------------------------------------------------
// Prompt template

inline constexpr std::string_view kLocJudgeV1 =
    "You are grading an automatic math grader.\n"
    "Decide whether the PREDICTED error localization correctly identifies or describes "
    "the error in the student's answer, given the GOLD error description.\n\n"
    "Question:\n{question}\n\n"
    "Reference answer:\n{reference_answer}\n\n"
    "Gold error description:\n{gold_error}\n\n"
    "Predicted error localization:\n{predicted_localization}\n\n"
    "Reason briefly, then end your reply with exactly one line of the form\n"
    "Final answer: YES\n"
    "or\n"
    "Final answer: NO";

inline std::string render_prompt(const JudgeRequest& r) {
  if (r.template_id != "loc-judge-v1") {
    throw UsageError("unknown judge template id: " + r.template_id);
  }
  std::string out(kLocJudgeV1);
  auto fill = [&out](std::string_view key, const std::string& value) {
    const std::string needle = "{" + std::string(key) + "}";
    if (auto pos = out.find(needle); pos != std::string::npos) out.replace(pos, needle.size(), value);
  };
  fill("question", r.question);
  fill("reference_answer", r.reference_answer);
  fill("gold_error", r.gold_error.value_or("(none)"));
  fill("predicted_localization", r.predicted_localization);
  return out;
}

/// Reads the verdict from the last "Final answer: YES|NO" marker
/// (case-insensitive), scanning from the end of the reply.
inline Verdict extract_verdict(std::string_view reply) {
  std::string lower(reply);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  static constexpr std::string_view marker = "final answer:";
  std::size_t pos = lower.rfind(marker);
  while (pos != std::string::npos) {
    std::size_t i = pos + marker.size();
    while (i < lower.size() && (lower[i] == ' ' || lower[i] == '\t' || lower[i] == '*')) ++i;
    const std::string_view rest = std::string_view(lower).substr(i);
    if (rest.starts_with("yes")) return Verdict::CorrectDescription;
    if (rest.starts_with("no")) return Verdict::WrongDescription;
    if (pos == 0) break;
    pos = lower.rfind(marker, pos - 1);
  }
  throw UnparseableVerdict("judge reply has no \"Final answer: YES|NO\" line", std::string(reply));
}

// ---------------------------------------------------------------------------
// Stub

/// Lowercases, drops whitespace, and peels parentheses that wrap the whole
/// expression.
inline std::string normalize_localization(std::string_view text) {
  std::string out;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  auto wraps_whole = [](const std::string& s) {
    if (s.size() < 2 || s.front() != '(' || s.back() != ')') return false;
    int depth = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '(') ++depth;
      if (s[i] == ')') --depth;
      if (depth == 0 && i + 1 < s.size()) return false;
    }
    return true;
  };
  while (wraps_whole(out)) out = out.substr(1, out.size() - 2);
  return out;
}

class StubJudge final : public Judge {
 public:
  JudgeVerdict judge(const JudgeRequest& request) override {
    const auto start = std::chrono::steady_clock::now();
    const bool match = normalize_localization(request.predicted_localization) ==
                       normalize_localization(request.gold_error.value_or(""));
    JudgeVerdict v;
    v.verdict = match ? Verdict::CorrectDescription : Verdict::WrongDescription;
    v.raw_reply = match ? "Final answer: YES" : "Final answer: NO";
    v.template_id = request.template_id;
    v.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - start);
    return v;
  }
  std::size_t max_in_flight() const override { return 64; }
};

// ---------------------------------------------------------------------------
// Remote

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

struct RemoteJudgeConfig {
  std::string endpoint;  // e.g. https://api.example.com/v1
  std::string model;
  /// Name of the environment variable holding the API key.
  std::string api_key_env = "GRADEKIT_JUDGE_API_KEY";
  std::chrono::milliseconds timeout{120000};
  std::size_t max_in_flight = 4;
  int max_attempts = 3;
  std::chrono::milliseconds backoff{500};
  /// Optional on-disk cache of raw replies keyed by request hash.
  std::optional<std::filesystem::path> cache_dir;
};

class RemoteJudge final : public Judge {
 public:
  explicit RemoteJudge(RemoteJudgeConfig cfg)
      : cfg_(std::move(cfg)), slots_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, cfg_.max_in_flight))) {
    if (cfg_.endpoint.empty() || cfg_.model.empty()) {
      throw UsageError("remote judge needs an endpoint URL and a model name");
    }
    if (const char* key = std::getenv(cfg_.api_key_env.c_str())) api_key_ = key;
    if (cfg_.cache_dir) std::filesystem::create_directories(*cfg_.cache_dir);
  }

  JudgeVerdict judge(const JudgeRequest& request) override {
    const std::string prompt = render_prompt(request);
    const auto start = std::chrono::steady_clock::now();
    JudgeVerdict v;
    v.template_id = request.template_id;
    v.raw_reply = cached_or_fetch(prompt, request.template_id);
    v.verdict = extract_verdict(v.raw_reply);
    v.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - start);
    return v;
  }

  std::size_t max_in_flight() const override { return std::max<std::size_t>(1, cfg_.max_in_flight); }

 private:
  std::string cached_or_fetch(const std::string& prompt, const std::string& template_id) {
    std::optional<std::filesystem::path> cache_file;
    if (cfg_.cache_dir) {
      cache_file = *cfg_.cache_dir / (sha256_hex(cfg_.model + '\n' + template_id + '\n' + prompt) + ".txt");
      if (std::ifstream in(*cache_file, std::ios::binary); in) {
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
      }
    }
    std::string reply = fetch(prompt);
    if (cache_file) {
      std::ofstream out(*cache_file, std::ios::binary);
      out << reply;
    }
    return reply;
  }

  std::string fetch(const std::string& prompt) {
    const nlohmann::json body{
        {"model", cfg_.model},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
        {"temperature", 0}};

    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};

    std::string last_error;
    auto delay = cfg_.backoff;
    for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
      if (attempt > 1) {
        std::this_thread::sleep_for(delay);
        delay *= 2;
      }
      http::Response res;
      try {
        res = http::post_json(cfg_.endpoint, "/chat/completions", body, api_key_, cfg_.timeout);
      } catch (const http::TransportError& e) {
        last_error = e.what();
        continue;
      }
      if (res.status == 429 || res.status >= 500) {
        last_error = "HTTP " + std::to_string(res.status);
        continue;
      }
      if (res.status != 200) {
        throw JudgeUnavailable("judge endpoint returned HTTP " + std::to_string(res.status));
      }
      try {
        return nlohmann::json::parse(res.body)
            .at("choices")
            .at(0)
            .at("message")
            .at("content")
            .get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw UnparseableVerdict(std::string("malformed chat-completions payload: ") + e.what(), res.body);
      }
    }
    throw JudgeUnavailable("judge unreachable after " + std::to_string(cfg_.max_attempts) +
                           " attempts: " + last_error);
  }

  RemoteJudgeConfig cfg_;
  std::string api_key_;
  std::counting_semaphore<> slots_;
};

}  // namespace gradekit::judge
