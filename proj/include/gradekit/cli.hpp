// SPDX-License-Identifier: Apache-2.0
//
// The `gradekit` command line: synth-canvas, repair, score, grpo-train and
// evaluate. Each subcommand accepts `--config file.toml`; keys are the long
// flag names, dotted names live in a [section] of the same name. Flags given
// on the command line win over the file, unknown keys are rejected, and every
// run writes the fully resolved configuration next to its outputs.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gradekit/canvas.hpp"
#include "gradekit/errors.hpp"
#include "gradekit/eval.hpp"
#include "gradekit/grpo.hpp"
#include "gradekit/io.hpp"
#include "gradekit/judge.hpp"
#include "gradekit/png.hpp"
#include "gradekit/random.hpp"
#include "gradekit/repair.hpp"
#include "gradekit/reward.hpp"
#include "gradekit/toyenv.hpp"
#include "gradekit/trace.hpp"

namespace gradekit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

/// Options of one subcommand, bound to typed variables, loadable from a TOML
/// file and printable as one.
class Settings {
 public:
  explicit Settings(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "TOML file with option values (flags override it)");
  }

  template <typename T>
  CLI::Option* add(const std::string& key, T& var, const std::string& help) {
    CLI::Option* o = app_->add_option("--" + key, var, help)->capture_default_str();
    params_.push_back({key, o, [&var] { return to_toml(var); }});
    return o;
  }

  /// Applies the config file (if any) to options not given as flags.
  void load_config() const {
    if (config_path_.empty()) return;
    std::ifstream in(config_path_);
    if (!in) throw UsageError("cannot open config file " + config_path_);
    std::vector<CLI::ConfigItem> items;
    try {
      items = CLI::ConfigTOML().from_config(in);
    } catch (const CLI::Error& e) {
      throw UsageError(config_path_ + ": " + e.what());
    }
    for (const auto& item : items) {
      if (item.name == "++" || item.name == "--") continue;  // section markers
      std::string key;
      for (const auto& p : item.parents) key += p + ".";
      key += item.name;
      const auto it = std::find_if(params_.begin(), params_.end(), [&](const Param& p) { return p.key == key; });
      if (it == params_.end()) throw UsageError(config_path_ + ": unknown key \"" + key + "\"");
      if (it->option->count() > 0) continue;
      try {
        it->option->add_result(item.inputs);
        it->option->run_callback();
      } catch (const CLI::Error& e) {
        throw UsageError(config_path_ + ": key \"" + key + "\": " + e.what());
      }
    }
  }

  std::string resolved_toml() const {
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
    for (const auto& p : params_) {
      const auto dot = p.key.rfind('.');
      const std::string section = dot == std::string::npos ? "" : p.key.substr(0, dot);
      sections[section].emplace_back(p.key.substr(dot == std::string::npos ? 0 : dot + 1), p.value());
    }
    std::string out = "# gradekit " + app_->get_name() + "\n";
    for (const auto& [section, kv] : sections) {
      if (!section.empty()) out += "\n[" + section + "]\n";
      for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    }
    return out;
  }

  void write_resolved(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << resolved_toml();
  }

 private:
  struct Param {
    std::string key;
    CLI::Option* option;
    std::function<std::string()> value;
  };

  static std::string to_toml(const std::string& s) { return json(s).dump(); }
  static std::string to_toml(bool b) { return b ? "true" : "false"; }
  static std::string to_toml(double d) { return format_double(d); }
  template <typename T>
  static std::string to_toml(T v) {
    return std::to_string(v);
  }

  CLI::App* app_;
  std::string config_path_;
  std::vector<Param> params_;
};

inline void require(const std::string& value, const std::string& key) {
  if (value.empty()) throw UsageError("--" + key + " is required (as a flag or in the config file)");
}

// ---------------------------------------------------------------------------
// Shared option groups

struct JudgeSettings {
  std::string kind = "stub";
  std::string endpoint;
  std::string model;
  std::string api_key_env = "GRADEKIT_JUDGE_API_KEY";
  std::int64_t timeout_ms = 120000;
  std::size_t max_in_flight = 4;
  int max_attempts = 3;
  std::string cache_dir;

  void bind(Settings& s) {
    s.add("judge", kind, "Localization judge")->check(CLI::IsMember({"stub", "remote"}));
    s.add("judge.endpoint", endpoint, "Base URL of an OpenAI-compatible API, e.g. http://host:8000/v1");
    s.add("judge.model", model, "Judge model name");
    s.add("judge.api-key-env", api_key_env, "Environment variable holding the judge API key");
    s.add("judge.timeout-ms", timeout_ms, "Per-request timeout")->check(CLI::PositiveNumber);
    s.add("judge.max-in-flight", max_in_flight, "Concurrent judge requests")->check(CLI::PositiveNumber);
    s.add("judge.max-attempts", max_attempts, "Attempts per request")->check(CLI::PositiveNumber);
    s.add("judge.cache-dir", cache_dir, "Optional directory caching raw judge replies");
  }

  std::unique_ptr<judge::Judge> make() const {
    if (kind == "stub") return std::make_unique<judge::StubJudge>();
    judge::RemoteJudgeConfig cfg;
    cfg.endpoint = endpoint;
    cfg.model = model;
    cfg.api_key_env = api_key_env;
    cfg.timeout = std::chrono::milliseconds(timeout_ms);
    cfg.max_in_flight = max_in_flight;
    cfg.max_attempts = max_attempts;
    if (!cache_dir.empty()) cfg.cache_dir = cache_dir;
    return std::make_unique<judge::RemoteJudge>(cfg);
  }
};

struct RewardSettings {
  reward::RewardConfig cfg;
  std::string on_judge_failure = "propagate";

  void bind(Settings& s, bool with_max_length = true) {
    if (with_max_length) {
      s.add("reward.cos-max-length", cfg.cosine.max_length, "L_max of the cosine length reward (tokens)")
          ->check(CLI::PositiveNumber);
    }
    s.add("reward.cos-min-correct", cfg.cosine.min_correct, "Cosine reward at L_max for a matching label");
    s.add("reward.cos-max-correct", cfg.cosine.max_correct, "Cosine reward at length 0 for a matching label");
    s.add("reward.cos-min-wrong", cfg.cosine.min_wrong, "Cosine reward at length 0 for a wrong label");
    s.add("reward.cos-max-wrong", cfg.cosine.max_wrong, "Cosine reward at L_max for a wrong label");
    s.add("reward.rep-ngram", cfg.repetition_ngram, "n of the repetition penalty")->check(CLI::PositiveNumber);
    s.add("reward.rep-max-penalty", cfg.repetition_max_penalty, "Largest repetition penalty magnitude");
    s.add("reward.on-judge-failure", on_judge_failure, "propagate: abort the run; zero: score r_loc as 0")
        ->check(CLI::IsMember({"propagate", "zero"}));
  }

  reward::RewardConfig resolved() const {
    reward::RewardConfig r = cfg;
    r.on_judge_failure =
        on_judge_failure == "zero" ? reward::JudgeFailurePolicy::ScoreZero : reward::JudgeFailurePolicy::Propagate;
    return r;
  }
};

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first_error) first_error = std::current_exception();
        next = n;
      }
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);
}

inline fs::path sibling_config(const fs::path& out_file) { return fs::path(out_file.string() + ".config.toml"); }

// ---------------------------------------------------------------------------
// Subcommands

struct Command {
  CLI::App* app = nullptr;
  std::unique_ptr<Settings> settings;
  std::function<int()> run;
};

struct SynthCanvasCmd {
  std::string traces;
  std::size_t count = 1;
  int padding = 8;
  double rotation = 10.0;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t min_expressions = 2;
  std::size_t max_expressions = 5;
  int class_id = 0;
  canvas::RenderOptions render;

  void bind(Settings& s) {
    s.add("traces", traces, "Directory of stroke-trace JSON files");
    s.add("count", count, "Number of canvases")->check(CLI::PositiveNumber);
    s.add("padding", padding, "Vertical padding P between expressions (px)")->check(CLI::NonNegativeNumber);
    s.add("rotation", rotation, "Rotation bound theta in degrees, [0, 90)");
    s.add("seed", seed, "Random seed");
    s.add("out", out, "Output directory");
    s.add("min-expressions", min_expressions, "Fewest expressions per canvas")->check(CLI::PositiveNumber);
    s.add("max-expressions", max_expressions, "Most expressions per canvas")->check(CLI::PositiveNumber);
    s.add("class-id", class_id, "Class id written in label lines")->check(CLI::NonNegativeNumber);
    s.add("render.height", render.target_height, "Ink height of a rendered trace (px)")->check(CLI::PositiveNumber);
    s.add("render.pen-width", render.pen_width, "Pen width (px)")->check(CLI::PositiveNumber);
    s.add("render.margin", render.margin, "White margin around a rendered trace (px)")->check(CLI::NonNegativeNumber);
  }

  int run(const Settings& s) const {
    require(traces, "traces");
    require(out, "out");
    if (min_expressions > max_expressions) throw UsageError("min-expressions exceeds max-expressions");
    const auto corpus = canvas::load_trace_dir(traces);
    if (corpus.empty()) throw UsageError("no *.json traces in " + traces);
    std::vector<canvas::RenderedExpression> rendered;
    for (const auto& t : corpus) rendered.push_back(canvas::render_trace(t, render));

    fs::create_directories(out);
    std::vector<json> manifest;
    for (std::size_t i = 0; i < count; ++i) {
      Rng rng(derive_seed(seed, i));
      const auto k = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(min_expressions),
                                                          static_cast<std::int64_t>(max_expressions)));
      canvas::CanvasSpec spec;
      spec.padding = padding;
      spec.rotation_bound = rotation;
      spec.seed = rng();
      json boxes = json::array();
      for (std::size_t e = 0; e < k; ++e) {
        const auto pick = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(corpus.size()) - 1));
        spec.expressions.push_back(rendered[pick]);
        boxes.push_back(json{{"source_id", corpus[pick].id}, {"text", corpus[pick].text}});
      }
      const auto result = canvas::synthesize_canvas(spec);
      char stem[32];
      std::snprintf(stem, sizeof stem, "canvas-%06zu", i);
      const std::string image = std::string(stem) + ".png";
      const std::string labels = std::string(stem) + ".txt";
      canvas::write_png(fs::path(out) / image, result.canvas);
      {
        std::ofstream lf(fs::path(out) / labels);
        if (!lf) throw Error("cannot write labels for " + image);
        lf << canvas::emit_obb_labels(result.boxes, result.canvas.width, result.canvas.height, class_id);
      }
      for (std::size_t b = 0; b < result.placements.size(); ++b) {
        boxes[b]["angle"] = result.placements[b].angle;
      }
      manifest.push_back({{"image", image},
                          {"labels", labels},
                          {"width", result.canvas.width},
                          {"height", result.canvas.height},
                          {"boxes", boxes}});
    }
    io::write_jsonl(fs::path(out) / "manifest.jsonl", manifest);
    s.write_resolved(fs::path(out) / "config.resolved.toml");
    std::cerr << "wrote " << count << " canvases to " << out << "\n";
    return 0;
  }
};

struct RepairCmd {
  std::string input;
  std::size_t budget = 4096;
  std::string out;
  std::string generator = "stub";
  std::string completion = "correct</correctness><localization>None</localization>";
  std::string endpoint;
  std::string model;
  std::string api_key_env = "GRADEKIT_GENERATOR_API_KEY";
  std::int64_t timeout_ms = 120000;
  double temperature = 0.0;
  std::size_t completion_max_tokens = 256;
  int max_attempts = 3;
  std::size_t threads = 1;

  void bind(Settings& s) {
    s.add("input", input, "JSONL records {id, prompt, output}");
    s.add("budget", budget, "Token budget M")->check(CLI::PositiveNumber);
    s.add("out", out, "Output JSONL");
    s.add("threads", threads, "Parallel repairs")->check(CLI::PositiveNumber);
    s.add("generator", generator, "stub: fixed completion; remote: OpenAI-compatible completions endpoint")
        ->check(CLI::IsMember({"stub", "remote"}));
    s.add("generator.completion", completion, "Completion returned by the stub generator");
    s.add("generator.endpoint", endpoint, "Base URL of the completions endpoint");
    s.add("generator.model", model, "Model name");
    s.add("generator.api-key-env", api_key_env, "Environment variable holding the endpoint API key");
    s.add("generator.timeout-ms", timeout_ms, "Per-request timeout")->check(CLI::PositiveNumber);
    s.add("generator.temperature", temperature, "Sampling temperature");
    s.add("generator.max-tokens", completion_max_tokens, "Token cap of the constrained completion")
        ->check(CLI::PositiveNumber);
    s.add("generator.max-attempts", max_attempts, "Completion attempts before giving up")->check(CLI::PositiveNumber);
  }

  int run(const Settings& s) const {
    require(input, "input");
    require(out, "out");
    std::unique_ptr<repair::Generator> gen;
    if (generator == "stub") {
      gen = std::make_unique<repair::ScriptedGenerator>(completion);
    } else {
      if (endpoint.empty() || model.empty()) throw UsageError("remote generator needs generator.endpoint and generator.model");
      repair::RemoteGeneratorConfig cfg;
      cfg.endpoint = endpoint;
      cfg.model = model;
      if (const char* key = std::getenv(api_key_env.c_str())) cfg.api_key = key;
      cfg.timeout = std::chrono::milliseconds(timeout_ms);
      cfg.temperature = temperature;
      gen = std::make_unique<repair::RemoteGenerator>(cfg);
    }
    std::vector<repair::RepairJob> jobs;
    for (const auto& j : io::read_jsonl(input)) {
      const std::string id = io::field<std::string>(j, "id", "record");
      jobs.push_back({id, io::field<std::string>(j, "prompt", "record " + id),
                      io::field<std::string>(j, "output", "record " + id)});
    }
    repair::RepairOptions opt;
    opt.completion_max_tokens = completion_max_tokens;
    opt.max_attempts = max_attempts;
    const auto results = repair::repair_all(jobs, repair::TokenBudget(budget), *gen, opt, threads);

    std::vector<json> rows;
    std::size_t failed = 0;
    std::size_t repaired = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
      json row{{"id", results[i].id}, {"prompt", jobs[i].prompt}};
      if (results[i].outcome) {
        row["output"] = results[i].outcome->text;
        row["repaired"] = results[i].outcome->repaired;
        row["attempts"] = results[i].outcome->attempts;
        repaired += results[i].outcome->repaired;
      } else {
        row["output"] = nullptr;
        row["error"] = results[i].error;
        ++failed;
      }
      rows.push_back(std::move(row));
    }
    io::write_jsonl(out, rows);
    s.write_resolved(sibling_config(out));
    std::cerr << "repaired " << repaired << " of " << results.size() << " records";
    if (failed) std::cerr << "; " << failed << " failed (see \"error\" fields)";
    std::cerr << "\n";
    return failed ? 2 : 0;
  }
};

struct ScoreCmd {
  std::string instances;
  std::string responses;
  std::string out;
  JudgeSettings judge;
  RewardSettings reward;

  void bind(Settings& s) {
    s.add("instances", instances, "Gold instances JSONL");
    s.add("responses", responses, "Responses JSONL {id, response}");
    s.add("out", out, "Per-response reward breakdown JSONL");
    judge.bind(s);
    reward.bind(s);
  }

  int run(const Settings& s) const {
    require(instances, "instances");
    require(responses, "responses");
    require(out, "out");
    const auto gold = io::read_instances(instances);
    std::map<std::string, const reward::GradingInstance*> by_id;
    for (const auto& g : gold) by_id[g.id] = &g;
    const auto rows_in = io::read_jsonl(responses);
    std::vector<std::pair<std::string, std::string>> items;
    for (const auto& j : rows_in) {
      const std::string id = io::field<std::string>(j, "id", "response");
      if (!by_id.count(id)) throw UsageError("response " + id + " has no gold instance");
      items.emplace_back(id, io::field<std::string>(j, "response", "response " + id));
    }
    auto jd = judge.make();
    const auto cfg = reward.resolved();
    std::vector<json> rows(items.size());
    parallel_for(items.size(), jd->max_in_flight(), [&](std::size_t i) {
      const auto& [id, text] = items[i];
      const auto tokens = repair::whitespace_tokens(text);
      reward::RewardBreakdown b;
      bool malformed = false;
      try {
        const auto parsed = grammar::parse_response(text);
        b = reward::composite_reward(parsed, tokens, *by_id.at(id), *jd, cfg);
      } catch (const MalformedResponse&) {
        malformed = true;
        b = reward::malformed_reward(tokens, cfg);
      }
      rows[i] = json{{"id", id},     {"match", b.match}, {"loc", b.loc},     {"len", b.len},
                     {"cos", b.cos}, {"rep", b.rep},     {"total", b.total}, {"malformed", malformed}};
    });
    io::write_jsonl(out, rows);
    s.write_resolved(sibling_config(out));
    std::cerr << "scored " << rows.size() << " responses\n";
    return 0;
  }
};

struct GrpoTrainCmd {
  grpo::GrpoConfig grpo;
  grpo::ToyEnvConfig env;
  std::uint32_t order = 2;
  std::string out;
  RewardSettings reward;

  void bind(Settings& s) {
    s.add("seed", grpo.seed, "Seed for instances, sampling and updates");
    s.add("out", out, "Run directory");
    s.add("steps", grpo.steps, "Training steps")->check(CLI::PositiveNumber);
    s.add("group-size", grpo.group_size, "Responses per prompt |G|");
    s.add("clip-eps", grpo.clip_eps, "Clipping range epsilon");
    s.add("kl-coeff", grpo.kl_coeff, "KL penalty beta");
    s.add("learning-rate", grpo.learning_rate, "Gradient ascent step size");
    s.add("momentum", grpo.momentum, "Heavy-ball momentum, 0 disables");
    s.add("eps-std", grpo.eps_std, "Groups with reward std below this get zero advantages");
    s.add("inner-epochs", grpo.inner_epochs, "Gradient steps per sampled batch")->check(CLI::PositiveNumber);
    s.add("env.prompts", env.num_prompts, "Toy grading instances")->check(CLI::PositiveNumber);
    s.add("env.max-len", env.max_len, "Symbols per response including end-of-sequence");
    s.add("env.constrained", env.constrained, "Mask rollouts with the response grammar");
    s.add("env.order", order, "Context length of the tabular policy (symbols)")->check(CLI::Range(0, 3));
    reward.bind(s, /*with_max_length=*/false);
  }

  int run(const Settings& s) {
    require(out, "out");
    grpo::check_config(grpo);
    env.seed = grpo.seed;
    env.reward = reward.resolved();
    const grpo::ToyGradingEnv environment(env);
    grpo::ToyPolicy policy(environment.policy_shape(order));

    fs::create_directories(out);
    std::ofstream csv(fs::path(out) / "metrics.csv");
    if (!csv) throw Error("cannot write metrics.csv in " + out);
    csv << "step,mean_reward,mean_kl,validity_rate\n";
    grpo::train(policy, environment, grpo, [&](const grpo::StepMetrics& m) {
      csv << m.step << ',' << format_double(m.mean_reward) << ',' << format_double(m.mean_kl) << ','
          << format_double(m.validity_rate) << '\n';
    });
    csv.close();
    grpo::save_snapshot(fs::path(out) / "policy.bin", policy);
    s.write_resolved(fs::path(out) / "config.resolved.toml");
    std::cerr << "trained " << grpo.steps << " steps; outputs in " << out << "\n";
    return 0;
  }
};

struct EvaluateCmd {
  std::string gold;
  std::string pred;
  std::string report;
  std::string records;
  std::string positive_class = "incorrect";
  std::string f1_mode = "binary";
  JudgeSettings judge;

  void bind(Settings& s) {
    s.add("gold", gold, "Gold instances JSONL");
    s.add("pred", pred, "Predictions JSONL {id, response}");
    s.add("report", report, "Metric report JSON");
    s.add("records", records, "Optional per-record JSONL");
    s.add("positive-class", positive_class, "Positive class for error-detection F1")
        ->check(CLI::IsMember({"incorrect", "correct"}));
    s.add("f1-mode", f1_mode, "binary: positive class only; macro: mean over both classes")
        ->check(CLI::IsMember({"binary", "macro"}));
    judge.bind(s);
  }

  int run(const Settings& s) const {
    require(gold, "gold");
    require(pred, "pred");
    require(report, "report");
    const auto instances = io::read_instances(gold);
    std::vector<eval::Prediction> preds;
    for (const auto& j : io::read_jsonl(pred)) preds.push_back(io::prediction_from_json(j));
    auto jd = judge.make();
    const auto recs = eval::cascade_evaluate(instances, preds, *jd);
    eval::MetricOptions opt;
    opt.positive_class = positive_class == "correct" ? grammar::Correctness::Correct : grammar::Correctness::Incorrect;
    opt.f1_mode = f1_mode == "macro" ? eval::F1Mode::Macro : eval::F1Mode::Binary;
    const auto metrics = eval::compute_metrics(recs, opt);
    const json doc = io::report_to_json(metrics, judge::JudgeRequest{}.template_id);
    io::write_json(report, doc);
    if (!records.empty()) {
      std::vector<json> rows;
      for (const auto& r : recs) rows.push_back(io::record_to_json(r));
      io::write_jsonl(records, rows);
    }
    s.write_resolved(sibling_config(report));
    std::cerr << "ED acc " << doc["ed"]["accuracy"] << " F1 " << doc["ed"]["f1"] << " | EL acc " << doc["el"]["accuracy"]
              << " F1 " << doc["el"]["f1"];
    if (metrics.excluded) std::cerr << " | " << metrics.excluded << " records excluded after judge failures";
    std::cerr << "\n";
    return 0;
  }
};

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, const char* const* argv) {
  CLI::App app{"gradekit: structured grading responses, canvas synthesis, rewards, GRPO and evaluation", "gradekit"};
  app.require_subcommand(1);

  SynthCanvasCmd synth;
  RepairCmd rep;
  ScoreCmd score;
  GrpoTrainCmd train;
  EvaluateCmd evaluate;

  std::vector<Command> commands;
  auto add = [&](const char* name, const char* help, auto& cmd) {
    Command c;
    c.app = app.add_subcommand(name, help);
    c.settings = std::make_unique<Settings>(c.app);
    cmd.bind(*c.settings);
    Settings* settings = c.settings.get();
    c.run = [&cmd, settings] { return cmd.run(*settings); };
    commands.push_back(std::move(c));
  };
  add("synth-canvas", "Compose rendered expressions into rotated multi-line canvases with OBB labels", synth);
  add("repair", "Close budget-truncated generations with a grammar-constrained verdict", rep);
  add("score", "Compute the reward breakdown of responses against gold instances", score);
  add("grpo-train", "Train the toy grading policy with GRPO", train);
  add("evaluate", "Cascaded error detection / localization metrics", evaluate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0 && app.get_subcommands().empty()) std::cerr << "\n" << app.help();
    return code == 0 ? 0 : 1;
  }

  try {
    for (auto& c : commands) {
      if (c.app->parsed()) {
        c.settings->load_config();
        return c.run();
      }
    }
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "gradekit: error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "gradekit: runtime error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace gradekit::cli
