// SPDX-License-Identifier: Apache-2.0

#include "gradekit/cli.hpp"

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kData = GRADEKIT_TEST_DATA_DIR;
const std::string kTraces = std::string(GRADEKIT_SOURCE_DIR) + "/data/traces";

int gk(std::vector<std::string> args) {
  args.insert(args.begin(), "gradekit");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return gradekit::cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("gradekit-cli-" + std::to_string(::getpid()) + "-" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

/// Runs the installed binary through the shell; returns {exit code, stderr+stdout}.
std::pair<int, std::string> run_binary(const std::string& args) {
  const std::string cmd = std::string(GRADEKIT_CLI_PATH) + " " + args + " 2>&1";
  FILE* p = ::popen(cmd.c_str(), "r");
  std::string out;
  char buf[512];
  while (std::fgets(buf, sizeof buf, p)) out += buf;
  const int status = ::pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

void expect_same_files(const fs::path& a, const fs::path& b, const std::string& skip) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    const auto name = e.path().filename().string();
    if (name == skip) continue;
    ++n;
    EXPECT_EQ(slurp(e.path()), slurp(b / name)) << name;
  }
  EXPECT_GT(n, 0u);
}

}  // namespace

TEST(CliBinary, UnknownSubcommandIsUsageError) {
  const auto [code, out] = run_binary("frobnicate");
  EXPECT_EQ(code, 1);
  EXPECT_NE(out.find("Subcommands:"), std::string::npos) << out;
  EXPECT_NE(out.find("evaluate"), std::string::npos);
}

TEST(CliBinary, MissingSubcommandAndHelp) {
  EXPECT_EQ(run_binary("").first, 1);
  EXPECT_EQ(run_binary("--help").first, 0);
  EXPECT_EQ(run_binary("evaluate --help").first, 0);
  EXPECT_EQ(run_binary("evaluate --no-such-flag 1").first, 1);
}

TEST_F(CliTest, SynthCanvasIsDeterministic) {
  const std::vector<std::string> common{"synth-canvas", "--traces", kTraces, "--count", "3", "--seed", "7"};
  auto a = common, b = common;
  a.insert(a.end(), {"--out", path("a")});
  b.insert(b.end(), {"--out", path("b")});
  ASSERT_EQ(gk(a), 0);
  ASSERT_EQ(gk(b), 0);
  expect_same_files(path("a"), path("b"), "config.resolved.toml");
  EXPECT_TRUE(fs::exists(path("a") + "/canvas-000002.png"));
  EXPECT_TRUE(fs::exists(path("a") + "/canvas-000002.txt"));

  // Manifest rows point at existing files and carry one source per box.
  std::ifstream manifest(path("a") + "/manifest.jsonl");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(manifest, line)) {
    const auto j = json::parse(line);
    ++rows;
    EXPECT_TRUE(fs::exists(path("a") + "/" + j["image"].get<std::string>()));
    std::ifstream labels(path("a") + "/" + j["labels"].get<std::string>());
    std::size_t label_lines = 0;
    for (std::string l; std::getline(labels, l);) ++label_lines;
    EXPECT_EQ(label_lines, j["boxes"].size());
    for (const auto& box : j["boxes"]) EXPECT_TRUE(box.contains("source_id"));
  }
  EXPECT_EQ(rows, 3u);

  // A different seed changes the output.
  auto c = common;
  c[6] = "8";
  c.insert(c.end(), {"--out", path("c")});
  ASSERT_EQ(gk(c), 0);
  EXPECT_NE(slurp(path("a") + "/manifest.jsonl"), slurp(path("c") + "/manifest.jsonl"));
}

TEST_F(CliTest, ResolvedConfigReproducesRun) {
  ASSERT_EQ(gk({"synth-canvas", "--traces", kTraces, "--count", "2", "--seed", "11", "--rotation", "25", "--padding",
                "3", "--out", path("first")}),
            0);
  ASSERT_EQ(gk({"synth-canvas", "--config", path("first") + "/config.resolved.toml", "--out", path("again")}), 0);
  expect_same_files(path("first"), path("again"), "config.resolved.toml");
}

TEST_F(CliTest, ConfigKeysAreCheckedAndFlagsWin) {
  {
    std::ofstream cfg(path("bad.toml"));
    cfg << "steps = 3\nlearnin-rate = 1.0\n";
  }
  EXPECT_EQ(gk({"grpo-train", "--config", path("bad.toml"), "--out", path("run")}), 1);
  {
    std::ofstream cfg(path("sec.toml"));
    cfg << "[env]\nprompts = 2\nbogus = 1\n";
  }
  EXPECT_EQ(gk({"grpo-train", "--config", path("sec.toml"), "--out", path("run")}), 1);
  {
    std::ofstream cfg(path("ok.toml"));
    cfg << "steps = 50\nseed = 5\n\n[env]\nprompts = 2\n";
  }
  ASSERT_EQ(gk({"grpo-train", "--config", path("ok.toml"), "--steps", "4", "--out", path("run")}), 0);
  const std::string resolved = slurp(path("run") + "/config.resolved.toml");
  EXPECT_NE(resolved.find("steps = 4\n"), std::string::npos) << resolved;
  EXPECT_NE(resolved.find("seed = 5\n"), std::string::npos);
  EXPECT_NE(resolved.find("prompts = 2\n"), std::string::npos);
}

TEST_F(CliTest, GrpoTrainOutputs) {
  const std::vector<std::string> args{"grpo-train", "--steps", "6", "--seed", "2", "--env.prompts", "4"};
  auto a = args, b = args;
  a.insert(a.end(), {"--out", path("a")});
  b.insert(b.end(), {"--out", path("b")});
  ASSERT_EQ(gk(a), 0);
  ASSERT_EQ(gk(b), 0);
  expect_same_files(path("a"), path("b"), "config.resolved.toml");

  std::ifstream csv(path("a") + "/metrics.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "step,mean_reward,mean_kl,validity_rate");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    EXPECT_EQ(line.rfind(std::to_string(rows) + ",", 0), 0u) << line;
    EXPECT_EQ(line.substr(line.rfind(',') + 1), "1.0");  // constrained rollouts
    ++rows;
  }
  EXPECT_EQ(rows, 6u);
  const auto policy = gradekit::grpo::load_snapshot(path("a") + "/policy.bin");
  EXPECT_EQ(policy.shape().num_prompts, 4u);
}

TEST_F(CliTest, EvaluateMatchesGolden) {
  ASSERT_EQ(gk({"evaluate", "--gold", kData + "/eval_gold.jsonl", "--pred", kData + "/eval_pred.jsonl", "--judge", "stub",
                "--report", path("report.json"), "--records", path("records.jsonl")}),
            0);
  std::ifstream golden(kData + "/eval_report.golden.json");
  EXPECT_EQ(json::parse(slurp(path("report.json"))), json::parse(golden));
  EXPECT_TRUE(fs::exists(path("report.json.config.toml")));

  std::ifstream recs(path("records.jsonl"));
  std::size_t n = 0;
  for (std::string line; std::getline(recs, line); ++n) {
    const auto r = json::parse(line);
    if (r["pred_correctness"] == "correct") {
      EXPECT_EQ(r["el_verdict"], "not_evaluated");
    }
  }
  EXPECT_EQ(n, 20u);
}

TEST_F(CliTest, EvaluateCountsJudgeFailures) {
  // Nothing listens on port 1: every judge call fails and is excluded. Seven
  // fixture records need the judge (a real localization of a wrong answer).
  ASSERT_EQ(gk({"evaluate", "--gold", kData + "/eval_gold.jsonl", "--pred", kData + "/eval_pred.jsonl", "--judge",
                "remote", "--judge.endpoint", "http://127.0.0.1:1/v1", "--judge.model", "m", "--judge.max-attempts", "1",
                "--judge.timeout-ms", "2000", "--report", path("report.json")}),
            0);
  const auto report = json::parse(slurp(path("report.json")));
  EXPECT_EQ(report["records"], 20);
  EXPECT_EQ(report["excluded_judge_failures"], 7);
  EXPECT_EQ(report["evaluated"], 13);
}

TEST_F(CliTest, EvaluateRejectsBadInput) {
  {
    std::ofstream pred(path("pred.jsonl"));
    pred << R"({"id":"r01","response":"no tags here"})" << "\n";
  }
  EXPECT_EQ(gk({"evaluate", "--gold", kData + "/eval_gold.jsonl", "--pred", path("pred.jsonl"), "--report",
                path("r.json")}),
            1);
  EXPECT_EQ(gk({"evaluate", "--gold", path("missing.jsonl"), "--pred", path("pred.jsonl"), "--report", path("r.json")}), 1);
  EXPECT_EQ(gk({"evaluate", "--pred", path("pred.jsonl"), "--report", path("r.json")}), 1);
}

TEST_F(CliTest, RuntimeFailureExitsTwo) {
  EXPECT_EQ(gk({"synth-canvas", "--traces", kTraces, "--count", "1", "--out", "/proc/gradekit-cannot-write"}), 2);
}

TEST_F(CliTest, RepairAndScore) {
  {
    std::ofstream in(path("in.jsonl"));
    in << json{{"id", "long"}, {"prompt", "P: "}, {"output", "<think>First I check the sum. Then I che"}}.dump() << "\n";
    in << json{{"id", "short"},
               {"prompt", "P: "},
               {"output", "<think>ok</think>\n\n<correctness>correct</correctness><localization>None</localization>"}}
              .dump()
       << "\n";
  }
  ASSERT_EQ(gk({"repair", "--input", path("in.jsonl"), "--budget", "5", "--out", path("out.jsonl")}), 0);
  std::ifstream out(path("out.jsonl"));
  std::string line;
  std::getline(out, line);
  auto r = json::parse(line);
  EXPECT_EQ(r["output"], "<think>First I check the sum.</think>\n\n<correctness>correct</correctness>"
                         "<localization>None</localization>");
  EXPECT_TRUE(r["repaired"].get<bool>());
  std::getline(out, line);
  EXPECT_FALSE(json::parse(line)["repaired"].get<bool>());

  // A stub completion outside the grammar cannot repair anything.
  EXPECT_EQ(gk({"repair", "--input", path("in.jsonl"), "--budget", "5", "--generator.completion", "maybe", "--out",
                path("bad.jsonl")}),
            2);

  ASSERT_EQ(gk({"score", "--instances", kData + "/eval_gold.jsonl", "--responses", kData + "/eval_pred.jsonl", "--out",
                path("scores.jsonl")}),
            0);
  std::ifstream scores(path("scores.jsonl"));
  std::size_t n = 0;
  while (std::getline(scores, line)) {
    const auto s = json::parse(line);
    ++n;
    EXPECT_DOUBLE_EQ(s["total"].get<double>(), s["match"].get<double>() + s["loc"].get<double>() +
                                                   s["len"].get<double>() + s["cos"].get<double>() +
                                                   s["rep"].get<double>());
  }
  EXPECT_EQ(n, 20u);
}
