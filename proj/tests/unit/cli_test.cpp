#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "l2rm/io.hpp"

namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result call(std::vector<std::string> args) {
  args.insert(args.begin(), "l2rm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = l2rm::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string trimmed(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == ' ')) s.pop_back();
  return s;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("l2rm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string make_data() {
    const Result r = call({"gen", "--n", "150", "--classes", "5", "--mrate", "0.4", "--seed", "0", "--out",
                           path("ds.jsonl")});
    EXPECT_EQ(r.code, 0) << r.err;
    return trimmed(r.out);
  }

  fs::path dir_;
};

const std::vector<std::string> kShort = {"--preset", "desk", "--warmup-epochs", "1", "--train-epochs", "1",
                                         "--batch-size", "32"};

std::vector<std::string> with_short(std::vector<std::string> args) {
  args.insert(args.end(), kShort.begin(), kShort.end());
  return args;
}

TEST_F(CliTest, GenThenTrainWritesMetrics) {
  const std::string data = make_data();
  EXPECT_EQ(data, path("ds.jsonl"));
  const Result r = call(with_short({"train", "--data", data, "--out", path("run.json")}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(trimmed(r.out), path("run.json"));
  const auto m = l2rm::io::read_json(path("run.json"));
  EXPECT_EQ(m["format"], "l2rm-metrics");
  EXPECT_EQ(m["config"]["optimizer"], "adam");
  EXPECT_EQ(m["config"]["warmup_epochs"], 1);
  EXPECT_EQ(m["epochs"].size(), 2u);
  EXPECT_TRUE(m["final"]["test"].contains("rsum"));
  EXPECT_FALSE(fs::exists(path("run.json.tmp")));
}

TEST_F(CliTest, TrainTwiceIsByteIdentical) {
  const std::string data = make_data();
  ASSERT_EQ(call(with_short({"train", "--data", data, "--out", path("a.json")})).code, 0);
  ASSERT_EQ(call(with_short({"train", "--data", data, "--out", path("b.json")})).code, 0);
  EXPECT_EQ(l2rm::io::read_file(path("a.json")), l2rm::io::read_file(path("b.json")));
}

TEST_F(CliTest, MetricsFileReproducesRun) {
  const std::string data = make_data();
  ASSERT_EQ(call(with_short({"train", "--data", data, "--out", path("a.json"), "--rho", "0.2"})).code, 0);
  ASSERT_EQ(call({"train", "--data", data, "--config", path("a.json"), "--out", path("b.json")}).code, 0);
  EXPECT_EQ(l2rm::io::read_file(path("a.json")), l2rm::io::read_file(path("b.json")));
}

TEST_F(CliTest, CheckpointResumeAndEval) {
  const std::string data = make_data();
  ASSERT_EQ(call(with_short({"train", "--data", data, "--out", path("full.json"), "--checkpoint",
                             path("state.json")})).code,
            0);
  const Result e = call({"eval", "--data", data, "--checkpoint", path("state.json")});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto rec = nlohmann::json::parse(e.out);
  const auto full = l2rm::io::read_json(path("full.json"));
  EXPECT_EQ(rec["rsum"], full["final"]["test"]["rsum"]);

  // Resuming a finished state runs no further epochs and reproduces the final block.
  ASSERT_EQ(call(with_short({"train", "--data", data, "--resume", path("state.json"), "--out",
                             path("again.json")})).code,
            0);
  EXPECT_EQ(l2rm::io::read_json(path("again.json"))["final"], full["final"]);
}

TEST_F(CliTest, AblationArmsSetTheirSwitch) {
  const std::string data = make_data();
  const std::vector<std::pair<std::string, std::pair<std::string, nlohmann::json>>> arms = {
      {"no-cost", {"learned_cost", false}},   {"no-mask", {"positives_masked", false}},
      {"no-partial", {"partial", false}},     {"kl", {"rematch", "kl"}},
      {"infonce", {"rematch", "infonce"}}};
  for (const auto& [arm, expect] : arms) {
    const Result r = call(with_short({"ablate", "--arm", arm, "--data", data, "--out", path(arm + ".json")}));
    ASSERT_EQ(r.code, 0) << arm << ": " << r.err;
    const auto m = l2rm::io::read_json(path(arm + ".json"));
    EXPECT_EQ(m["config"][expect.first], expect.second) << arm;
    EXPECT_EQ(m["config"]["mode"], "l2rm");
  }
  EXPECT_EQ(call({"ablate", "--arm", "bogus", "--data", data}).code, 2);
}

TEST_F(CliTest, OutputDirectoryFromEnvironment) {
  ::setenv("L2RM_OUT_DIR", dir_.c_str(), 1);
  const Result r = call({"gen", "--n", "60", "--classes", "3"});
  ::unsetenv("L2RM_OUT_DIR");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(trimmed(r.out), (dir_ / "dataset.jsonl").string());
  EXPECT_TRUE(fs::exists(dir_ / "dataset.jsonl"));
}

TEST_F(CliTest, OracleCheckReportsGap) {
  const Result r = call({"oracle-check", "--instances", "20", "--size", "4", "--lambda", "0.001"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = nlohmann::json::parse(r.out);
  EXPECT_LT(rep["max_relative_gap"].get<double>(), 1e-3);
  EXPECT_TRUE(rep["pass"].get<bool>());
  // A coarse regularization cannot meet the bound.
  EXPECT_EQ(call({"oracle-check", "--instances", "5", "--lambda", "0.5"}).code, 1);
}

TEST_F(CliTest, UsageErrors) {
  Result r = call({"train", "--data", "missing.jsonl", "--bogus", "1"});
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(r.out.empty());
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(call({}).code, 2);
  EXPECT_EQ(call({"gen", "--n", "abc"}).code, 2);
  const std::string data = make_data();
  EXPECT_EQ(call({"train", "--data", data, "--rho", "0"}).code, 2);
}

TEST_F(CliTest, HelpDocumentsFlagsAndDefaults) {
  const Result r = call({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* flag : {"--rho", "--lambda", "--tau", "--alpha", "--mode", "--preset", "--checkpoint",
                           "--optimizer", "--warmup-epochs", "--no-partial"}) {
    EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
  }
  EXPECT_NE(r.out.find("[default 0.1]"), std::string::npos);
  EXPECT_NE(r.out.find("(method)"), std::string::npos);
  EXPECT_NE(r.out.find("(artifact)"), std::string::npos);
}

}  // namespace
