#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "masklab/config.hpp"
#include "masklab/errors.hpp"
#include "masklab/experiment.hpp"
#include "masklab/report.hpp"

using namespace masklab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct Proc {
  int code;
  std::string out;
};

Proc run_cli(const std::string& args) {
  const std::string cmd = std::string(MASKLAB_CLI_PATH) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  Proc r{-1, {}};
  char buf[512];
  while (fgets(buf, sizeof buf, p)) r.out += buf;
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string tiny_train_json(const std::string& condition) {
  return R"({"command": "train", "seeds": [0],
    "env": {"kind": "staircase", "staircase": {"length": 5, "num_actions": 5, "horizon": 10}},
    "train": {"condition": ")" + condition + R"(", "num_envs": 4, "rollout_len": 8, "minibatches": 2,
              "epochs": 1, "hidden": 8, "total_steps": 96, "eval_episodes": 8}})";
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST(RunConfigJson, DefaultsRoundTrip) {
  const RunConfig a;
  const RunConfig b = parse_run_config(serialize(a));
  EXPECT_EQ(serialize(a), serialize(b));
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(RunConfigJson, FieldsParseAndChangeHash) {
  const RunConfig rc = parse_run_config(tiny_train_json("C3"));
  EXPECT_EQ(rc.train.condition, Condition::kC3);
  EXPECT_EQ(rc.train.env.staircase.length, 5);
  EXPECT_EQ(rc.train.num_envs, 4);
  EXPECT_EQ(serialize(parse_run_config(serialize(rc))), serialize(rc));
  EXPECT_NE(config_hash(rc), config_hash(parse_run_config(tiny_train_json("C4"))));
}

TEST(RunConfigJson, UnknownKeyRejectedWithPath) {
  try {
    parse_run_config(R"({"train": {"foo": 1}})");
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("train.foo"), std::string::npos);
  }
  EXPECT_THROW(parse_run_config(R"({"bogus": 1})"), InputError);
  EXPECT_THROW(parse_run_config(R"({"train": {"lr": "fast"}})"), InputError);
  EXPECT_THROW(parse_run_config("{not json"), InputError);
}

TEST(RunConfigJson, OutputRootEnvironmentOverride) {
  ::setenv("MASKLAB_OUTPUT_ROOT", "/tmp/masklab_root", 1);
  EXPECT_EQ(resolve_output_dir("runs/x"), "/tmp/masklab_root/runs/x");
  EXPECT_EQ(resolve_output_dir("/abs/y"), "/abs/y");
  ::unsetenv("MASKLAB_OUTPUT_ROOT");
  EXPECT_EQ(resolve_output_dir("runs/x"), "runs/x");
}

TEST(MdpJson, MissingPairsBecomeSelfLoops) {
  const MdpFile f = load_mdp(std::string(MASKLAB_SOURCE_DIR) + "/configs/mdp_two_state.json");
  EXPECT_EQ(f.mdp.num_states(), 4);
  EXPECT_EQ(f.mdp.transition(0, 0, 1), 1.0);
  EXPECT_EQ(f.mdp.transition(0, 1, 0), 1.0);
  EXPECT_EQ(f.mdp.reward(2, 2), 1.0);
  EXPECT_FALSE(f.masks[0][1]);
  EXPECT_THROW(parse_mdp(R"({"num_states": 1, "num_actions": 1, "discount": 0.9, "initial": [1],
                             "transitions": [[0, 0, 0, 0.5]]})"),
               InputError);
}

TEST(Report, MissingColumnIsSchemaError) {
  std::istringstream in("# comment\nupdate,step,condition\n1,2,C1\n");
  try {
    read_metrics_csv(in);
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("missing column: seed"), std::string::npos);
  }
}

TEST(Report, SummaryJsonRoundTripKeepsNaN) {
  RunSummary s;
  s.config_hash = "abc";
  s.seed = 3;
  s.condition = "C1";
  s.feat_corr = std::nan("");
  s.cls_accuracy = 0.5;
  const RunSummary t = parse_summary_json(summary_json(s));
  EXPECT_TRUE(std::isnan(t.feat_corr));
  EXPECT_EQ(t.cls_accuracy, 0.5);
  EXPECT_EQ(t.seed, 3u);
  EXPECT_THROW(parse_summary_json("{}"), SchemaError);
}

TEST(Report, RunDirectoryAndAggregatedOutputs) {
  TempDir tmp("masklab_report_test");
  RunConfig rc = parse_run_config(tiny_train_json("C4"));
  const RunOutput out = run_training(rc, 1, (tmp.path / "run").string());
  for (const char* f : {"config.json", "metrics.csv", "summary.json", "snapshot.bin"}) {
    EXPECT_TRUE(fs::exists(tmp.path / "run" / f)) << f;
  }
  std::ifstream metrics(tmp.path / "run" / "metrics.csv");
  std::string first;
  std::getline(metrics, first);
  EXPECT_EQ(first, "# masklab config_hash=" + out.summary.config_hash + " seed=1");
  const RunConfig resolved = load_run_config((tmp.path / "run" / "config.json").string());
  EXPECT_EQ(config_hash(resolved), out.summary.config_hash);

  const RunRecord rec = load_run((tmp.path / "run").string());
  EXPECT_EQ(rec.history.size(), out.train.history.size());
  const auto files = write_report({rec}, (tmp.path / "report").string());
  EXPECT_EQ(files.size(), 5u);
  std::ifstream table(tmp.path / "report" / "table.txt");
  std::stringstream ss;
  ss << table.rdbuf();
  EXPECT_NE(ss.str().find("C4 lambda=10"), std::string::npos);
  EXPECT_NE(ss.str().find(out.summary.config_hash), std::string::npos);
}

TEST(Report, SuppressionCurveClampsZeroProbability) {
  TempDir tmp("masklab_clamp_test");
  RunRecord rec;
  rec.directory = "d";
  rec.summary.condition = "C2";
  MetricRow m;
  m.pi_target_valid = 0.0;
  m.pi_target_invalid = 0.0;
  rec.history.push_back(m);
  write_report({rec}, tmp.path.string());
  std::ifstream in(tmp.path / "suppression_curves.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_NE(row.find(",1e-300,"), std::string::npos);
  EXPECT_NE(row.find(",-300,"), std::string::npos);
}

TEST(Aggregate, MeanAndSampleStdIgnoringNaN) {
  std::vector<RunRecord> runs(3);
  const double gt[3] = {1.0, 0.0, 0.5};
  for (int i = 0; i < 3; ++i) {
    runs[i].summary.condition = "C1";
    runs[i].summary.gt.return_mean = gt[i];
    runs[i].summary.feat_corr = i == 2 ? std::nan("") : 0.4;
  }
  const auto g = aggregate(runs);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_DOUBLE_EQ(g[0].gt_mean, 0.5);
  EXPECT_DOUBLE_EQ(g[0].gt_std, 0.5);
  EXPECT_DOUBLE_EQ(g[0].corr_mean, 0.4);
  EXPECT_DOUBLE_EQ(g[0].corr_std, 0.0);
}

TEST(Cli, VerifyTheoryOnSmallConfigPasses) {
  const Proc p = run_cli("verify-theory --config " + std::string(MASKLAB_SOURCE_DIR) + "/configs/theory_small.json");
  EXPECT_EQ(p.code, 0) << p.out;
}

TEST(Cli, VerifyTheoryOnMdpFilePasses) {
  const Proc p = run_cli("verify-theory --steps 200 --mdp " + std::string(MASKLAB_SOURCE_DIR) +
                         "/configs/mdp_two_state.json");
  EXPECT_EQ(p.code, 0) << p.out;
}

TEST(Cli, TrainEvalReportSweepEndToEnd) {
  TempDir tmp("masklab_cli_test");
  write(tmp.path / "c.json", tiny_train_json("C4"));
  const std::string cfg = (tmp.path / "c.json").string();
  const Proc t = run_cli("train --config " + cfg + " --seed 2 --out " + (tmp.path / "runs").string());
  ASSERT_EQ(t.code, 0) << t.out;
  const fs::path run = tmp.path / "runs" / "C4_seed2";
  ASSERT_TRUE(fs::exists(run / "snapshot.bin"));

  const Proc e = run_cli("eval --snapshot " + (run / "snapshot.bin").string() + " --mode pred --episodes 4");
  EXPECT_EQ(e.code, 0) << e.out;
  EXPECT_NE(e.out.find("mode=pred"), std::string::npos);

  const Proc r = run_cli("report " + run.string() + " --out " + (tmp.path / "rep").string());
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(tmp.path / "rep" / "deployment.csv"));

  const Proc s = run_cli("sweep --config " + cfg + " --param lambda --values 0 1 --out " + (tmp.path / "sw").string());
  EXPECT_EQ(s.code, 0) << s.out;
  std::ifstream csv(tmp.path / "sw" / "sweep.csv");
  int lines = 0;
  for (std::string l; std::getline(csv, l);) ++lines;
  EXPECT_EQ(lines, 3);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("frobnicate").code, 2);
  EXPECT_EQ(run_cli("eval --snapshot x.bin --mode sideways").code, 2);
  EXPECT_EQ(run_cli("sweep --config /nonexistent.json --param lambda --values 1").code, 2);
}

TEST(Cli, RuntimeFailuresExitOne) {
  TempDir tmp("masklab_cli_fail");
  write(tmp.path / "bad.json", R"({"train": {"nope": 1}})");
  EXPECT_EQ(run_cli("train --config " + (tmp.path / "bad.json").string()).code, 1);
  EXPECT_EQ(run_cli("report " + (tmp.path / "missing").string()).code, 1);
}
