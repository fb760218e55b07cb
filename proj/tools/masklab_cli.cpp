// masklab: theory verification, training, evaluation, sweeps and reports.
// Exit codes: 0 success, 1 assertion or validation failure, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "masklab/config.hpp"
#include "masklab/errors.hpp"
#include "masklab/experiment.hpp"
#include "masklab/report.hpp"
#include "masklab/theory_suite.hpp"

namespace fs = std::filesystem;
using namespace masklab;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

RunConfig config_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

void print_summary(const RunSummary& s, const std::string& dir) {
  std::printf("%s seed=%llu config_hash=%s\n", group_label(s).c_str(), static_cast<unsigned long long>(s.seed),
              s.config_hash.c_str());
  std::printf("  return gt=%.4f pred=%.4f (%s) unmasked=%.4f\n", s.gt.return_mean, s.pred.return_mean,
              s.pred.heads_missing ? "fallback: no heads"
                                   : (s.pred.predictor_untrained ? "untrained predictor" : "trained predictor"),
              s.unmasked.return_mean);
  std::printf("  cls_accuracy=%.4f feat_corr=%.4f invalid_executed=%ld\n", s.cls_accuracy, s.feat_corr,
              s.invalid_actions_executed);
  if (s.suppression.visited) {
    std::printf("  first probe visit at update %d, log pi=%.4f, ratio to 1/n=%.4g\n",
                s.suppression.first_visit_update, s.suppression.first_occurrence_logprob,
                s.suppression.suppression_ratio);
  } else {
    std::printf("  probe state never visited; min probe %.4g\n", s.suppression.min_probe_before_visit);
  }
  if (!dir.empty()) std::printf("  wrote %s\n", dir.c_str());
}

int cmd_verify(const std::string& config_path, const std::string& mdp_path, int steps) {
  RunConfig rc = config_or_default(config_path);
  if (steps > 0) rc.theory.num_steps = steps;
  const TheoryReport report = mdp_path.empty() ? run_theory_battery(rc.theory)
                                               : [&] {
                                                   const MdpFile f = load_mdp(mdp_path);
                                                   return run_theory_on_mdp(f.mdp, f.masks, rc.theory);
                                                 }();
  report.print(std::cout);
  if (!report.pass) {
    for (const auto& f : report.failures()) std::cerr << "FAIL " << f << '\n';
    return kFailure;
  }
  return kOk;
}

int cmd_train(const std::string& config_path, const std::vector<long long>& seed_opt, const std::string& out_opt) {
  RunConfig rc = load_run_config(config_path);
  std::vector<std::uint64_t> seeds = rc.seeds;
  if (!seed_opt.empty()) {
    seeds.clear();
    for (long long s : seed_opt) {
      if (s < 0) throw InputError("seed must be non-negative");
      seeds.push_back(static_cast<std::uint64_t>(s));
    }
  }
  const std::string root = resolve_output_dir(out_opt.empty() ? rc.output_dir : out_opt);
  for (std::uint64_t seed : seeds) {
    const std::string dir = (fs::path(root) / (to_string(rc.train.condition) + "_seed" + std::to_string(seed))).string();
    const RunOutput out = run_training(rc, seed, dir);
    print_summary(out.summary, dir);
  }
  return kOk;
}

int cmd_eval(const std::string& snapshot, const std::string& mode, int episodes) {
  const EvalReport r = evaluate_snapshot(snapshot, eval_mode_from_string(mode), episodes);
  std::printf("mode=%s episodes=%d return_mean=%.6f return_std=%.6f length_mean=%.3f fallback_rate=%.4f%s%s\n",
              to_string(r.mode).c_str(), r.episodes, r.return_mean, r.return_std, r.length_mean, r.fallback_rate,
              r.heads_missing ? " heads_missing" : "", r.predictor_untrained ? " predictor_untrained" : "");
  return kOk;
}

int cmd_sweep(const std::string& config_path, const std::string& param, const std::vector<double>& values,
              const std::string& out_opt) {
  if (param != "lambda") throw UsageError("only --param lambda is supported");
  const RunConfig rc = load_run_config(config_path);
  const std::string root = resolve_output_dir(out_opt.empty() ? rc.output_dir : out_opt);
  const auto rows = sweep_classification_coeff(rc, values, root);
  fs::create_directories(root);
  std::ofstream csv(fs::path(root) / "sweep.csv");
  csv << "lambda,seed,config_hash,condition,gt_return,pred_return,cls_accuracy,feat_corr\n";
  std::printf("%-8s %-6s %-18s %-10s %-10s %-10s %-10s\n", "lambda", "seed", "config_hash", "gt", "pred", "acc",
              "corr");
  for (const auto& r : rows) {
    const auto& s = r.summary;
    std::printf("%-8g %-6llu %-18s %-10.4f %-10.4f %-10.4f %-10.4f\n", r.value,
                static_cast<unsigned long long>(s.seed), s.config_hash.c_str(), s.gt.return_mean,
                s.pred.return_mean, s.cls_accuracy, s.feat_corr);
    csv << r.value << ',' << s.seed << ',' << s.config_hash << ',' << s.condition << ',' << s.gt.return_mean << ','
        << s.pred.return_mean << ',' << s.cls_accuracy << ',' << s.feat_corr << '\n';
  }
  return kOk;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out_opt) {
  std::vector<RunRecord> runs;
  for (const auto& d : dirs) runs.push_back(load_run(d));
  const std::string out = resolve_output_dir(out_opt);
  std::cout << summary_table(runs);
  for (const auto& p : write_report(runs, out)) std::cout << "wrote " << p << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"masklab: valid-action suppression laboratory"};
  app.require_subcommand(1);

  std::string config_path, mdp_path, snapshot, mode, param, out_dir;
  std::vector<long long> seeds;
  std::vector<double> values;
  std::vector<std::string> run_dirs;
  int steps = 0, episodes = -1;

  auto* verify = app.add_subcommand("verify-theory", "check the suppression identities on exact MDPs");
  verify->add_option("--config", config_path, "JSON run config (theory section)")->check(CLI::ExistingFile);
  verify->add_option("--mdp", mdp_path, "JSON MDP file instead of the corridor battery")->check(CLI::ExistingFile);
  verify->add_option("--steps", steps, "override the number of dynamics steps")->check(CLI::PositiveNumber);

  auto* train_cmd = app.add_subcommand("train", "train one condition");
  train_cmd->add_option("--config", config_path, "JSON run config")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--seed", seeds, "seed(s); defaults to the config's seed list");
  train_cmd->add_option("--out", out_dir, "output root (default: config output_dir)");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a snapshot");
  eval_cmd->add_option("--snapshot", snapshot, "snapshot.bin from a training run")->required();
  eval_cmd->add_option("--mode", mode, "mask mode")->required()->check(CLI::IsMember({"gt", "pred", "unmasked"}));
  eval_cmd->add_option("--episodes", episodes, "episode count (default: config eval_episodes)")
      ->check(CLI::PositiveNumber);

  auto* sweep = app.add_subcommand("sweep", "sweep the classification coefficient");
  sweep->add_option("--config", config_path, "JSON run config")->required()->check(CLI::ExistingFile);
  sweep->add_option("--param", param, "swept parameter")->required()->check(CLI::IsMember({"lambda"}));
  sweep->add_option("--values", values, "parameter values")->required();
  sweep->add_option("--out", out_dir, "output root (default: config output_dir)");

  auto* report = app.add_subcommand("report", "aggregate run directories");
  report->add_option("dirs", run_dirs, "run directories")->required();
  std::string report_out = "report";
  report->add_option("--out", report_out, "directory for tables and plot data");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*verify) return cmd_verify(config_path, mdp_path, steps);
    if (*train_cmd) return cmd_train(config_path, seeds, out_dir);
    if (*eval_cmd) return cmd_eval(snapshot, mode, episodes);
    if (*sweep) return cmd_sweep(config_path, param, values, out_dir);
    if (*report) return cmd_report(run_dirs, report_out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
