#pragma once

// One training run end to end (train, evaluate under every mask mode, write
// outputs), plus the classification-coefficient sweep.
//
// A run directory holds config.json (resolved, single seed), metrics.csv,
// summary.json and snapshot.bin. Each file carries the config hash and seed.

#include <cstdint>
#include <string>
#include <vector>

#include "masklab/config.hpp"

namespace masklab {

struct RunSummary {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string condition;
  double classification_coeff = 0.0;
  EvalReport gt;
  EvalReport pred;
  EvalReport unmasked;
  double cls_accuracy = 0.0;
  double feat_corr = 0.0;  // NaN when degenerate
  SuppressionMetrics suppression;
  long invalid_actions_executed = 0;
  long env_steps = 0;
};

struct RunOutput {
  TrainResult train;
  RunSummary summary;
  std::string directory;  // empty when nothing was written
};

// Runs `config.train` with `seed`. When `directory` is non-empty the run
// files are written there (created if needed).
RunOutput run_training(const RunConfig& config, std::uint64_t seed, const std::string& directory);

// Single-seed copy of `config` as it is written to config.json.
RunConfig resolved_for_seed(const RunConfig& config, std::uint64_t seed);

std::string summary_json(const RunSummary& s);
RunSummary parse_summary_json(const std::string& text);

EvalReport evaluate_snapshot(const std::string& snapshot_path, EvalMode mode, int episodes = -1);

struct SweepRow {
  double value = 0.0;
  RunSummary summary;
};

// One run per (value, seed) with loss.classification_coeff set to the value;
// each cell writes to <root>/lambda_<value>/seed_<seed>.
std::vector<SweepRow> sweep_classification_coeff(const RunConfig& base, const std::vector<double>& values,
                                                 const std::string& root);

}  // namespace masklab
