#pragma once

// Aggregation of finished run directories into a GT-vs-Pred summary table
// and per-figure CSV data (suppression curves, correlation curves,
// deployment bars).

#include <iosfwd>
#include <string>
#include <vector>

#include "masklab/experiment.hpp"

namespace masklab {

// Throws SchemaError naming the first missing column.
std::vector<MetricRow> read_metrics_csv(std::istream& in);

struct RunRecord {
  std::string directory;
  RunSummary summary;
  std::vector<MetricRow> history;
};

RunRecord load_run(const std::string& directory);

// Condition label used for grouping, e.g. "C1" or "C4 lambda=10".
std::string group_label(const RunSummary& s);

struct GroupStats {
  std::string label;
  int seeds = 0;
  double gt_mean = 0.0, gt_std = 0.0;
  double pred_mean = 0.0, pred_std = 0.0;
  double acc_mean = 0.0, acc_std = 0.0;
  double corr_mean = 0.0, corr_std = 0.0;
  std::string pred_note;  // "untrained predictor" / "fallback: no heads" / ""
};

std::vector<GroupStats> aggregate(const std::vector<RunRecord>& runs);

// Text table, one row per group, mean +- std over seeds.
std::string summary_table(const std::vector<RunRecord>& runs);

// Writes table.txt, runs.csv, suppression_curves.csv, correlation_curves.csv
// and deployment.csv into `out_dir`; returns the paths written.
std::vector<std::string> write_report(const std::vector<RunRecord>& runs, const std::string& out_dir);

inline constexpr double kLogFloor = 1e-300;

}  // namespace masklab
