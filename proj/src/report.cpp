#include "masklab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>

#include "masklab/errors.hpp"

namespace masklab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& column) {
  if (s == "nan" || s == "NaN") return kNaN;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw SchemaError("metrics.csv: bad value '" + s + "' in column " + column);
  }
}

std::string fmt(double x, const char* spec = "%.17g") {
  if (std::isnan(x)) return "nan";
  char buf[48];
  std::snprintf(buf, sizeof buf, spec, x);
  return buf;
}

// Mean and sample std over the non-NaN entries.
std::pair<double, double> mean_std(const std::vector<double>& xs) {
  std::vector<double> v;
  for (double x : xs) {
    if (!std::isnan(x)) v.push_back(x);
  }
  if (v.empty()) return {kNaN, kNaN};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::string pm(double m, double s) {
  if (std::isnan(m)) return "n/a";
  return fmt(m, "%.3f") + " +- " + fmt(s, "%.3f");
}

std::string pred_flag(const EvalReport& r) {
  if (r.heads_missing) return "fallback_no_heads";
  if (r.predictor_untrained) return "untrained_predictor";
  return "trained";
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw InputError("cannot write " + p.string());
  return out;
}

}  // namespace

std::vector<MetricRow> read_metrics_csv(std::istream& in) {
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    header = split_csv(line);
    break;
  }
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const std::string& name : split_csv(kMetricColumns)) {
    if (!col.count(name)) throw SchemaError("metrics.csv is missing column: " + name);
  }
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) throw SchemaError("metrics.csv: ragged row: " + line);
    auto get = [&](const char* name) { return cells[col.at(name)]; };
    auto d = [&](const char* name) { return parse_double(get(name), name); };
    MetricRow r;
    r.update = static_cast<int>(d("update"));
    r.step = static_cast<long>(d("step"));
    r.condition = get("condition");
    r.seed = static_cast<std::uint64_t>(d("seed"));
    r.return_mean = d("return_mean");
    r.return_std = d("return_std");
    r.pi_target_valid = d("pi_target_valid");
    r.pi_target_invalid = d("pi_target_invalid");
    r.valid_rate = d("valid_rate");
    r.feat_corr = d("feat_corr");
    r.cls_acc = d("cls_acc");
    r.loss_ppo = d("loss_ppo");
    r.loss_cls = d("loss_cls");
    r.kappa_proxy = d("kappa_proxy");
    rows.push_back(r);
  }
  return rows;
}

RunRecord load_run(const std::string& directory) {
  const std::filesystem::path dir(directory);
  RunRecord rec;
  rec.directory = directory;
  rec.summary = parse_summary_json(read_text_file((dir / "summary.json").string()));
  std::ifstream in(dir / "metrics.csv");
  if (!in) throw InputError("cannot read " + (dir / "metrics.csv").string());
  rec.history = read_metrics_csv(in);
  return rec;
}

std::string group_label(const RunSummary& s) {
  if (s.condition == "C3" || s.condition == "C4") {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", s.classification_coeff);
    return s.condition + " lambda=" + buf;
  }
  return s.condition;
}

std::vector<GroupStats> aggregate(const std::vector<RunRecord>& runs) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunRecord*>> groups;
  for (const auto& r : runs) {
    const std::string label = group_label(r.summary);
    if (!groups.count(label)) order.push_back(label);
    groups[label].push_back(&r);
  }
  std::vector<GroupStats> out;
  for (const auto& label : order) {
    GroupStats g;
    g.label = label;
    std::vector<double> gt, pred, acc, corr;
    for (const RunRecord* r : groups[label]) {
      gt.push_back(r->summary.gt.return_mean);
      pred.push_back(r->summary.pred.return_mean);
      acc.push_back(r->summary.cls_accuracy);
      corr.push_back(r->summary.feat_corr);
      if (r->summary.pred.heads_missing) g.pred_note = "fallback: no heads";
      else if (r->summary.pred.predictor_untrained && g.pred_note.empty()) g.pred_note = "untrained predictor";
    }
    g.seeds = static_cast<int>(groups[label].size());
    std::tie(g.gt_mean, g.gt_std) = mean_std(gt);
    std::tie(g.pred_mean, g.pred_std) = mean_std(pred);
    std::tie(g.acc_mean, g.acc_std) = mean_std(acc);
    std::tie(g.corr_mean, g.corr_std) = mean_std(corr);
    out.push_back(g);
  }
  return out;
}

std::string summary_table(const std::vector<RunRecord>& runs) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-18s %5s  %-17s %-17s %-17s %-17s %s\n", "condition", "seeds", "GT return",
                "Pred return", "cls accuracy", "feat corr", "pred note");
  out << line;
  for (const auto& g : aggregate(runs)) {
    std::snprintf(line, sizeof line, "%-18s %5d  %-17s %-17s %-17s %-17s %s\n", g.label.c_str(), g.seeds,
                  pm(g.gt_mean, g.gt_std).c_str(), pm(g.pred_mean, g.pred_std).c_str(),
                  pm(g.acc_mean, g.acc_std).c_str(), pm(g.corr_mean, g.corr_std).c_str(), g.pred_note.c_str());
    out << line;
  }
  return out.str();
}

std::vector<std::string> write_report(const std::vector<RunRecord>& runs, const std::string& out_dir) {
  if (runs.empty()) throw InputError("report needs at least one run");
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  std::vector<std::string> written;

  {
    auto out = open_out(dir / "table.txt");
    for (const auto& r : runs) {
      out << "# run " << r.directory << " config_hash=" << r.summary.config_hash << " seed=" << r.summary.seed
          << '\n';
    }
    out << summary_table(runs);
    written.push_back((dir / "table.txt").string());
  }
  {
    auto out = open_out(dir / "runs.csv");
    out << "directory,config_hash,seed,condition,group,gt_return_mean,gt_return_std,pred_return_mean,"
           "pred_return_std,pred_flag,unmasked_return_mean,cls_accuracy,feat_corr,first_visit_update,"
           "min_probe_before_visit,suppression_ratio,time_to_valid\n";
    for (const auto& r : runs) {
      const auto& s = r.summary;
      out << r.directory << ',' << s.config_hash << ',' << s.seed << ',' << s.condition << ',' << group_label(s)
          << ',' << fmt(s.gt.return_mean) << ',' << fmt(s.gt.return_std) << ',' << fmt(s.pred.return_mean) << ','
          << fmt(s.pred.return_std) << ',' << pred_flag(s.pred) << ',' << fmt(s.unmasked.return_mean) << ','
          << fmt(s.cls_accuracy) << ',' << fmt(s.feat_corr) << ',' << s.suppression.first_visit_update << ','
          << fmt(s.suppression.min_probe_before_visit) << ',' << fmt(s.suppression.suppression_ratio) << ','
          << s.suppression.time_to_valid << '\n';
    }
    written.push_back((dir / "runs.csv").string());
  }
  {
    auto out = open_out(dir / "suppression_curves.csv");
    out << "config_hash,seed,group,update,step,pi_target_valid,log10_pi_target_valid,pi_target_invalid\n";
    for (const auto& r : runs) {
      for (const auto& m : r.history) {
        if (std::isnan(m.pi_target_valid)) continue;
        const double p = std::max(m.pi_target_valid, kLogFloor);
        const double q = std::isnan(m.pi_target_invalid) ? kNaN : std::max(m.pi_target_invalid, kLogFloor);
        out << r.summary.config_hash << ',' << r.summary.seed << ',' << group_label(r.summary) << ',' << m.update
            << ',' << m.step << ',' << fmt(p) << ',' << fmt(std::log10(p)) << ',' << fmt(q) << '\n';
      }
    }
    written.push_back((dir / "suppression_curves.csv").string());
  }
  {
    auto out = open_out(dir / "correlation_curves.csv");
    out << "config_hash,seed,group,update,step,feat_corr\n";
    for (const auto& r : runs) {
      for (const auto& m : r.history) {
        out << r.summary.config_hash << ',' << r.summary.seed << ',' << group_label(r.summary) << ',' << m.update
            << ',' << m.step << ',' << fmt(m.feat_corr) << '\n';
      }
    }
    written.push_back((dir / "correlation_curves.csv").string());
  }
  {
    auto out = open_out(dir / "deployment.csv");
    out << "config_hash,seed,group,gt_return,pred_return,pred_flag\n";
    for (const auto& r : runs) {
      const auto& s = r.summary;
      out << s.config_hash << ',' << s.seed << ',' << group_label(s) << ',' << fmt(s.gt.return_mean) << ','
          << fmt(s.pred.return_mean) << ',' << pred_flag(s.pred) << '\n';
    }
    written.push_back((dir / "deployment.csv").string());
  }
  return written;
}

}  // namespace masklab
