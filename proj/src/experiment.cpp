#include "masklab/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "masklab/errors.hpp"

namespace masklab {

using nlohmann::json;

namespace {

// JSON has no NaN; null stands in for it.
json num(double x) { return std::isnan(x) ? json(nullptr) : json(x); }

double num_from(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json eval_json(const EvalReport& r) {
  return {{"mode", to_string(r.mode)},
          {"episodes", r.episodes},
          {"return_mean", num(r.return_mean)},
          {"return_std", num(r.return_std)},
          {"length_mean", num(r.length_mean)},
          {"fallback_rate", num(r.fallback_rate)},
          {"heads_missing", r.heads_missing},
          {"predictor_untrained", r.predictor_untrained}};
}

EvalReport eval_from(const json& j) {
  EvalReport r;
  r.mode = eval_mode_from_string(j.at("mode").get<std::string>());
  r.episodes = j.at("episodes").get<int>();
  r.return_mean = num_from(j.at("return_mean"));
  r.return_std = num_from(j.at("return_std"));
  r.length_mean = num_from(j.at("length_mean"));
  r.fallback_rate = num_from(j.at("fallback_rate"));
  r.heads_missing = j.at("heads_missing").get<bool>();
  r.predictor_untrained = j.at("predictor_untrained").get<bool>();
  return r;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw InputError("cannot write " + p.string());
  out << text;
}

std::string value_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

RunConfig resolved_for_seed(const RunConfig& config, std::uint64_t seed) {
  RunConfig rc = config;
  rc.seeds = {seed};
  rc.train.seed = seed;
  return rc;
}

std::string summary_json(const RunSummary& s) {
  const auto& sm = s.suppression;
  json j = {{"config_hash", s.config_hash},
            {"seed", s.seed},
            {"condition", s.condition},
            {"classification_coeff", s.classification_coeff},
            {"eval", {{"gt", eval_json(s.gt)}, {"pred", eval_json(s.pred)}, {"unmasked", eval_json(s.unmasked)}}},
            {"cls_accuracy", num(s.cls_accuracy)},
            {"feat_corr", num(s.feat_corr)},
            {"suppression",
             {{"visited", sm.visited},
              {"first_visit_update", sm.first_visit_update},
              {"first_visit_step", sm.first_visit_step},
              {"first_occurrence_logprob", num(sm.first_occurrence_logprob)},
              {"suppression_ratio", num(sm.suppression_ratio)},
              {"time_to_valid", sm.time_to_valid},
              {"min_probe_before_visit", num(sm.min_probe_before_visit)}}},
            {"invalid_actions_executed", s.invalid_actions_executed},
            {"env_steps", s.env_steps}};
  return j.dump(2) + "\n";
}

RunSummary parse_summary_json(const std::string& text) {
  RunSummary s;
  try {
    const json j = json::parse(text);
    s.config_hash = j.at("config_hash").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.condition = j.at("condition").get<std::string>();
    s.classification_coeff = j.at("classification_coeff").get<double>();
    s.gt = eval_from(j.at("eval").at("gt"));
    s.pred = eval_from(j.at("eval").at("pred"));
    s.unmasked = eval_from(j.at("eval").at("unmasked"));
    s.cls_accuracy = num_from(j.at("cls_accuracy"));
    s.feat_corr = num_from(j.at("feat_corr"));
    const json& sm = j.at("suppression");
    s.suppression.visited = sm.at("visited").get<bool>();
    s.suppression.first_visit_update = sm.at("first_visit_update").get<int>();
    s.suppression.first_visit_step = sm.at("first_visit_step").get<long>();
    s.suppression.first_occurrence_logprob = num_from(sm.at("first_occurrence_logprob"));
    s.suppression.suppression_ratio = num_from(sm.at("suppression_ratio"));
    s.suppression.time_to_valid = sm.at("time_to_valid").get<long>();
    s.suppression.min_probe_before_visit = num_from(sm.at("min_probe_before_visit"));
    s.invalid_actions_executed = j.at("invalid_actions_executed").get<long>();
    s.env_steps = j.at("env_steps").get<long>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad summary.json: ") + e.what());
  }
  return s;
}

RunOutput run_training(const RunConfig& config, std::uint64_t seed, const std::string& directory) {
  const RunConfig rc = resolved_for_seed(config, seed);
  rc.validate();
  RunOutput out{train(rc.train), {}, directory};
  const TrainConfig& tc = rc.train;
  const bool heads = trains_heads(tc.condition, tc.loss);

  RunSummary& s = out.summary;
  s.config_hash = config_hash(rc);
  s.seed = seed;
  s.condition = to_string(tc.condition);
  s.classification_coeff = tc.loss.classification_coeff;
  s.gt = evaluate(out.train.net, tc.env, EvalMode::kGroundTruth, tc.eval_episodes, tc.eval_seed, heads,
                  tc.loss.threshold);
  s.pred = evaluate(out.train.net, tc.env, EvalMode::kPredicted, tc.eval_episodes, tc.eval_seed, heads,
                    tc.loss.threshold);
  s.unmasked = evaluate(out.train.net, tc.env, EvalMode::kUnmasked, tc.eval_episodes, tc.eval_seed, heads,
                        tc.loss.threshold);
  s.cls_accuracy = out.train.cls_accuracy;
  s.feat_corr = out.train.feat_corr.value_or(std::numeric_limits<double>::quiet_NaN());
  s.suppression = out.train.suppression;
  s.invalid_actions_executed = out.train.invalid_actions_executed;
  s.env_steps = out.train.env_steps;

  if (directory.empty()) return out;
  const std::filesystem::path dir(directory);
  std::filesystem::create_directories(dir);
  write_file(dir / "config.json", serialize(rc));
  std::ofstream metrics(dir / "metrics.csv");
  if (!metrics) throw InputError("cannot write metrics.csv in " + directory);
  write_metrics_csv(metrics, out.train.history,
                    "masklab config_hash=" + s.config_hash + " seed=" + std::to_string(seed));
  write_file(dir / "summary.json", summary_json(s));
  const json meta = {{"config", json::parse(serialize(rc))},
                     {"config_hash", s.config_hash},
                     {"seed", seed},
                     {"heads_trained", heads}};
  save_snapshot((dir / "snapshot.bin").string(), out.train.net, meta.dump());
  return out;
}

EvalReport evaluate_snapshot(const std::string& snapshot_path, EvalMode mode, int episodes) {
  const Snapshot snap = load_snapshot(snapshot_path);
  json meta;
  try {
    meta = json::parse(snap.metadata_json);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("snapshot metadata is not JSON: ") + e.what());
  }
  if (!meta.contains("config") || !meta.contains("heads_trained")) {
    throw SchemaError("snapshot metadata lacks config or heads_trained");
  }
  const RunConfig rc = parse_run_config(meta.at("config").dump());
  const TrainConfig& tc = rc.train;
  const int n = episodes > 0 ? episodes : tc.eval_episodes;
  return evaluate(snap.net, tc.env, mode, n, tc.eval_seed, meta.at("heads_trained").get<bool>(),
                  tc.loss.threshold);
}

std::vector<SweepRow> sweep_classification_coeff(const RunConfig& base, const std::vector<double>& values,
                                                 const std::string& root) {
  if (values.empty()) throw InputError("sweep needs at least one value");
  std::vector<SweepRow> rows;
  for (double v : values) {
    if (!(v >= 0.0)) throw InputError("lambda values must be non-negative");
    RunConfig rc = base;
    rc.train.loss.classification_coeff = v;
    for (std::uint64_t seed : base.seeds) {
      const std::string dir = root.empty() ? std::string()
                                           : (std::filesystem::path(root) / ("lambda_" + value_label(v)) /
                                              ("seed_" + std::to_string(seed)))
                                                 .string();
      rows.push_back({v, run_training(rc, seed, dir).summary});
    }
  }
  return rows;
}

}  // namespace masklab
