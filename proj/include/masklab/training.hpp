#pragma once

// On-policy PPO over batched toy environments for the four training
// conditions, with per-update suppression/probe metrics and evaluation under
// ground-truth, predicted and no masks.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "masklab/envs.hpp"
#include "masklab/losses.hpp"
#include "masklab/network.hpp"

namespace masklab {

enum class EvalMode { kGroundTruth, kPredicted, kUnmasked };

std::string to_string(EvalMode m);
EvalMode eval_mode_from_string(const std::string& s);  // accepts gt|pred|unmasked and long names

struct TrainConfig {
  EnvSpec env;
  Condition condition = Condition::kC1;
  int num_envs = 64;
  int rollout_len = 32;
  int epochs = 4;
  int minibatches = 4;
  double lr = 3e-4;
  bool anneal_lr = false;
  double max_grad_norm = 1.0;
  long total_steps = 200000;
  std::uint64_t seed = 0;
  int hidden = 64;
  int num_layers = 2;
  LossConfig loss;
  int eval_episodes = 512;
  std::uint64_t eval_seed = 12345;

  int batch_size() const { return num_envs * rollout_len; }
  int num_updates() const { return static_cast<int>(total_steps / batch_size()); }
  void validate() const;
};

struct MetricRow {
  int update = 0;
  long step = 0;
  std::string condition;
  std::uint64_t seed = 0;
  double return_mean = 0.0;  // completed episodes in this rollout; NaN if none
  double return_std = 0.0;
  double pi_target_valid = 0.0;    // policy prob. of the critical action at probe states
  double pi_target_invalid = 0.0;  // raw softmax prob. of it where it is invalid
  double valid_rate = 0.0;
  double feat_corr = 0.0;          // NaN when the probe is degenerate
  double cls_acc = 0.0;
  double loss_ppo = 0.0;
  double loss_cls = 0.0;           // lambda-weighted
  double kappa_proxy = 0.0;        // decrease of the centered probe logit over this update
};

inline constexpr const char* kMetricColumns =
    "update,step,condition,seed,return_mean,return_std,pi_target_valid,pi_target_invalid,"
    "valid_rate,feat_corr,cls_acc,loss_ppo,loss_cls,kappa_proxy";

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows,
                       const std::string& header_comment);

struct SuppressionMetrics {
  bool visited = false;
  int first_visit_update = -1;
  long first_visit_step = -1;
  double first_occurrence_logprob = 0.0;
  double suppression_ratio = 0.0;   // first-occurrence prob / (1/n)
  long time_to_valid = -1;          // steps from first visit until prob > 0.5
  double min_probe_before_visit = 0.0;
};

struct EvalReport {
  EvalMode mode = EvalMode::kGroundTruth;
  int episodes = 0;
  double return_mean = 0.0;
  double return_std = 0.0;
  double length_mean = 0.0;
  double fallback_rate = 0.0;       // predicted mode: steps with an empty predicted support
  bool heads_missing = false;
  bool predictor_untrained = false; // heads present but never trained (C1/C2)
};

struct TrainResult {
  MlpActorCritic net;
  std::vector<MetricRow> history;
  SuppressionMetrics suppression;
  long invalid_actions_executed = 0;
  long env_steps = 0;
  double cls_accuracy = 0.0;
  std::optional<double> feat_corr;
};

// Enumerated non-terminal states of an environment, their observations and
// oracle masks; probe states are those where the critical action is valid.
struct StateCatalog {
  TabularEnv tabular;
  std::vector<int> live;   // non-terminal tabular indices
  Matrix obs;              // rows follow `live`
  std::vector<ValidityMask> masks;
  std::vector<int> probe;  // positions into `live`
  int critical_action = 0;

  static StateCatalog build(const EnvSpec& spec);
};

// Fraction of (state, action) pairs over the catalog whose thresholded
// prediction matches the oracle. NaN without heads.
double classification_accuracy(const MlpActorCritic& net, const StateCatalog& catalog, double tau);

TrainResult train(const TrainConfig& config);

EvalReport evaluate(const MlpActorCritic& net, const EnvSpec& env, EvalMode mode, int episodes,
                    std::uint64_t seed, bool heads_trained, double tau = kValidityThreshold);

// Whether a condition trains the classification heads.
bool trains_heads(Condition c, const LossConfig& loss);

}  // namespace masklab
