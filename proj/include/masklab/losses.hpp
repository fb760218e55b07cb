#pragma once

// Training objectives: GAE, clipped PPO with value and entropy terms, focal
// and KL-balanced validity classification, and their composition per
// training condition. Every loss returns its value and, on request, the
// gradient w.r.t. the network outputs it touches.

#include <string>
#include <vector>

#include "masklab/network.hpp"

namespace masklab {

enum class Condition { kC1, kC2, kC3, kC4 };

std::string to_string(Condition c);
Condition condition_from_string(const std::string& s);

// Which policy supplies the pi_theta prefactor of the KL weights. The
// oracle-based choices give invalid actions ~e^-20 weight, so false
// positives on invalid actions are never corrected.
enum class KlPrefactor { kOracleSoftMasked, kOracleMasked, kUnmasked };

std::string to_string(KlPrefactor p);
KlPrefactor kl_prefactor_from_string(const std::string& s);

struct LossConfig {
  double clip = 0.2;
  double value_coeff = 0.5;
  double entropy_coeff = 0.01;
  double classification_coeff = 10.0;  // lambda, C3/C4 only
  double focal_gamma = 2.0;
  double kl_soft_mask_value = kSoftMaskValue;
  double threshold = kValidityThreshold;
  double gae_lambda = 0.8;
  double discount = 0.99;
  bool normalize_advantages = true;
  KlPrefactor kl_prefactor = KlPrefactor::kUnmasked;

  void validate() const;
};

struct RolloutBatch {
  Matrix obs;                 // N x obs_dim
  std::vector<int> actions;
  Vector old_log_probs;
  Vector rewards;
  std::vector<bool> dones;    // episode ended after this transition
  Vector values;
  Matrix validity;            // N x n oracle labels (0/1)
  Matrix masks;               // N x n support used at collection
  Vector advantages;
  Vector returns;

  int size() const { return static_cast<int>(actions.size()); }
  RolloutBatch subset(const std::vector<int>& rows) const;
};

struct GaeResult {
  Vector advantages;
  Vector returns;
};

// One trajectory segment. dones[t] cuts the recursion after step t;
// bootstrap_value is V(s_T) after the last step.
GaeResult gae(const Vector& rewards, const Vector& values, const std::vector<bool>& dones,
              double bootstrap_value, double gamma, double lambda);

// Mean over states of (1/n) sum_a (1-p)^g log p, negated; p is the predicted
// probability of the true label, clamped at 1e-12.
double focal_loss(const Matrix& validity_probs, const Matrix& labels, double focal_gamma);

// Same with per-(state, action) weights in place of 1/n. If `grad_logits` is
// non-null it receives d loss / d classification logit.
double kl_balanced_loss(const Matrix& validity_probs, const Matrix& labels, const Matrix& weights,
                        double focal_gamma, Matrix* grad_logits = nullptr);

double binary_cross_entropy(const Matrix& validity_probs, const Matrix& labels);

struct KlWeights {
  Matrix raw;         // w_a(s)
  Matrix normalized;  // w_a / sum_b w_b, uniform where the sum is 0
  std::vector<bool> uniform_fallback;
};

// w_a(s) = prefactor(a|s) |log pi_oracle(a|s) - log pi_pred(a|s)|, both policies
// soft-masked with `soft_value`.
KlWeights kl_weights(const Matrix& logits, const Matrix& oracle_mask, const Matrix& predicted_mask,
                     const Matrix& prefactor_probs, double soft_value = kSoftMaskValue);

// Prefactor policy selected by config.
Matrix kl_prefactor_probs(const Matrix& logits, const Matrix& oracle_mask, const LossConfig& config);

struct LossTerms {
  double total = 0.0;
  double ppo = 0.0;        // policy + value_coeff * value - entropy_coeff * entropy
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double cls = 0.0;        // unweighted classification loss
  double cls_weighted = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

struct LossResult {
  LossTerms terms;
  OutputGrads output_grads;
  Vector grad;  // w.r.t. the flat parameters; empty unless requested
};

// Clipped surrogate + value MSE - entropy over the support in batch.masks.
LossResult ppo_loss(const ForwardCache& cache, const RolloutBatch& batch, const LossConfig& config);

// Total loss: PPO plus lambda * classification for C3 (focal) and
// C4 (KL-balanced). The classification term is skipped when lambda = 0.
// KL weights are constants of the backward pass; `frozen_weights` pins them
// (used by finite-difference checks).
LossResult total_loss(const MlpActorCritic& net, const RolloutBatch& batch, const LossConfig& config,
                      Condition condition, bool compute_grad,
                      const Matrix* frozen_weights = nullptr);

// The normalized per-(state, action) classification weights total_loss would use.
Matrix classification_weights(const ForwardCache& cache, const RolloutBatch& batch,
                              const LossConfig& config, Condition condition);

}  // namespace masklab
