#pragma once

// Exact expected policy-gradient dynamics for linear-logit softmax policies and
// the per-step checks of the suppression theory: logit/parameter update
// identities, zero-sum, dominance gap, logit suppression at unvisited states,
// the e^{-K}/n probability bound and the entropy-regularized sandwich.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "masklab/envs.hpp"
#include "masklab/mdp.hpp"

namespace masklab {

// pi(a|s) = softmax_a(phi(s)^T w_a). Rows of `features` are phi(s); rows of
// `weights` are w_a.
class LinearSoftmaxPolicy {
 public:
  LinearSoftmaxPolicy(Matrix features, Matrix weights);

  // Identical weights for every action, so pi_0(a|s) = 1/n exactly.
  static LinearSoftmaxPolicy uniform(Matrix features, int num_actions);

  int num_states() const { return static_cast<int>(features_.rows()); }
  int num_actions() const { return static_cast<int>(weights_.rows()); }
  int feature_dim() const { return static_cast<int>(features_.cols()); }
  const Matrix& features() const { return features_; }
  const Matrix& weights() const { return weights_; }

  Matrix logits() const;     // S x n
  Matrix log_probs() const;  // max-subtracted log-softmax
  PolicyTable probs() const;

  void apply_update(const Matrix& delta_weights);

 private:
  Matrix features_;
  Matrix weights_;
};

// Row-wise log-softmax with max subtraction.
Matrix log_softmax_rows(const Matrix& logits);

enum class UpdateMode { kExpected, kSampled };

struct DynamicsConfig {
  double learning_rate = 0.1;
  double entropy_coeff = 0.0;
  int num_steps = 1000;
  UpdateMode update_mode = UpdateMode::kExpected;
  // Stop once the convergence rule fires (max logit change < 1e-8 for 100 steps).
  bool stop_on_convergence = false;
  int samples_per_step = 256;  // sampled mode only
  std::uint64_t seed = 0;      // sampled mode only

  static constexpr double kConvergenceTol = 1e-8;
  static constexpr int kConvergenceWindow = 100;
  static constexpr double kLogitOverflow = 700.0;
};

// d log pi(a_taken|s) / d z_target(s) = 1{a_taken = a_target} - pi(a_target|s).
double logit_grad(const PolicyTable& policy, int state, int a_taken, int a_target);

// pi(a|s) A(s,a) for every (s,a).
Matrix expected_logit_updates(const TabularMdp& mdp, const PolicyTable& policy);
double expected_logit_update(const TabularMdp& mdp, const PolicyTable& policy, int state, int action);

// Per-(s,a) direction pi(a|s)[A(s,a) - beta log pi(a|s) - beta H(pi(.|s))].
Matrix entropy_logit_updates(const Matrix& log_probs, const Matrix& advantage, double beta);

// Delta w_a = eta E_{s~d_pi}[pi(a|s)(A - beta log pi - beta H) phi(s)], n x d.
Matrix expected_param_update(const LinearSoftmaxPolicy& policy, const TabularMdp& mdp,
                             double learning_rate, double entropy_coeff = 0.0);

struct SampledUpdate {
  Matrix mean;            // n x d
  Matrix standard_error;  // n x d
  int num_samples = 0;
};

// Monte-Carlo estimate from single transitions s ~ d_pi, a' ~ pi(.|s):
// eta (1{a'=j} - pi(j|s)) A(s,a') phi(s).
SampledUpdate sampled_param_update(const LinearSoftmaxPolicy& policy, const TabularMdp& mdp,
                                   double learning_rate, int num_samples, Rng& rng);

struct SuppressionRate {
  double kappa = 0.0;        // eta phi(s*)^T E[c(s) phi(s)], c = pi(a|s)|A(s,a)|
  double signed_kappa = 0.0; // -(predicted logit change at s*) from pi(a|s)A(s,a)
  bool condition_i_ok = false;
  bool condition_ii_ok = false;
  bool target_unvisited = false;
};

SuppressionRate suppression_rate(const LinearSoftmaxPolicy& policy, const TabularMdp& mdp,
                                 const std::vector<ValidityMask>& masks, int target_state,
                                 int target_action, double learning_rate);

struct ZeroSumReport {
  double max_expected_sum = 0.0;  // max_s |sum_j Delta z_j(s)|, all states
  double max_sampled_sum = 0.0;   // max over (s, a') of |sum_j (1{a'=j} - pi(j|s))|
  double max_uniform_entropy_correction = 0.0;  // only when the policy is uniform
};

ZeroSumReport zero_sum_check(const LinearSoftmaxPolicy& policy, const TabularMdp& mdp,
                             double entropy_coeff, double learning_rate = 1.0);

struct SuppressionStep {
  int step = 0;
  double kappa = 0.0;        // realized suppression rate at this step (entropy-inclusive)
  double kappa_plain = 0.0;  // unregularized eta phi(s*)^T E[pi|A| phi]
  double cumulative = 0.0;   // K_step = sum of kappa over earlier steps
  double pi_target = 0.0;
  double log_pi_target = 0.0;
  double bound = 0.0;        // exp(-K)/n
  double log_bound = 0.0;
  double realized_change = 0.0;  // z_a(s*) change caused by this step's update
  bool cond_i = false;
  bool cond_ii = false;
};

struct SuppressionTrace {
  int target_state = 0;
  int target_action = 0;
  int num_actions = 0;
  std::vector<SuppressionStep> steps;
  std::optional<double> entropy_floor;  // exp(-r_max/(beta(1-gamma))) when beta > 0

  // max over steps whose preceding flags all held of log pi - (-K - log n).
  double max_bound_excess = -1e300;
  // Same quantity over every step, regardless of flags.
  double max_bound_excess_unconditional = -1e300;
  // min over steps of logsumexp(sigma) - log n at s*.
  double min_jensen_slack = 1e300;
  // max |predicted - realized| logit change at s* (and every other unvisited state).
  double max_unvisited_residual = 0.0;
  bool flags_held_throughout = true;

  // CSV columns: step,kappa,K,pi_target,bound,log_pi_target,cond_i,cond_ii
  void write_csv(std::ostream& out) const;
};

struct DynamicsTarget {
  int state;
  int action;
};

struct DynamicsResult {
  std::vector<SuppressionTrace> traces;
  LinearSoftmaxPolicy final_policy;
  int steps_run = 0;
  bool converged = false;
  int converged_at = -1;
  double max_zero_sum = 0.0;              // realized, all states, all steps
  double max_expected_zero_sum = 0.0;     // from the weight deltas, all states, all steps
  double max_unvisited_residual = 0.0;         // all unvisited states, all tracked actions
  double max_advantage_expectation = 0.0; // max_s |sum_a pi A|
  double max_advantage_bound_violation = 0.0;
  // Step at which each maximum above was attained.
  int zero_sum_step = 0;
  int expected_zero_sum_step = 0;
  int unvisited_residual_step = 0;
  int advantage_expectation_step = 0;
};

// Iterates gradient steps from uniform initialization, recording a trace per
// target. Throws NumericalError if any |logit| exceeds 700.
DynamicsResult run_dynamics(const TabularMdp& mdp, const std::vector<ValidityMask>& masks,
                            const Matrix& features, const DynamicsConfig& config,
                            const std::vector<DynamicsTarget>& targets);

double entropy_floor(double r_max, double entropy_coeff, double discount);

}  // namespace masklab
