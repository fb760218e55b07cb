#include "masklab/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "masklab/errors.hpp"

namespace masklab {

namespace {

double logsumexp(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const double m = row.maxCoeff();
  return m + std::log((row.array() - m).exp().sum());
}

int sample_categorical(const Eigen::Ref<const Eigen::RowVectorXd>& probs, Rng& rng) {
  const double u = uniform01(rng) * probs.sum();
  double acc = 0.0;
  for (int i = 0; i < probs.size(); ++i) {
    acc += probs(i);
    if (u < acc) return i;
  }
  for (int i = static_cast<int>(probs.size()) - 1; i >= 0; --i) {
    if (probs(i) > 0.0) return i;
  }
  return 0;
}

struct StepState {
  Matrix logits;
  Matrix log_probs;
  PolicyTable probs;
  Matrix q;
  Matrix advantage;
  VisitationPartition visitation;
};

StepState evaluate_state(const LinearSoftmaxPolicy& policy, const TabularMdp& mdp) {
  StepState st;
  st.logits = policy.logits();
  const double biggest = st.logits.cwiseAbs().maxCoeff();
  if (!std::isfinite(biggest) || biggest > DynamicsConfig::kLogitOverflow) {
    std::ostringstream msg;
    msg << "logit overflow: max |z| = " << biggest;
    throw NumericalError(msg.str());
  }
  st.log_probs = log_softmax_rows(st.logits);
  st.probs = st.log_probs.array().exp();
  // Renormalize away the last-ulp error of exp(log-softmax).
  for (int s = 0; s < st.probs.rows(); ++s) st.probs.row(s) /= st.probs.row(s).sum();
  st.q = q_from_values(mdp, exact_state_values(mdp, st.probs));
  st.advantage = advantage_from_q(st.q, st.probs);
  st.visitation = visitation_distribution(mdp, st.probs);
  return st;
}

// eta * G^T diag(d) Phi
Matrix weight_delta(const Matrix& directions, const Vector& d_pi, const Matrix& features,
                    double learning_rate) {
  return learning_rate * directions.transpose() * d_pi.asDiagonal() * features;
}

bool condition_i(const StepState& st, const std::vector<ValidityMask>& masks, int action) {
  for (int s : st.visitation.visited) {
    if (masks[s][action]) return false;
    double best = -std::numeric_limits<double>::infinity();
    for (int b = 0; b < masks[s].size(); ++b) {
      if (masks[s][b]) best = std::max(best, st.q(s, b));
    }
    if (!(best - st.q(s, action) > 0.0)) return false;
  }
  return true;
}

}  // namespace

LinearSoftmaxPolicy::LinearSoftmaxPolicy(Matrix features, Matrix weights)
    : features_(std::move(features)), weights_(std::move(weights)) {
  if (features_.cols() != weights_.cols()) throw InputError("feature and weight dimensions differ");
  if (weights_.rows() < 1) throw InputError("policy needs at least one action");
}

LinearSoftmaxPolicy LinearSoftmaxPolicy::uniform(Matrix features, int num_actions) {
  const auto dim = features.cols();
  return LinearSoftmaxPolicy(std::move(features), Matrix::Zero(num_actions, dim));
}

Matrix LinearSoftmaxPolicy::logits() const { return features_ * weights_.transpose(); }

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (int s = 0; s < logits.rows(); ++s) out.row(s) = logits.row(s).array() - logsumexp(logits.row(s));
  return out;
}

Matrix LinearSoftmaxPolicy::log_probs() const { return log_softmax_rows(logits()); }

PolicyTable LinearSoftmaxPolicy::probs() const {
  PolicyTable p = log_probs().array().exp();
  for (int s = 0; s < p.rows(); ++s) p.row(s) /= p.row(s).sum();
  return p;
}

void LinearSoftmaxPolicy::apply_update(const Matrix& delta_weights) {
  if (delta_weights.rows() != weights_.rows() || delta_weights.cols() != weights_.cols()) {
    throw InputError("weight update has wrong shape");
  }
  weights_ += delta_weights;
}

double logit_grad(const PolicyTable& policy, int state, int a_taken, int a_target) {
  return (a_taken == a_target ? 1.0 : 0.0) - policy(state, a_target);
}

Matrix expected_logit_updates(const TabularMdp& mdp, const PolicyTable& policy) {
  return policy.cwiseProduct(exact_advantage(mdp, policy));
}

double expected_logit_update(const TabularMdp& mdp, const PolicyTable& policy, int state, int action) {
  return expected_logit_updates(mdp, policy)(state, action);
}

Matrix entropy_logit_updates(const Matrix& log_probs, const Matrix& advantage, double beta) {
  const Matrix probs = log_probs.array().exp();
  if (beta == 0.0) return probs.cwiseProduct(advantage);
  Matrix out(probs.rows(), probs.cols());
  for (int s = 0; s < probs.rows(); ++s) {
    const double entropy = -(probs.row(s).array() * log_probs.row(s).array()).sum();
    out.row(s) = probs.row(s).array() *
                 (advantage.row(s).array() - beta * log_probs.row(s).array() - beta * entropy);
  }
  return out;
}

Matrix expected_param_update(const LinearSoftmaxPolicy& policy, const TabularMdp& mdp,
                             double learning_rate, double entropy_coeff) {
  if (!(learning_rate > 0.0)) throw InputError("learning rate must be positive");
  if (!(entropy_coeff >= 0.0)) throw InputError("entropy coefficient must be non-negative");
  const StepState st = evaluate_state(policy, mdp);
  const Matrix g = entropy_logit_updates(st.log_probs, st.advantage, entropy_coeff);
  return weight_delta(g, st.visitation.d_pi, policy.features(), learning_rate);
}

SampledUpdate sampled_param_update(const LinearSoftmaxPolicy& policy, const TabularMdp& mdp,
                                   double learning_rate, int num_samples, Rng& rng) {
  if (num_samples < 2) throw InputError("need at least two samples");
  const StepState st = evaluate_state(policy, mdp);
  const int n = policy.num_actions();
  const int dim = policy.feature_dim();
  Matrix sum = Matrix::Zero(n, dim);
  Matrix sum_sq = Matrix::Zero(n, dim);
  const Eigen::RowVectorXd d_row = st.visitation.d_pi.transpose();
  for (int i = 0; i < num_samples; ++i) {
    const int s = sample_categorical(d_row, rng);
    const int a = sample_categorical(st.probs.row(s), rng);
    Eigen::RowVectorXd coeff = -st.probs.row(s);
    coeff(a) += 1.0;
    const Matrix sample =
        learning_rate * st.advantage(s, a) * coeff.transpose() * policy.features().row(s);
    sum += sample;
    sum_sq += sample.cwiseProduct(sample);
  }
  SampledUpdate out;
  out.num_samples = num_samples;
  out.mean = sum / num_samples;
  const Matrix var =
      ((sum_sq / num_samples) - out.mean.cwiseProduct(out.mean)) * (num_samples / (num_samples - 1.0));
  out.standard_error = (var.cwiseMax(0.0) / num_samples).cwiseSqrt();
  return out;
}

SuppressionRate suppression_rate(const LinearSoftmaxPolicy& policy, const TabularMdp& mdp,
                                 const std::vector<ValidityMask>& masks, int target_state,
                                 int target_action, double learning_rate) {
  const StepState st = evaluate_state(policy, mdp);
  const Vector kernel = policy.features() * policy.features().row(target_state).transpose();
  SuppressionRate out;
  double plain = 0.0;
  double signed_update = 0.0;
  for (int s : st.visitation.visited) {
    const double w = st.visitation.d_pi(s) * kernel(s);
    plain += w * st.probs(s, target_action) * std::abs(st.advantage(s, target_action));
    signed_update += w * st.probs(s, target_action) * st.advantage(s, target_action);
  }
  out.kappa = learning_rate * plain;
  out.signed_kappa = -learning_rate * signed_update;
  out.condition_i_ok = condition_i(st, masks, target_action);
  out.condition_ii_ok = out.kappa > 0.0;
  out.target_unvisited = !st.visitation.is_visited(target_state);
  return out;
}

ZeroSumReport zero_sum_check(const LinearSoftmaxPolicy& policy, const TabularMdp& mdp,
                             double entropy_coeff, double learning_rate) {
  const StepState st = evaluate_state(policy, mdp);
  const Matrix g = entropy_logit_updates(st.log_probs, st.advantage, entropy_coeff);
  const Matrix dw = weight_delta(g, st.visitation.d_pi, policy.features(), learning_rate);
  ZeroSumReport out;
  const Vector per_state = policy.features() * dw.colwise().sum().transpose();
  out.max_expected_sum = per_state.cwiseAbs().maxCoeff();
  // Direct per-state sum of the logit-update directions (no parameter sharing).
  out.max_expected_sum = std::max(out.max_expected_sum, g.rowwise().sum().cwiseAbs().maxCoeff());
  for (int s = 0; s < st.probs.rows(); ++s) {
    for (int a = 0; a < st.probs.cols(); ++a) {
      double total = 0.0;
      for (int j = 0; j < st.probs.cols(); ++j) total += (a == j ? 1.0 : 0.0) - st.probs(s, j);
      out.max_sampled_sum = std::max(out.max_sampled_sum, std::abs(total));
    }
  }
  const double n = static_cast<double>(st.probs.cols());
  if ((st.probs.array() == 1.0 / n).all()) {
    for (int s = 0; s < st.probs.rows(); ++s) {
      const double entropy = -(st.probs.row(s).array() * st.log_probs.row(s).array()).sum();
      for (int a = 0; a < st.probs.cols(); ++a) {
        const double correction = -entropy_coeff * st.log_probs(s, a) - entropy_coeff * entropy;
        out.max_uniform_entropy_correction =
            std::max(out.max_uniform_entropy_correction, std::abs(correction));
      }
    }
  }
  return out;
}

double entropy_floor(double r_max, double entropy_coeff, double discount) {
  return std::exp(-r_max / (entropy_coeff * (1.0 - discount)));
}

void SuppressionTrace::write_csv(std::ostream& out) const {
  out << "step,kappa,K,pi_target,bound,log_pi_target,cond_i,cond_ii\n";
  const auto old_precision = out.precision(17);
  for (const auto& row : steps) {
    out << row.step << ',' << row.kappa << ',' << row.cumulative << ',' << row.pi_target << ','
        << row.bound << ',' << row.log_pi_target << ',' << (row.cond_i ? 1 : 0) << ','
        << (row.cond_ii ? 1 : 0) << '\n';
  }
  out.precision(old_precision);
}

DynamicsResult run_dynamics(const TabularMdp& mdp, const std::vector<ValidityMask>& masks,
                            const Matrix& features, const DynamicsConfig& config,
                            const std::vector<DynamicsTarget>& targets) {
  if (!(config.learning_rate > 0.0)) throw InputError("learning rate must be positive");
  if (!(config.entropy_coeff >= 0.0)) throw InputError("entropy coefficient must be non-negative");
  if (config.num_steps < 0) throw InputError("step count must be non-negative");
  if (features.rows() != mdp.num_states()) throw InputError("one feature row per state required");
  if (static_cast<int>(masks.size()) != mdp.num_states()) throw InputError("one mask per state required");

  const int n = mdp.num_actions();
  const double log_n = std::log(static_cast<double>(n));
  const double beta = config.entropy_coeff;
  const double eta = config.learning_rate;

  DynamicsResult result{{}, LinearSoftmaxPolicy::uniform(features, n)};
  LinearSoftmaxPolicy& policy = result.final_policy;
  const Matrix initial_logits = policy.logits();

  std::vector<Vector> kernels;
  for (const auto& t : targets) {
    if (t.state < 0 || t.state >= mdp.num_states() || t.action < 0 || t.action >= n) {
      throw InputError("dynamics target out of range");
    }
    SuppressionTrace trace;
    trace.target_state = t.state;
    trace.target_action = t.action;
    trace.num_actions = n;
    if (beta > 0.0) trace.entropy_floor = entropy_floor(mdp.r_max(), beta, mdp.discount());
    result.traces.push_back(std::move(trace));
    kernels.push_back(features * features.row(t.state).transpose());
  }
  std::vector<double> cumulative(targets.size(), 0.0);
  std::vector<bool> flags_so_far(targets.size(), true);

  Rng rng(config.seed);
  int quiet_steps = 0;
  for (int step = 0;; ++step) {
    const StepState st = evaluate_state(policy, mdp);
    const Matrix g = entropy_logit_updates(st.log_probs, st.advantage, beta);

    const double adv_expectation =
        (st.probs.array() * st.advantage.array()).rowwise().sum().abs().maxCoeff();
    if (adv_expectation > result.max_advantage_expectation) {
      result.max_advantage_expectation = adv_expectation;
      result.advantage_expectation_step = step;
    }
    const DominanceReport dominance = dominance_gap_check(st.q, st.probs, st.visitation, masks);
    result.max_advantage_bound_violation =
        std::max(result.max_advantage_bound_violation, dominance.max_advantage_bound_violation);

    Matrix dw;
    if (config.update_mode == UpdateMode::kExpected) {
      dw = weight_delta(g, st.visitation.d_pi, features, eta);
    } else {
      dw = Matrix::Zero(n, features.cols());
      const Eigen::RowVectorXd d_row = st.visitation.d_pi.transpose();
      for (int i = 0; i < config.samples_per_step; ++i) {
        const int s = sample_categorical(d_row, rng);
        const int a = sample_categorical(st.probs.row(s), rng);
        Eigen::RowVectorXd coeff = -st.probs.row(s);
        coeff(a) += 1.0;
        const double signal = st.advantage(s, a) - beta * st.log_probs(s, a);
        dw += (eta * signal / config.samples_per_step) * coeff.transpose() * features.row(s);
      }
    }
    const bool last = step >= config.num_steps;

    // Expected zero-sum through parameter sharing, every state.
    const Vector expected_sum = features * dw.colwise().sum().transpose();
    if (expected_sum.cwiseAbs().maxCoeff() > result.max_expected_zero_sum) {
      result.max_expected_zero_sum = expected_sum.cwiseAbs().maxCoeff();
      result.expected_zero_sum_step = step;
    }

    Matrix next_logits;
    if (!last) {
      LinearSoftmaxPolicy next = policy;
      next.apply_update(dw);
      next_logits = next.logits();
    }

    for (std::size_t i = 0; i < targets.size(); ++i) {
      const auto& t = targets[i];
      SuppressionTrace& trace = result.traces[i];
      double predicted = 0.0;
      double plain = 0.0;
      for (int s : st.visitation.visited) {
        const double w = st.visitation.d_pi(s) * kernels[i](s);
        predicted += w * g(s, t.action);
        plain += w * st.probs(s, t.action) * std::abs(st.advantage(s, t.action));
      }
      predicted *= eta;

      SuppressionStep row;
      row.step = step;
      row.kappa = config.update_mode == UpdateMode::kExpected ? -predicted : 0.0;
      row.kappa_plain = eta * plain;
      row.cumulative = cumulative[i];
      row.log_pi_target = st.log_probs(t.state, t.action);
      row.pi_target = std::exp(row.log_pi_target);
      row.log_bound = -cumulative[i] - log_n;
      row.bound = std::exp(row.log_bound);
      row.cond_i = condition_i(st, masks, t.action) && !st.visitation.is_visited(t.state);
      row.cond_ii = row.kappa_plain > 0.0 && row.kappa > 0.0;

      const double excess = row.log_pi_target - row.log_bound;
      trace.max_bound_excess_unconditional = std::max(trace.max_bound_excess_unconditional, excess);
      if (flags_so_far[i]) trace.max_bound_excess = std::max(trace.max_bound_excess, excess);

      const Eigen::RowVectorXd sigma = st.logits.row(t.state) - initial_logits.row(t.state);
      trace.min_jensen_slack = std::min(trace.min_jensen_slack, logsumexp(sigma) - log_n);

      if (!last) {
        row.realized_change = next_logits(t.state, t.action) - st.logits(t.state, t.action);
        if (config.update_mode == UpdateMode::kSampled) row.kappa = -row.realized_change;
        if (config.update_mode == UpdateMode::kExpected) {
          // Predicted logit change at every unvisited state for this action.
          for (int s_prime : st.visitation.unvisited) {
            const Vector k = features * features.row(s_prime).transpose();
            double pred = 0.0;
            for (int s : st.visitation.visited) pred += st.visitation.d_pi(s) * k(s) * g(s, t.action);
            pred *= eta;
            const double realized = next_logits(s_prime, t.action) - st.logits(s_prime, t.action);
            const double residual = std::abs(pred - realized);
            trace.max_unvisited_residual = std::max(trace.max_unvisited_residual, residual);
            if (residual > result.max_unvisited_residual) {
              result.max_unvisited_residual = residual;
              result.unvisited_residual_step = step;
            }
          }
        }
        cumulative[i] += row.kappa;
        flags_so_far[i] = flags_so_far[i] && row.cond_i && row.cond_ii;
        trace.flags_held_throughout = flags_so_far[i];
      }
      trace.steps.push_back(row);
    }

    if (last) {
      result.steps_run = step;
      break;
    }

    const Matrix change = next_logits - st.logits;
    const double zero_sum = change.rowwise().sum().cwiseAbs().maxCoeff();
    if (zero_sum > result.max_zero_sum) {
      result.max_zero_sum = zero_sum;
      result.zero_sum_step = step;
    }
    const double max_change = change.cwiseAbs().maxCoeff();
    policy.apply_update(dw);

    quiet_steps = max_change < DynamicsConfig::kConvergenceTol ? quiet_steps + 1 : 0;
    if (!result.converged && quiet_steps >= DynamicsConfig::kConvergenceWindow) {
      result.converged = true;
      result.converged_at = step + 1;
      if (config.stop_on_convergence) {
        // Record the converged iterate as the final row.
        const StepState fin = evaluate_state(policy, mdp);
        for (std::size_t i = 0; i < targets.size(); ++i) {
          SuppressionStep row;
          row.step = step + 1;
          row.cumulative = cumulative[i];
          row.log_pi_target = fin.log_probs(targets[i].state, targets[i].action);
          row.pi_target = std::exp(row.log_pi_target);
          row.log_bound = -cumulative[i] - log_n;
          row.bound = std::exp(row.log_bound);
          row.cond_i = condition_i(fin, masks, targets[i].action);
          const double excess = row.log_pi_target - row.log_bound;
          auto& trace = result.traces[i];
          trace.max_bound_excess_unconditional =
              std::max(trace.max_bound_excess_unconditional, excess);
          if (flags_so_far[i]) trace.max_bound_excess = std::max(trace.max_bound_excess, excess);
          trace.steps.push_back(row);
        }
        result.steps_run = step + 1;
        break;
      }
    }
  }
  return result;
}

}  // namespace masklab
