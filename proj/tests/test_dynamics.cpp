#include <gtest/gtest.h>

#include <cmath>

#include "masklab/dynamics.hpp"
#include "masklab/errors.hpp"
#include "test_util.hpp"

using namespace masklab;
using masklab::testing::random_mdp;
using masklab::testing::random_policy;

namespace {

TabularMdp one_state(const std::vector<double>& r, double gamma) {
  const int A = static_cast<int>(r.size());
  std::vector<std::vector<Transition>> t(static_cast<std::size_t>(A), {{0, 1.0}});
  Matrix R(1, A);
  for (int a = 0; a < A; ++a) R(0, a) = r[static_cast<std::size_t>(a)];
  return TabularMdp(1, A, t, R, gamma, Vector::Ones(1));
}

Matrix random_features(int S, int d, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix f(S, d);
  for (int i = 0; i < S; ++i)
    for (int j = 0; j < d; ++j) f(i, j) = n(gen);
  return f;
}

}  // namespace

TEST(LogitGrad, UniformExamples) {
  EXPECT_DOUBLE_EQ(logit_grad(uniform_policy(1, 2), 0, 1, 1), 0.5);
  EXPECT_DOUBLE_EQ(logit_grad(uniform_policy(1, 4), 0, 0, 2), -0.25);
}

TEST(LogitGrad, MatchesFiniteDifferenceOfLogSoftmax) {
  Matrix z(1, 2);
  z << std::log(0.9), std::log(0.1);
  const PolicyTable pi = log_softmax_rows(z).array().exp();
  EXPECT_NEAR(logit_grad(pi, 0, 0, 0), 0.1, 1e-12);
  for (int taken = 0; taken < 2; ++taken) {
    const double h = 1e-6;
    Matrix zp = z, zm = z;
    zp(0, 0) += h;
    zm(0, 0) -= h;
    const double fd = (log_softmax_rows(zp)(0, taken) - log_softmax_rows(zm)(0, taken)) / (2 * h);
    EXPECT_NEAR(logit_grad(pi, 0, taken, 0), fd, 1e-8);
  }
}

TEST(LinearSoftmax, UniformInitIsExactlyOneOverN) {
  const LinearSoftmaxPolicy p = LinearSoftmaxPolicy::uniform(random_features(4, 3, 1), 43);
  EXPECT_LT((p.probs().array() - 1.0 / 43.0).abs().maxCoeff(), 1e-16);
  EXPECT_NEAR(1.0 / 43.0, 0.023, 5e-4);
}

TEST(LinearSoftmax, RowsSumToOneUnderLargeLogits) {
  Matrix w = 300.0 * random_features(5, 3, 4);
  const LinearSoftmaxPolicy p(random_features(6, 3, 2), w);
  const PolicyTable pi = p.probs();
  for (int s = 0; s < 6; ++s) EXPECT_NEAR(pi.row(s).sum(), 1.0, 1e-12);
}

TEST(ExpectedLogitUpdate, ZeroRewardGivesZero) {
  const TabularMdp m = one_state({0.0, 0.0, 0.0}, 0.9);
  EXPECT_EQ(expected_logit_updates(m, uniform_policy(1, 3)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ExpectedLogitUpdate, HandComputedTwoActionCase) {
  // r = (0, 1), gamma = 0.5, uniform: Q = r + 0.5 V, V = 0.5 + 0.5 V = 1, so A = (-0.5, 0.5).
  const TabularMdp m = one_state({0.0, 1.0}, 0.5);
  EXPECT_NEAR(expected_logit_update(m, uniform_policy(1, 2), 0, 0), -0.25, 1e-12);
  EXPECT_NEAR(expected_logit_update(m, uniform_policy(1, 2), 0, 1), 0.25, 1e-12);
}

TEST(ExpectedLogitUpdate, SumOverActionsIsZero) {
  const TabularMdp m = random_mdp(5, 4, 3);
  const Matrix u = expected_logit_updates(m, random_policy(5, 4, 9));
  EXPECT_LT(u.rowwise().sum().cwiseAbs().maxCoeff(), 1e-12);
}

// Monte Carlo over 10^6 actions: mean of logit_grad(a', a) * A(s, a') must
// match pi(a|s) A(s,a) within 3 standard errors.
TEST(ExpectedLogitUpdate, MatchesMonteCarloAverage) {
  const TabularMdp m = random_mdp(3, 4, 11);
  const PolicyTable pi = random_policy(3, 4, 12);
  const Matrix adv = exact_advantage(m, pi);
  Rng rng(5);
  const int s = 1;
  const int N = 1000000;
  for (int target = 0; target < 4; ++target) {
    double sum = 0.0, sq = 0.0;
    Rng local(rng());
    for (int i = 0; i < N; ++i) {
      double u = uniform01(local);
      int a = 0;
      while (a < 3 && u >= pi(s, a)) u -= pi(s, a++);
      const double x = logit_grad(pi, s, a, target) * adv(s, a);
      sum += x;
      sq += x * x;
    }
    const double mean = sum / N;
    const double se = std::sqrt((sq / N - mean * mean) / N);
    EXPECT_LT(std::abs(mean - expected_logit_update(m, pi, s, target)), 3.0 * se);
  }
}

TEST(ExpectedParamUpdate, ZeroRewardGivesZero) {
  const TabularMdp m = one_state({0.0, 0.0}, 0.9);
  const LinearSoftmaxPolicy p = LinearSoftmaxPolicy::uniform(Matrix::Ones(1, 2), 2);
  EXPECT_EQ(expected_param_update(p, m, 0.1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ExpectedParamUpdate, ColumnSumsVanish) {
  const TabularMdp m = random_mdp(6, 5, 21);
  const LinearSoftmaxPolicy p(random_features(6, 4, 22), random_features(5, 4, 23));
  for (double beta : {0.0, 0.3}) {
    const Matrix dw = expected_param_update(p, m, 0.1, beta);
    EXPECT_LT(dw.colwise().sum().cwiseAbs().maxCoeff(), 1e-12);
  }
}

// Two visited corridor states, descend invalid at both: the descend weight
// delta is minus eta times a positive combination of the visited features,
// assembled by hand from d_pi, pi and A.
TEST(ExpectedParamUpdate, InvalidActionGetsNegativeCombinationOfVisitedFeatures) {
  const PreVisitCorridor c = pre_visit_corridor(3, 4, 0.9);
  const Matrix phi = correlated_corridor_features(c, 1.0);
  const LinearSoftmaxPolicy p = LinearSoftmaxPolicy::uniform(phi, 4);
  const double eta = 0.5;
  const Matrix dw = expected_param_update(p, c.mdp, eta);
  const PolicyTable pi = p.probs();
  const Matrix adv = exact_advantage(c.mdp, pi);
  const VisitationPartition d = visitation_distribution(c.mdp, pi);
  Vector hand = Vector::Zero(phi.cols());
  for (int s : d.visited) {
    const double cs = pi(s, StaircaseCorridor::kDescend) * std::abs(adv(s, StaircaseCorridor::kDescend));
    EXPECT_GT(cs, 0.0);
    hand += d.d_pi(s) * cs * phi.row(s).transpose();
  }
  hand *= -eta;
  EXPECT_LT((dw.row(StaircaseCorridor::kDescend).transpose() - hand).cwiseAbs().maxCoeff(), 1e-12);
  for (int j = 0; j < hand.size(); ++j) EXPECT_LE(dw(StaircaseCorridor::kDescend, j), 0.0);
}

TEST(SampledParamUpdate, MeanWithinFourStandardErrors) {
  const TabularMdp m = random_mdp(4, 3, 31);
  const LinearSoftmaxPolicy p(random_features(4, 3, 32), random_features(3, 3, 33));
  Rng rng(7);
  const SampledUpdate su = sampled_param_update(p, m, 0.1, 100000, rng);
  const Matrix exact = expected_param_update(p, m, 0.1);
  for (int a = 0; a < 3; ++a)
    for (int j = 0; j < 3; ++j)
      EXPECT_LE(std::abs(su.mean(a, j) - exact(a, j)), 4.0 * su.standard_error(a, j) + 1e-15);
}

TEST(SuppressionRate, OrthogonalFeaturesGiveZeroRate) {
  const PreVisitCorridor c = pre_visit_corridor(5, 4, 0.9);
  const LinearSoftmaxPolicy p = LinearSoftmaxPolicy::uniform(correlated_corridor_features(c, 0.0), 4);
  const SuppressionRate r =
      suppression_rate(p, c.mdp, c.masks, c.staircase_state, StaircaseCorridor::kDescend, 0.1);
  EXPECT_EQ(r.kappa, 0.0);
  EXPECT_FALSE(r.condition_ii_ok);
  EXPECT_TRUE(r.condition_i_ok);
  EXPECT_TRUE(r.target_unvisited);
}

// rho = 1 with phi(s) = e_s + u on the corridor and phi(s*) = u gives
// kappa = eta * sum_s d(s) c(s) <u, e_s + u> = eta * E[c(s)].
TEST(SuppressionRate, SharedDirectionClosedForm) {
  const PreVisitCorridor c = pre_visit_corridor(5, 4, 0.9);
  const Matrix phi = correlated_corridor_features(c, 1.0);
  const LinearSoftmaxPolicy p = LinearSoftmaxPolicy::uniform(phi, 4);
  const double eta = 0.2;
  const PolicyTable pi = p.probs();
  const Matrix adv = exact_advantage(c.mdp, pi);
  const VisitationPartition d = visitation_distribution(c.mdp, pi);
  double ec = 0.0;
  for (int s : d.visited) ec += d.d_pi(s) * pi(s, 2) * std::abs(adv(s, 2));
  const SuppressionRate r = suppression_rate(p, c.mdp, c.masks, c.staircase_state, 2, eta);
  EXPECT_NEAR(r.kappa, eta * ec * phi.row(c.staircase_state).squaredNorm(), 1e-14);
  EXPECT_GT(r.kappa, 0.0);
  EXPECT_TRUE(r.condition_ii_ok);
}

TEST(SuppressionRate, EqualsRealizedLogitDrop) {
  const PreVisitCorridor c = pre_visit_corridor(6, 5, 0.9);
  LinearSoftmaxPolicy p = LinearSoftmaxPolicy::uniform(correlated_corridor_features(c, 0.6), 5);
  const double eta = 0.3;
  for (int step = 0; step < 20; ++step) {
    const SuppressionRate r = suppression_rate(p, c.mdp, c.masks, c.staircase_state, 2, eta);
    const double before = p.logits()(c.staircase_state, 2);
    p.apply_update(expected_param_update(p, c.mdp, eta));
    const double after = p.logits()(c.staircase_state, 2);
    EXPECT_NEAR(r.kappa, before - after, 1e-10);
  }
}

TEST(ZeroSum, ExpectedAndSampledAndEntropy) {
  const TabularMdp m = random_mdp(5, 4, 41);
  const LinearSoftmaxPolicy p(random_features(5, 3, 42), random_features(4, 3, 43));
  EXPECT_LT(zero_sum_check(p, m, 0.0).max_expected_sum, 1e-12);
  EXPECT_LT(zero_sum_check(p, m, 0.01).max_expected_sum, 1e-12);
  EXPECT_LT(zero_sum_check(p, m, 0.0).max_sampled_sum, 1e-12);
}

TEST(ZeroSum, UniformPolicyEntropyCorrectionVanishes) {
  const TabularMdp m = random_mdp(4, 6, 44);
  const LinearSoftmaxPolicy p = LinearSoftmaxPolicy::uniform(random_features(4, 3, 45), 6);
  for (double beta : {0.01, 1.0, 10.0}) {
    EXPECT_LT(zero_sum_check(p, m, beta).max_uniform_entropy_correction, 1e-15);
  }
}

TEST(RunDynamics, ZeroStepsLeavesUniformAndBound) {
  const PreVisitCorridor c = pre_visit_corridor(5, 4, 0.9);
  DynamicsConfig cfg;
  cfg.num_steps = 0;
  const DynamicsResult r =
      run_dynamics(c.mdp, c.masks, correlated_corridor_features(c, 1.0), cfg, {{c.staircase_state, 2}});
  ASSERT_EQ(r.traces.size(), 1u);
  ASSERT_FALSE(r.traces[0].steps.empty());
  const SuppressionStep& s0 = r.traces[0].steps.front();
  EXPECT_EQ(s0.cumulative, 0.0);
  EXPECT_DOUBLE_EQ(s0.pi_target, 0.25);
  EXPECT_DOUBLE_EQ(s0.bound, 0.25);
}

TEST(RunDynamics, BoundAndCumulativeRateAlongTrace) {
  const PreVisitCorridor c = pre_visit_corridor(6, 8, 0.9);
  DynamicsConfig cfg;
  cfg.num_steps = 500;
  cfg.learning_rate = 1.0;
  const DynamicsResult r =
      run_dynamics(c.mdp, c.masks, correlated_corridor_features(c, 0.8), cfg, {{c.staircase_state, 2}});
  const SuppressionTrace& t = r.traces[0];
  EXPECT_TRUE(t.flags_held_throughout);
  EXPECT_LE(t.max_bound_excess, 1e-12);
  EXPECT_GE(t.min_jensen_slack, -1e-12);
  EXPECT_LT(t.max_unvisited_residual, 1e-10);
  double k = 0.0;
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    EXPECT_DOUBLE_EQ(t.steps[i].cumulative, k);
    EXPECT_NEAR(t.steps[i].bound, std::exp(-k) / 8.0, 1e-15);
    if (i > 0) EXPECT_GE(t.steps[i].cumulative, t.steps[i - 1].cumulative);
    k += t.steps[i].kappa;
  }
  EXPECT_LT(t.steps.back().pi_target, 1.0 / 8.0);
}

TEST(RunDynamics, RhoZeroLeavesTargetAtUniform) {
  const PreVisitCorridor c = pre_visit_corridor(5, 6, 0.9);
  DynamicsConfig cfg;
  cfg.num_steps = 300;
  cfg.learning_rate = 1.0;
  const DynamicsResult r =
      run_dynamics(c.mdp, c.masks, correlated_corridor_features(c, 0.0), cfg, {{c.staircase_state, 2}});
  for (const auto& s : r.traces[0].steps) {
    EXPECT_NEAR(s.pi_target, 1.0 / 6.0, 1e-10);
    EXPECT_LT(std::abs(s.realized_change), 1e-12);
  }
}

TEST(RunDynamics, OverflowIsReported) {
  const PreVisitCorridor c = pre_visit_corridor(4, 4, 0.9);
  DynamicsConfig cfg;
  cfg.num_steps = 2000;
  cfg.learning_rate = 1e6;
  EXPECT_THROW(run_dynamics(c.mdp, c.masks, 1e3 * correlated_corridor_features(c, 1.0), cfg,
                            {{c.staircase_state, 2}}),
               NumericalError);
}

TEST(EntropyFloor, ClosedForm) {
  EXPECT_NEAR(entropy_floor(1.0, 1.0, 0.9), std::exp(-10.0), 1e-18);
  EXPECT_NEAR(entropy_floor(1.0, 1.0, 0.9), 4.54e-5, 1e-7);
}

TEST(SuppressionTraceCsv, HeaderColumns) {
  const PreVisitCorridor c = pre_visit_corridor(4, 4, 0.9);
  DynamicsConfig cfg;
  cfg.num_steps = 2;
  const DynamicsResult r =
      run_dynamics(c.mdp, c.masks, correlated_corridor_features(c, 1.0), cfg, {{c.staircase_state, 2}});
  std::ostringstream out;
  r.traces[0].write_csv(out);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "step,kappa,K,pi_target,bound,log_pi_target,cond_i,cond_ii");
}
