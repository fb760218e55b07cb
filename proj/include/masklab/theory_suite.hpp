#pragma once

// The verify-theory battery: runs linear softmax dynamics on a grid of
// corridor MDPs and checks every identity of the suppression theory.

#include <iosfwd>
#include <string>
#include <vector>

#include "masklab/dynamics.hpp"

namespace masklab {

struct TheoryBatteryConfig {
  std::vector<int> lengths{3, 5, 8};
  std::vector<int> action_counts{4, 16, 43};
  std::vector<double> entropy_coeffs{0.0, 0.1, 1.0};
  std::vector<double> rhos{0.0, 0.5, 1.0};
  int num_steps = 10000;
  double learning_rate = 0.1;
  double discount = 0.9;
};

struct IdentityCheck {
  std::string name;
  double value = 0.0;      // residual or slack, as described by `name`
  double tolerance = 0.0;
  bool asserted = true;    // informational rows never fail the case
  bool pass = true;
  int step = -1;           // where the worst value occurred, -1 if not tracked
};

struct TheoryCaseResult {
  std::string label;
  int num_actions = 0;
  double entropy_coeff = 0.0;
  double rho = 0.0;
  std::vector<IdentityCheck> checks;
  double initial_bound = 0.0;
  double final_pi = 0.0;
  double final_cumulative = 0.0;
  double max_abs_kappa = 0.0;
  bool converged = false;
  bool flags_held = false;
  bool pass = true;

  const IdentityCheck* find(const std::string& name) const;
};

struct TheoryReport {
  std::vector<TheoryCaseResult> cases;
  double seconds = 0.0;
  bool pass = true;

  // Per-case rows, then the max residual per identity over the battery.
  void print(std::ostream& out) const;
  // "(case, step, identity)" triples for every asserted failure.
  std::vector<std::string> failures() const;
};

// Verifies one dynamics run. `expect_no_suppression` adds the rho = 0
// falsification checks.
TheoryCaseResult verify_dynamics_case(const std::string& label, const TabularMdp& mdp,
                                      const std::vector<ValidityMask>& masks,
                                      const Matrix& features, const DynamicsConfig& config,
                                      const std::vector<DynamicsTarget>& targets,
                                      bool expect_no_suppression);

TheoryReport run_theory_battery(const TheoryBatteryConfig& config);

// Battery for a user-supplied MDP. Targets are (s*, a) with s* unreachable
// under the uniform policy, a valid at s* and invalid at every reachable
// state. Features: reachable states e_s + u, target states (1-rho) e_s + rho u,
// the rest e_s.
TheoryReport run_theory_on_mdp(const TabularMdp& mdp, const std::vector<ValidityMask>& masks,
                               const TheoryBatteryConfig& config);

Matrix dial_features(const TabularMdp& mdp, const std::vector<int>& target_states, double rho);

}  // namespace masklab
