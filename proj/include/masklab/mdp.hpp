#pragma once

// Exact finite-MDP substrate: transition/reward tensors, validity masks and
// brute-force policy evaluation (Q, V, advantage, discounted visitation).

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace masklab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Per-state action distribution, one row per state.
using PolicyTable = Matrix;

struct Transition {
  int next_state;
  double probability;
};

// Ordered set of named boolean facts describing a state.
class AbstractState {
 public:
  AbstractState() = default;

  // Throws InputError on a duplicate predicate name.
  void set(const std::string& name, bool value);
  bool get(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::pair<std::string, bool>>& predicates() const { return predicates_; }

  bool operator==(const AbstractState& other) const = default;

 private:
  std::vector<std::pair<std::string, bool>> predicates_;
};

// Per-action validity indicator for a single state.
class ValidityMask {
 public:
  ValidityMask() = default;
  explicit ValidityMask(std::vector<bool> valid) : valid_(std::move(valid)) {}

  static ValidityMask all_valid(int num_actions) {
    return ValidityMask(std::vector<bool>(static_cast<std::size_t>(num_actions), true));
  }

  int size() const { return static_cast<int>(valid_.size()); }
  bool valid(int action) const { return valid_.at(static_cast<std::size_t>(action)); }
  bool operator[](int action) const { return valid(action); }
  int count_valid() const;
  bool any_valid() const { return count_valid() > 0; }
  const std::vector<bool>& bits() const { return valid_; }

  bool operator==(const ValidityMask& other) const = default;

 private:
  std::vector<bool> valid_;
};

// Finite discounted MDP. Immutable after construction.
class TabularMdp {
 public:
  // transitions[s * num_actions + a] lists the successor distribution of (s, a).
  // Validates stochasticity (1e-12), discount in (0,1), initial distribution.
  TabularMdp(int num_states, int num_actions, std::vector<std::vector<Transition>> transitions,
             Matrix reward, double discount, Vector initial_dist);

  int num_states() const { return num_states_; }
  int num_actions() const { return num_actions_; }
  double discount() const { return discount_; }
  double r_max() const { return r_max_; }
  const Matrix& reward() const { return reward_; }
  double reward(int s, int a) const { return reward_(s, a); }
  const Vector& initial_dist() const { return initial_; }
  const std::vector<Transition>& successors(int s, int a) const {
    return transitions_[static_cast<std::size_t>(s) * num_actions_ + a];
  }

  // Dense P(s'|s,a); linear scan over the sparse successor list.
  double transition(int s, int a, int next) const;

 private:
  int num_states_;
  int num_actions_;
  std::vector<std::vector<Transition>> transitions_;
  Matrix reward_;
  double discount_;
  double r_max_;
  Vector initial_;
};

struct VisitationPartition {
  Vector d_pi;
  std::vector<int> visited;
  std::vector<int> unvisited;

  bool is_visited(int s) const { return d_pi(s) > kEpsilonVisited; }

  static constexpr double kEpsilonVisited = 1e-9;
};

// Throws InputError unless every row is a distribution over the MDP's actions.
void validate_policy(const TabularMdp& mdp, const PolicyTable& policy);

// State values V_pi. Direct LU solve when |S||A| <= 1e4, otherwise fixed-point
// iteration to a 1e-12 sup-norm residual.
Vector exact_state_values(const TabularMdp& mdp, const PolicyTable& policy);

Matrix exact_q_values(const TabularMdp& mdp, const PolicyTable& policy);

// Q from already-computed state values: R + gamma * P V.
Matrix q_from_values(const TabularMdp& mdp, const Vector& values);

Matrix exact_advantage(const TabularMdp& mdp, const PolicyTable& policy);

// Advantage from Q: A(s,a) = Q(s,a) - sum_a' pi(a'|s) Q(s,a').
Matrix advantage_from_q(const Matrix& q, const PolicyTable& policy);

// Sup norm of Q - (R + gamma P V_pi).
double bellman_residual(const TabularMdp& mdp, const PolicyTable& policy, const Matrix& q);

// Solves d = (1-gamma) mu0 + gamma P_pi^T d restricted to states reachable from
// the support of mu0; unreachable states get exactly zero mass.
VisitationPartition visitation_distribution(const TabularMdp& mdp, const PolicyTable& policy);

// Set of states reachable from the initial support along positive-probability
// policy actions and transitions.
std::vector<bool> reachable_states(const TabularMdp& mdp, const PolicyTable& policy);

struct DominanceEntry {
  int state;
  int action;
  double margin;          // max_{b valid} Q(s,b) - Q(s,a)
  double advantage;       // A(s,a)
  double advantage_bound;     // -margin * (1 - pi(a|s))
  bool bound_checked;     // bound only meaningful when condition (i) holds at s
};

struct DominanceReport {
  std::vector<DominanceEntry> entries;
  // Smallest margin over invalid actions per visited state (+inf if none).
  std::vector<std::pair<int, double>> min_margin;
  bool condition_holds = true;
  // max(0, A(s,a) - bound) over checked entries.
  double max_advantage_bound_violation = 0.0;

  const DominanceEntry* find(int state, int action) const;
};

// Measures the invalid-action dominance gap at every visited state. Throws
// StructuralError if a visited state has no valid action.
DominanceReport dominance_gap_check(const TabularMdp& mdp, const PolicyTable& policy,
                                    const std::vector<ValidityMask>& masks);

// Overload reusing an already-evaluated Q and visitation.
DominanceReport dominance_gap_check(const Matrix& q, const PolicyTable& policy,
                                    const VisitationPartition& visitation,
                                    const std::vector<ValidityMask>& masks);

PolicyTable uniform_policy(int num_states, int num_actions);

}  // namespace masklab
