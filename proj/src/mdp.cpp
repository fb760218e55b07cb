#include "masklab/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

#include "masklab/errors.hpp"

namespace masklab {

namespace {

constexpr double kStochasticTol = 1e-12;
constexpr double kPolicyTol = 1e-9;
constexpr long kDirectSolveLimit = 10000;
constexpr double kIterationResidual = 1e-12;

bool use_direct_solve(const TabularMdp& mdp) {
  return static_cast<long>(mdp.num_states()) * mdp.num_actions() <= kDirectSolveLimit;
}

// r_pi(s) = sum_a pi(a|s) R(s,a)
Vector policy_reward(const TabularMdp& mdp, const PolicyTable& policy) {
  return (policy.array() * mdp.reward().array()).rowwise().sum();
}

Matrix dense_policy_transition(const TabularMdp& mdp, const PolicyTable& policy) {
  const int n_states = mdp.num_states();
  Matrix p = Matrix::Zero(n_states, n_states);
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < mdp.num_actions(); ++a) {
      const double pa = policy(s, a);
      if (pa == 0.0) continue;
      for (const auto& t : mdp.successors(s, a)) p(s, t.next_state) += pa * t.probability;
    }
  }
  return p;
}

// y = P_pi x, sparse.
Vector apply_policy_transition(const TabularMdp& mdp, const PolicyTable& policy, const Vector& x) {
  Vector y = Vector::Zero(mdp.num_states());
  for (int s = 0; s < mdp.num_states(); ++s) {
    double acc = 0.0;
    for (int a = 0; a < mdp.num_actions(); ++a) {
      const double pa = policy(s, a);
      if (pa == 0.0) continue;
      double inner = 0.0;
      for (const auto& t : mdp.successors(s, a)) inner += t.probability * x(t.next_state);
      acc += pa * inner;
    }
    y(s) = acc;
  }
  return y;
}

}  // namespace

void AbstractState::set(const std::string& name, bool value) {
  if (has(name)) throw InputError("duplicate predicate: " + name);
  predicates_.emplace_back(name, value);
}

bool AbstractState::has(const std::string& name) const {
  return std::any_of(predicates_.begin(), predicates_.end(),
                     [&](const auto& p) { return p.first == name; });
}

bool AbstractState::get(const std::string& name) const {
  for (const auto& [key, value] : predicates_) {
    if (key == name) return value;
  }
  throw InputError("unknown predicate: " + name);
}

int ValidityMask::count_valid() const {
  return static_cast<int>(std::count(valid_.begin(), valid_.end(), true));
}

TabularMdp::TabularMdp(int num_states, int num_actions,
                       std::vector<std::vector<Transition>> transitions, Matrix reward,
                       double discount, Vector initial_dist)
    : num_states_(num_states),
      num_actions_(num_actions),
      transitions_(std::move(transitions)),
      reward_(std::move(reward)),
      discount_(discount),
      r_max_(0.0),
      initial_(std::move(initial_dist)) {
  if (num_states_ <= 0 || num_actions_ <= 0) throw InputError("MDP needs at least one state and action");
  if (!(discount_ > 0.0 && discount_ < 1.0)) throw InputError("discount must lie in (0, 1)");
  if (static_cast<long>(transitions_.size()) != static_cast<long>(num_states_) * num_actions_) {
    throw InputError("transition table has wrong size");
  }
  if (reward_.rows() != num_states_ || reward_.cols() != num_actions_) {
    throw InputError("reward tensor has wrong shape");
  }
  if (initial_.size() != num_states_) throw InputError("initial distribution has wrong size");
  for (int s = 0; s < num_states_; ++s) {
    for (int a = 0; a < num_actions_; ++a) {
      double total = 0.0;
      for (const auto& t : successors(s, a)) {
        if (t.next_state < 0 || t.next_state >= num_states_) {
          throw InputError("transition target out of range");
        }
        if (!(t.probability >= 0.0)) throw InputError("negative transition probability");
        total += t.probability;
      }
      if (std::abs(total - 1.0) > kStochasticTol) {
        std::ostringstream msg;
        msg << "transition row (" << s << "," << a << ") sums to " << total;
        throw InputError(msg.str());
      }
    }
  }
  if (!reward_.allFinite()) throw InputError("reward tensor must be finite");
  r_max_ = reward_.cwiseAbs().maxCoeff();
  if ((initial_.array() < 0.0).any() || std::abs(initial_.sum() - 1.0) > kStochasticTol) {
    throw InputError("initial distribution must be a probability vector");
  }
}

double TabularMdp::transition(int s, int a, int next) const {
  double p = 0.0;
  for (const auto& t : successors(s, a)) {
    if (t.next_state == next) p += t.probability;
  }
  return p;
}

void validate_policy(const TabularMdp& mdp, const PolicyTable& policy) {
  if (policy.rows() != mdp.num_states() || policy.cols() != mdp.num_actions()) {
    throw InputError("policy table shape does not match MDP");
  }
  for (int s = 0; s < policy.rows(); ++s) {
    const auto row = policy.row(s);
    if (!row.allFinite() || (row.array() < 0.0).any() || std::abs(row.sum() - 1.0) > kPolicyTol) {
      std::ostringstream msg;
      msg << "policy row " << s << " is not a probability distribution";
      throw InputError(msg.str());
    }
  }
}

Vector exact_state_values(const TabularMdp& mdp, const PolicyTable& policy) {
  validate_policy(mdp, policy);
  const double gamma = mdp.discount();
  const Vector r_pi = policy_reward(mdp, policy);
  if (use_direct_solve(mdp)) {
    const Matrix p_pi = dense_policy_transition(mdp, policy);
    const Matrix system = Matrix::Identity(mdp.num_states(), mdp.num_states()) - gamma * p_pi;
    return system.partialPivLu().solve(r_pi);
  }
  Vector v = Vector::Zero(mdp.num_states());
  for (;;) {
    Vector next = r_pi + gamma * apply_policy_transition(mdp, policy, v);
    const double delta = (next - v).cwiseAbs().maxCoeff();
    v = std::move(next);
    if (delta < kIterationResidual) break;
  }
  return v;
}

Matrix q_from_values(const TabularMdp& mdp, const Vector& values) {
  Matrix q = mdp.reward();
  const double gamma = mdp.discount();
  for (int s = 0; s < mdp.num_states(); ++s) {
    for (int a = 0; a < mdp.num_actions(); ++a) {
      double expected = 0.0;
      for (const auto& t : mdp.successors(s, a)) expected += t.probability * values(t.next_state);
      q(s, a) += gamma * expected;
    }
  }
  return q;
}

Matrix exact_q_values(const TabularMdp& mdp, const PolicyTable& policy) {
  return q_from_values(mdp, exact_state_values(mdp, policy));
}

Matrix advantage_from_q(const Matrix& q, const PolicyTable& policy) {
  const Vector v = (policy.array() * q.array()).rowwise().sum();
  return q.colwise() - v;
}

Matrix exact_advantage(const TabularMdp& mdp, const PolicyTable& policy) {
  return advantage_from_q(exact_q_values(mdp, policy), policy);
}

double bellman_residual(const TabularMdp& mdp, const PolicyTable& policy, const Matrix& q) {
  const Vector v = (policy.array() * q.array()).rowwise().sum();
  return (q - q_from_values(mdp, v)).cwiseAbs().maxCoeff();
}

std::vector<bool> reachable_states(const TabularMdp& mdp, const PolicyTable& policy) {
  std::vector<bool> seen(static_cast<std::size_t>(mdp.num_states()), false);
  std::deque<int> frontier;
  for (int s = 0; s < mdp.num_states(); ++s) {
    if (mdp.initial_dist()(s) > 0.0) {
      seen[s] = true;
      frontier.push_back(s);
    }
  }
  while (!frontier.empty()) {
    const int s = frontier.front();
    frontier.pop_front();
    for (int a = 0; a < mdp.num_actions(); ++a) {
      if (policy(s, a) <= 0.0) continue;
      for (const auto& t : mdp.successors(s, a)) {
        if (t.probability > 0.0 && !seen[t.next_state]) {
          seen[t.next_state] = true;
          frontier.push_back(t.next_state);
        }
      }
    }
  }
  return seen;
}

VisitationPartition visitation_distribution(const TabularMdp& mdp, const PolicyTable& policy) {
  validate_policy(mdp, policy);
  const int n_states = mdp.num_states();
  const double gamma = mdp.discount();
  const std::vector<bool> reach = reachable_states(mdp, policy);

  std::vector<int> index(static_cast<std::size_t>(n_states), -1);
  std::vector<int> members;
  for (int s = 0; s < n_states; ++s) {
    if (reach[s]) {
      index[s] = static_cast<int>(members.size());
      members.push_back(s);
    }
  }
  const int m = static_cast<int>(members.size());

  Vector reduced(m);
  if (use_direct_solve(mdp)) {
    // (I - gamma P_pi^T) d = (1 - gamma) mu0 on the reachable block; reachable
    // states have no transitions leaving the block.
    Matrix system = Matrix::Identity(m, m);
    Vector rhs(m);
    for (int i = 0; i < m; ++i) {
      const int s = members[i];
      rhs(i) = (1.0 - gamma) * mdp.initial_dist()(s);
      for (int a = 0; a < mdp.num_actions(); ++a) {
        const double pa = policy(s, a);
        if (pa == 0.0) continue;
        for (const auto& t : mdp.successors(s, a)) {
          if (t.probability == 0.0) continue;
          system(index[t.next_state], i) -= gamma * pa * t.probability;
        }
      }
    }
    reduced = system.partialPivLu().solve(rhs);
  } else {
    Vector mu(m);
    for (int i = 0; i < m; ++i) mu(i) = mdp.initial_dist()(members[i]);
    reduced = (1.0 - gamma) * mu;
    for (;;) {
      Vector pushed = Vector::Zero(m);
      for (int i = 0; i < m; ++i) {
        const int s = members[i];
        for (int a = 0; a < mdp.num_actions(); ++a) {
          const double pa = policy(s, a);
          if (pa == 0.0) continue;
          for (const auto& t : mdp.successors(s, a)) {
            pushed(index[t.next_state]) += pa * t.probability * reduced(i);
          }
        }
      }
      Vector next = (1.0 - gamma) * mu + gamma * pushed;
      const double delta = (next - reduced).cwiseAbs().maxCoeff();
      reduced = std::move(next);
      if (delta < kIterationResidual) break;
    }
  }

  VisitationPartition out;
  out.d_pi = Vector::Zero(n_states);
  for (int i = 0; i < m; ++i) out.d_pi(members[i]) = std::max(0.0, reduced(i));
  for (int s = 0; s < n_states; ++s) {
    if (out.d_pi(s) > VisitationPartition::kEpsilonVisited) {
      out.visited.push_back(s);
    } else {
      out.unvisited.push_back(s);
    }
  }
  return out;
}

const DominanceEntry* DominanceReport::find(int state, int action) const {
  for (const auto& e : entries) {
    if (e.state == state && e.action == action) return &e;
  }
  return nullptr;
}

DominanceReport dominance_gap_check(const Matrix& q, const PolicyTable& policy,
                                    const VisitationPartition& visitation,
                                    const std::vector<ValidityMask>& masks) {
  if (static_cast<long>(masks.size()) != q.rows()) throw InputError("one mask per state required");
  const Matrix adv = advantage_from_q(q, policy);
  DominanceReport report;
  for (int s : visitation.visited) {
    const ValidityMask& mask = masks[s];
    if (mask.size() != q.cols()) throw InputError("mask width does not match action count");
    if (!mask.any_valid()) {
      throw StructuralError("visited state " + std::to_string(s) + " has no valid action");
    }
    double best_valid = -std::numeric_limits<double>::infinity();
    for (int b = 0; b < q.cols(); ++b) {
      if (mask[b]) best_valid = std::max(best_valid, q(s, b));
    }
    double min_margin = std::numeric_limits<double>::infinity();
    const std::size_t first = report.entries.size();
    for (int a = 0; a < q.cols(); ++a) {
      if (mask[a]) continue;
      DominanceEntry e{};
      e.state = s;
      e.action = a;
      e.margin = best_valid - q(s, a);
      e.advantage = adv(s, a);
      e.advantage_bound = -e.margin * (1.0 - policy(s, a));
      min_margin = std::min(min_margin, e.margin);
      report.entries.push_back(e);
    }
    const bool holds = min_margin > 0.0;
    if (!holds) report.condition_holds = false;
    report.min_margin.emplace_back(s, min_margin);
    if (holds) {
      for (std::size_t i = first; i < report.entries.size(); ++i) {
        auto& e = report.entries[i];
        e.bound_checked = true;
        report.max_advantage_bound_violation =
            std::max(report.max_advantage_bound_violation, e.advantage - e.advantage_bound);
      }
    }
  }
  return report;
}

DominanceReport dominance_gap_check(const TabularMdp& mdp, const PolicyTable& policy,
                                    const std::vector<ValidityMask>& masks) {
  const Matrix q = exact_q_values(mdp, policy);
  return dominance_gap_check(q, policy, visitation_distribution(mdp, policy), masks);
}

PolicyTable uniform_policy(int num_states, int num_actions) {
  return PolicyTable::Constant(num_states, num_actions, 1.0 / num_actions);
}

}  // namespace masklab
