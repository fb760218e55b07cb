#include "masklab/theory_suite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>

#include "masklab/envs.hpp"
#include "masklab/errors.hpp"

namespace masklab {

namespace {

IdentityCheck upper(const std::string& name, double value, double tol, int step = -1) {
  IdentityCheck c;
  c.name = name;
  c.value = value;
  c.tolerance = tol;
  c.pass = value <= tol;
  c.step = step;
  return c;
}

std::string format_label(int length, int n, double beta, double rho) {
  std::ostringstream os;
  os << "L" << length << "_n" << n << "_b" << beta << "_r" << rho;
  return os.str();
}

}  // namespace

const IdentityCheck* TheoryCaseResult::find(const std::string& name) const {
  for (const auto& c : checks) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

TheoryCaseResult verify_dynamics_case(const std::string& label, const TabularMdp& mdp,
                                      const std::vector<ValidityMask>& masks,
                                      const Matrix& features, const DynamicsConfig& config,
                                      const std::vector<DynamicsTarget>& targets,
                                      bool expect_no_suppression) {
  TheoryCaseResult out;
  out.label = label;
  out.num_actions = mdp.num_actions();
  out.entropy_coeff = config.entropy_coeff;

  const double n = mdp.num_actions();
  const LinearSoftmaxPolicy initial = LinearSoftmaxPolicy::uniform(features, mdp.num_actions());
  const ZeroSumReport at_init = zero_sum_check(initial, mdp, config.entropy_coeff, config.learning_rate);

  const DynamicsResult r = run_dynamics(mdp, masks, features, config, targets);
  out.converged = r.converged;

  out.checks.push_back(upper("zero_sum_realized", r.max_zero_sum, 1e-10, r.zero_sum_step));
  out.checks.push_back(
      upper("zero_sum_expected", r.max_expected_zero_sum, 1e-10, r.expected_zero_sum_step));
  out.checks.push_back(upper("zero_sum_per_sample", at_init.max_sampled_sum, 1e-12));
  out.checks.push_back(upper("advantage_expectation", r.max_advantage_expectation, 1e-10,
                             r.advantage_expectation_step));
  out.checks.push_back(upper("unvisited_logit_residual", r.max_unvisited_residual, 1e-10, r.unvisited_residual_step));
  if (config.entropy_coeff > 0.0) {
    out.checks.push_back(
        upper("uniform_entropy_correction", at_init.max_uniform_entropy_correction, 1e-12, 0));
  }

  double bound_excess = -1e300;
  int bound_step = -1;
  double jensen_deficit = -1e300;
  double dz_star = 0.0;
  int dz_step = -1;
  double pi_drift = 0.0;
  int pi_step = -1;
  double floor_deficit = -1e300;
  double upper_deficit = -1e300;
  bool flags = true;
  out.initial_bound = 1.0 / n;
  for (const auto& trace : r.traces) {
    flags = flags && trace.flags_held_throughout;
    bool prior_ok = true;
    for (const auto& row : trace.steps) {
      if (prior_ok) {
        const double excess = row.log_pi_target - row.log_bound;
        if (excess > bound_excess) {
          bound_excess = excess;
          bound_step = row.step;
        }
      }
      prior_ok = prior_ok && row.cond_i && row.cond_ii;
      if (std::abs(row.realized_change) > dz_star) {
        dz_star = std::abs(row.realized_change);
        dz_step = row.step;
      }
      if (std::abs(row.pi_target - 1.0 / n) > pi_drift) {
        pi_drift = std::abs(row.pi_target - 1.0 / n);
        pi_step = row.step;
      }
      out.max_abs_kappa = std::max(out.max_abs_kappa, std::abs(row.kappa));
    }
    jensen_deficit = std::max(jensen_deficit, -trace.min_jensen_slack);
    const SuppressionStep& last = trace.steps.back();
    out.final_pi = last.pi_target;
    out.final_cumulative = last.cumulative;
    if (trace.entropy_floor) {
      floor_deficit = std::max(floor_deficit, *trace.entropy_floor - last.pi_target);
      upper_deficit = std::max(upper_deficit, last.pi_target - last.bound);
    }
  }
  out.flags_held = flags;

  out.checks.push_back(upper("bound_log_excess", bound_excess, 1e-10, bound_step));
  out.checks.push_back(upper("jensen_deficit", jensen_deficit, 1e-12));
  if (config.entropy_coeff > 0.0) {
    out.checks.push_back(upper("sandwich_floor_deficit", floor_deficit, 1e-12, r.steps_run));
    out.checks.push_back(upper("sandwich_upper_deficit", upper_deficit, 1e-12, r.steps_run));
  }
  if (expect_no_suppression) {
    out.checks.push_back(upper("no_suppression_dz", dz_star, 1e-12, dz_step));
    out.checks.push_back(upper("no_suppression_pi_drift", pi_drift, 1e-10, pi_step));
  }
  IdentityCheck adv_bound = upper("advantage_bound_violation", r.max_advantage_bound_violation, 1e-10);
  adv_bound.asserted = false;
  out.checks.push_back(adv_bound);

  for (const auto& c : out.checks) {
    if (c.asserted && !c.pass) out.pass = false;
  }
  return out;
}

Matrix dial_features(const TabularMdp& mdp, const std::vector<int>& target_states, double rho) {
  if (rho < 0.0 || rho > 1.0) throw InputError("rho must lie in [0,1]");
  const int S = mdp.num_states();
  const std::vector<bool> reach = reachable_states(mdp, uniform_policy(S, mdp.num_actions()));
  Matrix phi = Matrix::Zero(S, S + 1);
  for (int s = 0; s < S; ++s) {
    const bool target = std::find(target_states.begin(), target_states.end(), s) != target_states.end();
    if (target) {
      phi(s, s) = 1.0 - rho;
      phi(s, S) = rho;
    } else {
      phi(s, s) = 1.0;
      if (reach[static_cast<std::size_t>(s)]) phi(s, S) = 1.0;
    }
  }
  return phi;
}

TheoryReport run_theory_battery(const TheoryBatteryConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  TheoryReport report;
  for (int length : config.lengths) {
    for (int n : config.action_counts) {
      const PreVisitCorridor corridor = pre_visit_corridor(length, n, config.discount);
      for (double beta : config.entropy_coeffs) {
        for (double rho : config.rhos) {
          DynamicsConfig dc;
          dc.learning_rate = config.learning_rate;
          dc.entropy_coeff = beta;
          dc.num_steps = config.num_steps;
          dc.stop_on_convergence = beta > 0.0;
          const Matrix phi = correlated_corridor_features(corridor, rho);
          TheoryCaseResult res = verify_dynamics_case(
              format_label(length, n, beta, rho), corridor.mdp, corridor.masks, phi, dc,
              {{corridor.staircase_state, StaircaseCorridor::kDescend}}, rho == 0.0);
          res.rho = rho;
          report.pass = report.pass && res.pass;
          report.cases.push_back(std::move(res));
        }
      }
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

TheoryReport run_theory_on_mdp(const TabularMdp& mdp, const std::vector<ValidityMask>& masks,
                               const TheoryBatteryConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  if (static_cast<int>(masks.size()) != mdp.num_states()) throw InputError("one mask per state required");
  const int S = mdp.num_states();
  const std::vector<bool> reach = reachable_states(mdp, uniform_policy(S, mdp.num_actions()));
  std::vector<DynamicsTarget> targets;
  std::vector<int> target_states;
  for (int a = 0; a < mdp.num_actions(); ++a) {
    bool invalid_on_reachable = true;
    for (int s = 0; s < S; ++s) {
      if (reach[static_cast<std::size_t>(s)] && masks[s][a]) invalid_on_reachable = false;
    }
    if (!invalid_on_reachable) continue;
    for (int s = 0; s < S; ++s) {
      if (!reach[static_cast<std::size_t>(s)] && masks[s][a]) {
        targets.push_back({s, a});
        target_states.push_back(s);
      }
    }
  }
  if (targets.empty()) {
    throw InputError("MDP has no (unreachable state, action) pair valid there and invalid elsewhere");
  }
  TheoryReport report;
  for (double beta : config.entropy_coeffs) {
    for (double rho : config.rhos) {
      DynamicsConfig dc;
      dc.learning_rate = config.learning_rate;
      dc.entropy_coeff = beta;
      dc.num_steps = config.num_steps;
      dc.stop_on_convergence = beta > 0.0;
      std::ostringstream label;
      label << "custom_b" << beta << "_r" << rho;
      TheoryCaseResult res = verify_dynamics_case(label.str(), mdp, masks,
                                                  dial_features(mdp, target_states, rho), dc,
                                                  targets, rho == 0.0);
      res.rho = rho;
      report.pass = report.pass && res.pass;
      report.cases.push_back(std::move(res));
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

std::vector<std::string> TheoryReport::failures() const {
  std::vector<std::string> out;
  for (const auto& c : cases) {
    for (const auto& chk : c.checks) {
      if (chk.asserted && !chk.pass) {
        std::ostringstream os;
        os << "(" << c.label << ", step " << chk.step << ", " << chk.name << " = " << chk.value
           << " > " << chk.tolerance << ")";
        out.push_back(os.str());
      }
    }
  }
  return out;
}

void TheoryReport::print(std::ostream& out) const {
  char line[256];
  std::snprintf(line, sizeof line, "%-22s %10s %10s %10s %10s %10s %10s %10s %6s %s\n", "case",
                "zero_sum", "unvis_res", "bound_exc", "max_kappa", "pi_0", "pi_final", "K_final",
                "conv", "status");
  out << line;
  std::map<std::string, std::pair<double, IdentityCheck>> worst;
  std::vector<std::string> order;
  for (const auto& c : cases) {
    const auto val = [&](const char* name) {
      const IdentityCheck* chk = c.find(name);
      return chk ? chk->value : 0.0;
    };
    std::snprintf(line, sizeof line, "%-22s %10.2e %10.2e %10.2e %10.2e %10.4g %10.4g %10.4g %6s %s\n",
                  c.label.c_str(),
                  std::max(val("zero_sum_realized"), val("zero_sum_expected")),
                  val("unvisited_logit_residual"), val("bound_log_excess"), c.max_abs_kappa,
                  c.initial_bound, c.final_pi, c.final_cumulative,
                  c.entropy_coeff > 0.0 ? (c.converged ? "yes" : "no") : "-",
                  c.pass ? "PASS" : "FAIL");
    out << line;
    for (const auto& chk : c.checks) {
      auto it = worst.find(chk.name);
      if (it == worst.end()) {
        order.push_back(chk.name);
        worst.emplace(chk.name, std::make_pair(chk.value, chk));
      } else if (chk.value > it->second.first || (chk.asserted && !chk.pass)) {
        it->second = {std::max(chk.value, it->second.first), chk};
      }
    }
  }
  out << "\nidentity                      max_value   tolerance  result\n";
  for (const auto& name : order) {
    const auto& [value, chk] = worst.at(name);
    bool ok = true;
    for (const auto& c : cases) {
      const IdentityCheck* x = c.find(name);
      if (x && x->asserted && !x->pass) ok = false;
    }
    std::snprintf(line, sizeof line, "%-28s %11.3e %11.1e  %s\n", name.c_str(), value,
                  chk.tolerance, chk.asserted ? (ok ? "PASS" : "FAIL") : "info");
    out << line;
  }
  std::snprintf(line, sizeof line, "\n%zu cases, %.2f s, %s\n", cases.size(), seconds,
                pass ? "ALL PASS" : "FAILURES");
  out << line;
}

}  // namespace masklab
