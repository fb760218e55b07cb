#include "masklab/envs.hpp"

#include <algorithm>
#include <deque>
#include <unordered_map>

#include "masklab/errors.hpp"

namespace masklab {

namespace {

constexpr std::size_t kMaxTabularStates = 100000;

std::vector<std::string> padded_names(std::vector<std::string> base, int num_actions) {
  for (int a = static_cast<int>(base.size()); a < num_actions; ++a) {
    base.push_back("distractor_" + std::to_string(a));
  }
  return base;
}

}  // namespace

Vector Environment::observation() const {
  Vector out(observation_dim());
  observation(out.data());
  return out;
}

// ---------------------------------------------------------------------------

StaircaseCorridor::StaircaseCorridor(StaircaseConfig config) : config_(config) {
  if (config_.length < 2) throw InputError("staircase corridor needs length >= 2");
  if (config_.num_actions < 4 || config_.num_actions > kMaxActions) {
    throw InputError("staircase corridor supports 4..43 actions");
  }
  if (config_.horizon <= 0) throw InputError("horizon must be positive");
  if (config_.start_cell < 0 || config_.start_cell >= config_.length - 1) {
    throw InputError("start cell must lie left of the staircase");
  }
  reset();
}

std::vector<std::string> StaircaseCorridor::action_names() const {
  return padded_names({"left", "right", "descend", "noop"}, config_.num_actions);
}

void StaircaseCorridor::reset() {
  cell_ = config_.start_cell;
  t_ = 0;
  done_ = false;
  descended_ = false;
}

void StaircaseCorridor::reset(Rng& /*rng*/) { reset(); }

AbstractState StaircaseCorridor::abstract_state() const {
  AbstractState z;
  z.set("on_staircase", !descended_ && cell_ == staircase_cell());
  z.set("at_left_wall", cell_ == 0);
  z.set("at_right_wall", cell_ == config_.length - 1);
  z.set("descended", descended_);
  return z;
}

ValidityMask StaircaseCorridor::validity_from(const AbstractState& z, int num_actions) {
  std::vector<bool> valid(static_cast<std::size_t>(num_actions), false);
  if (z.get("descended")) {
    valid[kNoop] = true;
    return ValidityMask(std::move(valid));
  }
  valid[kLeft] = !z.get("at_left_wall");
  valid[kRight] = !z.get("at_right_wall");
  valid[kDescend] = z.get("on_staircase");
  valid[kNoop] = true;
  return ValidityMask(std::move(valid));
}

ValidityMask StaircaseCorridor::validity_mask() const {
  return validity_from(abstract_state(), config_.num_actions);
}

StepResult StaircaseCorridor::step(int action) {
  if (done_) throw UsageError("step() called on a finished episode");
  if (action < 0 || action >= config_.num_actions) throw InputError("action out of range");
  StepResult result;
  result.action_valid = validity_mask()[action];
  ++t_;
  if (!result.action_valid) {
    result.reward = config_.invalid_penalty;
  } else {
    switch (action) {
      case kLeft:
        --cell_;
        result.reward = -config_.move_reward;
        break;
      case kRight:
        ++cell_;
        result.reward = config_.move_reward;
        break;
      case kDescend:
        result.reward = config_.goal_reward;
        descended_ = true;
        done_ = true;
        break;
      default: break;
    }
  }
  if (!done_ && t_ >= config_.horizon) {
    done_ = true;
    result.truncated = true;
  }
  result.done = done_;
  return result;
}

void StaircaseCorridor::observation(double* out) const {
  const int len = config_.length;
  std::fill(out, out + observation_dim(), 0.0);
  out[cell_] = 1.0;
  const AbstractState z = abstract_state();
  out[len] = z.get("on_staircase") ? 1.0 : 0.0;
  out[len + 1] = z.get("at_left_wall") ? 1.0 : 0.0;
  out[len + 2] = z.get("at_right_wall") ? 1.0 : 0.0;
}

void StaircaseCorridor::set_state_key(std::int64_t key) {
  if (key < 0 || key > config_.length) throw InputError("state key out of range");
  t_ = 0;
  if (key == config_.length) {
    cell_ = staircase_cell();
    descended_ = true;
    done_ = true;
  } else {
    cell_ = static_cast<int>(key);
    descended_ = false;
    done_ = false;
  }
}

std::vector<std::pair<std::int64_t, double>> StaircaseCorridor::initial_distribution() const {
  return {{config_.start_cell, 1.0}};
}

std::unique_ptr<Environment> StaircaseCorridor::clone() const {
  return std::make_unique<StaircaseCorridor>(*this);
}

// ---------------------------------------------------------------------------

DoorCorridor::DoorCorridor(DoorConfig config) : config_(config) {
  if (config_.num_cells < 3) throw InputError("door corridor needs at least 3 cells");
  if (config_.num_doors < 0 || config_.num_doors > 16) throw InputError("door count must lie in 0..16");
  if (config_.num_actions < 6 || config_.num_actions > 43) {
    throw InputError("door corridor supports 6..43 actions");
  }
  if (config_.horizon <= 0) throw InputError("horizon must be positive");
  for (int k = 0; k < config_.num_doors; ++k) {
    const int edge = (k + 1) * config_.num_cells / (config_.num_doors + 1) - 1;
    if (edge < 0 || edge > config_.num_cells - 2 ||
        (!door_edges_.empty() && edge <= door_edges_.back() + 1)) {
      throw InputError("too many doors for corridor length");
    }
    door_edges_.push_back(edge);
  }
  Rng rng(0);
  reset(rng);
}

std::vector<std::string> DoorCorridor::action_names() const {
  return padded_names({"north", "south", "east", "west", "open_door", "search_wait"},
                      config_.num_actions);
}

void DoorCorridor::reset(Rng& rng) {
  open_bits_ = 0;
  t_ = 0;
  done_ = false;
  if (config_.start == DoorStart::kLeftEnd) {
    cell_ = 0;
  } else {
    const int choices = config_.num_cells - 1;
    cell_ = std::min(choices - 1, static_cast<int>(uniform01(rng) * choices));
  }
}

int DoorCorridor::closed_door_east() const {
  for (int k = 0; k < config_.num_doors; ++k) {
    if (door_edges_[k] == cell_ && !door_open(k)) return k;
  }
  return -1;
}

int DoorCorridor::closed_door_west() const {
  for (int k = 0; k < config_.num_doors; ++k) {
    if (door_edges_[k] + 1 == cell_ && !door_open(k)) return k;
  }
  return -1;
}

AbstractState DoorCorridor::abstract_state() const {
  const bool east_door = closed_door_east() >= 0;
  const bool west_door = closed_door_west() >= 0;
  AbstractState z;
  z.set("adjacent_closed_door", east_door || west_door);
  z.set("blocked_east", east_door || cell_ == config_.num_cells - 1);
  z.set("blocked_west", west_door || cell_ == 0);
  z.set("at_goal", cell_ == goal_cell());
  return z;
}

ValidityMask DoorCorridor::validity_from(const AbstractState& z, int num_actions) {
  std::vector<bool> valid(static_cast<std::size_t>(num_actions), false);
  valid[kEast] = !z.get("blocked_east");
  valid[kWest] = !z.get("blocked_west");
  valid[kOpenDoor] = z.get("adjacent_closed_door");
  valid[kSearchWait] = true;
  return ValidityMask(std::move(valid));
}

ValidityMask DoorCorridor::validity_mask() const {
  return validity_from(abstract_state(), config_.num_actions);
}

StepResult DoorCorridor::step(int action) {
  if (done_) throw UsageError("step() called on a finished episode");
  if (action < 0 || action >= config_.num_actions) throw InputError("action out of range");
  StepResult result;
  result.action_valid = validity_mask()[action];
  ++t_;
  if (!result.action_valid) {
    result.reward = config_.invalid_penalty;
  } else {
    switch (action) {
      case kEast: ++cell_; break;
      case kWest: --cell_; break;
      case kOpenDoor: {
        const int east = closed_door_east();
        const int west = closed_door_west();
        if (east >= 0) open_bits_ |= 1U << east;
        if (west >= 0) open_bits_ |= 1U << west;
        break;
      }
      default: break;
    }
    if (cell_ == goal_cell()) {
      result.reward = config_.goal_reward;
      done_ = true;
    }
  }
  if (!done_ && t_ >= config_.horizon) {
    done_ = true;
    result.truncated = true;
  }
  result.done = done_;
  return result;
}

void DoorCorridor::observation(double* out) const {
  const int cells = config_.num_cells;
  std::fill(out, out + observation_dim(), 0.0);
  out[cell_] = 1.0;
  for (int k = 0; k < config_.num_doors; ++k) out[cells + k] = door_open(k) ? 0.0 : 1.0;
  const AbstractState z = abstract_state();
  const int base = cells + config_.num_doors;
  out[base] = z.get("adjacent_closed_door") ? 1.0 : 0.0;
  out[base + 1] = z.get("blocked_east") ? 1.0 : 0.0;
  out[base + 2] = z.get("blocked_west") ? 1.0 : 0.0;
}

std::int64_t DoorCorridor::state_key() const {
  return (static_cast<std::int64_t>(cell_) << config_.num_doors) | open_bits_;
}

void DoorCorridor::set_state_key(std::int64_t key) {
  const std::int64_t door_span = std::int64_t{1} << config_.num_doors;
  if (key < 0 || key >= door_span * config_.num_cells) throw InputError("state key out of range");
  cell_ = static_cast<int>(key >> config_.num_doors);
  open_bits_ = static_cast<std::uint32_t>(key & (door_span - 1));
  t_ = 0;
  done_ = cell_ == goal_cell();
}

bool DoorCorridor::key_is_terminal(std::int64_t key) const {
  return (key >> config_.num_doors) == goal_cell();
}

std::vector<std::pair<std::int64_t, double>> DoorCorridor::initial_distribution() const {
  if (config_.start == DoorStart::kLeftEnd) return {{0, 1.0}};
  std::vector<std::pair<std::int64_t, double>> out;
  const int choices = config_.num_cells - 1;
  for (int c = 0; c < choices; ++c) {
    out.emplace_back(static_cast<std::int64_t>(c) << config_.num_doors, 1.0 / choices);
  }
  return out;
}

std::unique_ptr<Environment> DoorCorridor::clone() const {
  return std::make_unique<DoorCorridor>(*this);
}

// ---------------------------------------------------------------------------

std::unique_ptr<Environment> EnvSpec::make() const {
  if (kind == Kind::kStaircase) return std::make_unique<StaircaseCorridor>(staircase);
  return std::make_unique<DoorCorridor>(door);
}

int EnvSpec::critical_action() const {
  return kind == Kind::kStaircase ? static_cast<int>(StaircaseCorridor::kDescend)
                                  : static_cast<int>(DoorCorridor::kOpenDoor);
}

int TabularEnv::index_of(std::int64_t key) const {
  const auto it = std::find(keys.begin(), keys.end(), key);
  if (it == keys.end()) return -1;
  return static_cast<int>(it - keys.begin());
}

TabularEnv to_tabular(const Environment& env, double discount) {
  std::unordered_map<std::int64_t, int> index;
  std::vector<std::int64_t> keys;
  std::deque<std::int64_t> frontier;
  auto visit = [&](std::int64_t key) {
    if (index.count(key)) return;
    if (keys.size() >= kMaxTabularStates) {
      throw StructuralError("state space exceeds 1e5 states");
    }
    index.emplace(key, static_cast<int>(keys.size()));
    keys.push_back(key);
    frontier.push_back(key);
  };

  const auto initial = env.initial_distribution();
  for (const auto& [key, p] : initial) visit(key);

  struct Edge {
    int action;
    std::int64_t next;
    double reward;
  };
  std::vector<std::vector<Edge>> edges;
  auto probe = env.clone();
  const int n_actions = env.num_actions();
  while (!frontier.empty()) {
    const std::int64_t key = frontier.front();
    frontier.pop_front();
    std::vector<Edge> out;
    if (!env.key_is_terminal(key)) {
      for (int a = 0; a < n_actions; ++a) {
        probe->set_state_key(key);
        const StepResult r = probe->step(a);
        const std::int64_t next = probe->state_key();
        out.push_back({a, next, r.reward});
        visit(next);
      }
    }
    const std::size_t slot = static_cast<std::size_t>(index.at(key));
    if (edges.size() <= slot) edges.resize(slot + 1);
    edges[slot] = std::move(out);
  }

  const int n_states = static_cast<int>(keys.size());
  std::vector<std::vector<Transition>> transitions(static_cast<std::size_t>(n_states) * n_actions);
  Matrix reward = Matrix::Zero(n_states, n_actions);
  Vector init = Vector::Zero(n_states);
  for (const auto& [key, p] : initial) init(index.at(key)) += p;

  TabularEnv out{TabularMdp(1, 1, {{{0, 1.0}}}, Matrix::Zero(1, 1), 0.5, Vector::Ones(1)),
                 {}, keys, {}, {}, Matrix(n_states, env.observation_dim())};
  for (int s = 0; s < n_states; ++s) {
    probe->set_state_key(keys[s]);
    out.masks.push_back(probe->validity_mask());
    out.abstract_states.push_back(probe->abstract_state());
    out.observations.row(s) = probe->observation().transpose();
    const bool terminal = env.key_is_terminal(keys[s]);
    out.terminal.push_back(terminal);
    if (!out.masks.back().any_valid()) {
      throw StructuralError("reachable state without a valid action");
    }
    for (int a = 0; a < n_actions; ++a) {
      auto& row = transitions[static_cast<std::size_t>(s) * n_actions + a];
      if (terminal) {
        row.push_back({s, 1.0});
      }
    }
    for (const auto& e : edges[s]) {
      transitions[static_cast<std::size_t>(s) * n_actions + e.action].push_back(
          {index.at(e.next), 1.0});
      reward(s, e.action) = e.reward;
    }
  }
  out.mdp = TabularMdp(n_states, n_actions, std::move(transitions), std::move(reward), discount,
                       std::move(init));
  return out;
}

// ---------------------------------------------------------------------------

PreVisitCorridor pre_visit_corridor(int length, int num_actions, double discount) {
  if (length < 3) throw InputError("pre-visit corridor needs length >= 3");
  if (num_actions < 4 || num_actions > StaircaseCorridor::kMaxActions) {
    throw InputError("pre-visit corridor supports 4..43 actions");
  }
  const int stair = length - 1;
  const int terminal = length;
  const int n_states = length + 1;
  const int last_corridor = length - 2;
  using A = StaircaseCorridor::Action;

  std::vector<std::vector<Transition>> transitions(static_cast<std::size_t>(n_states) * num_actions);
  Matrix reward = Matrix::Zero(n_states, num_actions);
  std::vector<ValidityMask> masks;
  auto set = [&](int s, int a, int next) {
    transitions[static_cast<std::size_t>(s) * num_actions + a] = {{next, 1.0}};
  };
  for (int s = 0; s < n_states; ++s) {
    std::vector<bool> valid(static_cast<std::size_t>(num_actions), false);
    for (int a = 0; a < num_actions; ++a) set(s, a, s);
    if (s == terminal) {
      valid[A::kNoop] = true;
    } else if (s == stair) {
      valid[A::kLeft] = valid[A::kDescend] = valid[A::kNoop] = true;
      set(s, A::kLeft, s - 1);
      set(s, A::kDescend, terminal);
      reward(s, A::kDescend) = 1.0;
    } else {
      valid[A::kRight] = valid[A::kNoop] = true;
      if (s > 0) {
        valid[A::kLeft] = true;
        set(s, A::kLeft, s - 1);
      }
      if (s == last_corridor) {
        set(s, A::kRight, 0);
        reward(s, A::kRight) = 1.0;
      } else {
        set(s, A::kRight, s + 1);
      }
    }
    masks.emplace_back(std::move(valid));
  }
  Vector init = Vector::Zero(n_states);
  init(0) = 1.0;
  return PreVisitCorridor{
      TabularMdp(n_states, num_actions, std::move(transitions), std::move(reward), discount,
                 std::move(init)),
      std::move(masks), stair, terminal, length};
}

Matrix correlated_corridor_features(const PreVisitCorridor& corridor, double rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw InputError("correlation dial must lie in [0, 1]");
  const int n_states = corridor.mdp.num_states();
  const int shared = n_states;
  Matrix phi = Matrix::Zero(n_states, n_states + 1);
  for (int s = 0; s < n_states; ++s) {
    if (s == corridor.staircase_state) {
      phi(s, s) = 1.0 - rho;
      phi(s, shared) = rho;
    } else if (s == corridor.terminal_state) {
      phi(s, s) = 1.0;
    } else {
      phi(s, s) = 1.0;
      phi(s, shared) = 1.0;
    }
  }
  return phi;
}

}  // namespace masklab
