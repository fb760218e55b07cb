#pragma once

// Gridworld environments with ground-truth validity oracles, their exact
// tabular counterparts, and feature maps for the linear-logit theory mode.

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "masklab/mdp.hpp"

namespace masklab {

using Rng = std::mt19937_64;

// Uniform double in [0,1) from the top 53 bits; identical on every platform.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct StepResult {
  double reward = 0.0;
  bool done = false;
  bool action_valid = false;
  bool truncated = false;  // horizon reached without a terminal event
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string name() const = 0;
  virtual int num_actions() const = 0;
  virtual int observation_dim() const = 0;
  virtual int horizon() const = 0;
  virtual std::vector<std::string> action_names() const = 0;

  virtual void reset(Rng& rng) = 0;
  // Throws UsageError when called on a finished episode.
  virtual StepResult step(int action) = 0;
  virtual bool done() const = 0;
  virtual int elapsed() const = 0;

  virtual AbstractState abstract_state() const = 0;
  virtual ValidityMask validity_mask() const = 0;
  virtual void observation(double* out) const = 0;
  Vector observation() const;

  // Markov state key (position and door configuration; excludes the step counter).
  virtual std::int64_t state_key() const = 0;
  // Restores a key and clears the step counter and done flag unless the key is terminal.
  virtual void set_state_key(std::int64_t key) = 0;
  virtual bool key_is_terminal(std::int64_t key) const = 0;
  virtual std::vector<std::pair<std::int64_t, double>> initial_distribution() const = 0;

  virtual std::unique_ptr<Environment> clone() const = 0;
};

// ---------------------------------------------------------------------------
// StaircaseCorridor: cells 0..L-1, staircase at L-1. Actions left, right,
// descend, noop, then always-invalid distractors up to num_actions.

struct StaircaseConfig {
  int length = 8;
  int num_actions = 4;
  int horizon = 64;
  double goal_reward = 1.0;
  double invalid_penalty = 0.0;
  double move_reward = 0.0;  // +r for a valid right move, -r for a valid left move
  int start_cell = 0;
};

class StaircaseCorridor final : public Environment {
 public:
  enum Action : int { kLeft = 0, kRight = 1, kDescend = 2, kNoop = 3 };
  static constexpr int kMaxActions = 43;

  explicit StaircaseCorridor(StaircaseConfig config);

  std::string name() const override { return "staircase_corridor"; }
  int num_actions() const override { return config_.num_actions; }
  int observation_dim() const override { return config_.length + 3; }
  int horizon() const override { return config_.horizon; }
  std::vector<std::string> action_names() const override;

  void reset(Rng& rng) override;
  void reset();
  StepResult step(int action) override;
  bool done() const override { return done_; }
  int elapsed() const override { return t_; }

  AbstractState abstract_state() const override;
  ValidityMask validity_mask() const override;
  void observation(double* out) const override;
  using Environment::observation;

  std::int64_t state_key() const override { return descended_ ? config_.length : cell_; }
  void set_state_key(std::int64_t key) override;
  bool key_is_terminal(std::int64_t key) const override { return key == config_.length; }
  std::vector<std::pair<std::int64_t, double>> initial_distribution() const override;
  std::unique_ptr<Environment> clone() const override;

  int cell() const { return cell_; }
  int staircase_cell() const { return config_.length - 1; }
  const StaircaseConfig& config() const { return config_; }

  // Validity is a pure function of the abstract state.
  static ValidityMask validity_from(const AbstractState& z, int num_actions);

 private:
  StaircaseConfig config_;
  int cell_ = 0;
  int t_ = 0;
  bool done_ = false;
  bool descended_ = false;
};

// ---------------------------------------------------------------------------
// DoorCorridor: a one-row corridor of cells with closed doors on some of the
// edges between neighbouring cells. North/south always hit a wall. Actions
// north, south, east, west, open_door, search_wait, then distractors.

enum class DoorStart { kUniform, kLeftEnd };

struct DoorConfig {
  int num_cells = 15;
  int num_doors = 2;
  int num_actions = 6;
  int horizon = 64;
  double goal_reward = 1.0;
  double invalid_penalty = 0.0;
  DoorStart start = DoorStart::kUniform;
};

class DoorCorridor final : public Environment {
 public:
  enum Action : int { kNorth = 0, kSouth = 1, kEast = 2, kWest = 3, kOpenDoor = 4, kSearchWait = 5 };

  explicit DoorCorridor(DoorConfig config);

  std::string name() const override { return "door_corridor"; }
  int num_actions() const override { return config_.num_actions; }
  int observation_dim() const override { return config_.num_cells + config_.num_doors + 3; }
  int horizon() const override { return config_.horizon; }
  std::vector<std::string> action_names() const override;

  void reset(Rng& rng) override;
  StepResult step(int action) override;
  bool done() const override { return done_; }
  int elapsed() const override { return t_; }

  AbstractState abstract_state() const override;
  ValidityMask validity_mask() const override;
  void observation(double* out) const override;
  using Environment::observation;

  std::int64_t state_key() const override;
  void set_state_key(std::int64_t key) override;
  bool key_is_terminal(std::int64_t key) const override;
  std::vector<std::pair<std::int64_t, double>> initial_distribution() const override;
  std::unique_ptr<Environment> clone() const override;

  int cell() const { return cell_; }
  int goal_cell() const { return config_.num_cells - 1; }
  bool door_open(int door) const { return (open_bits_ >> door) & 1U; }
  // Door k separates cell door_edge(k) from door_edge(k) + 1.
  int door_edge(int door) const { return door_edges_.at(static_cast<std::size_t>(door)); }
  const DoorConfig& config() const { return config_; }

  static ValidityMask validity_from(const AbstractState& z, int num_actions);

 private:
  int closed_door_east() const;  // door index or -1
  int closed_door_west() const;

  DoorConfig config_;
  std::vector<int> door_edges_;
  int cell_ = 0;
  std::uint32_t open_bits_ = 0;
  int t_ = 0;
  bool done_ = false;
};

// ---------------------------------------------------------------------------

struct EnvSpec {
  enum class Kind { kStaircase, kDoor };
  Kind kind = Kind::kStaircase;
  StaircaseConfig staircase;
  DoorConfig door;

  std::unique_ptr<Environment> make() const;
  // Index of the rarely-valid critical action (descend / open_door).
  int critical_action() const;
};

// Exact tabular image of an environment: every reachable Markov state, the
// validity mask and observation at each, and the transition/reward tensors
// reproducing step() (horizon truncation excluded).
struct TabularEnv {
  TabularMdp mdp;
  std::vector<ValidityMask> masks;
  std::vector<std::int64_t> keys;
  std::vector<bool> terminal;
  std::vector<AbstractState> abstract_states;
  Matrix observations;  // one row per state

  int index_of(std::int64_t key) const;
};

// Throws StructuralError beyond 1e5 states or when a reachable state has no valid action.
TabularEnv to_tabular(const Environment& env, double discount);

// ---------------------------------------------------------------------------
// Linear-theory mode. The pre-visit corridor is the staircase corridor as seen
// before the staircase is reached: moving right off the last corridor cell
// collects a unit reward and returns the agent to cell 0, so the staircase s*
// (cell L-1, where descend is valid) has zero visitation. State L is the
// absorbing post-descend state.

struct PreVisitCorridor {
  TabularMdp mdp;
  std::vector<ValidityMask> masks;
  int staircase_state;
  int terminal_state;
  int length;
};

PreVisitCorridor pre_visit_corridor(int length, int num_actions, double discount);

// Feature map with a correlation dial rho in [0,1]. Corridor cells get
// e_s + u (u a shared unit direction); the staircase gets (1-rho) e_s* + rho u;
// the terminal state gets its own one-hot. rho = 0 makes phi(s*) orthogonal to
// every visited feature.
Matrix correlated_corridor_features(const PreVisitCorridor& corridor, double rho);

}  // namespace masklab
