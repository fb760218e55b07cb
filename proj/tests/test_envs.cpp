#include <gtest/gtest.h>

#include <set>

#include "masklab/envs.hpp"
#include "masklab/errors.hpp"

using namespace masklab;

namespace {

StaircaseCorridor staircase(int length = 8, int n = 4) {
  StaircaseConfig c;
  c.length = length;
  c.num_actions = n;
  return StaircaseCorridor(c);
}

std::vector<bool> bits(const ValidityMask& m) { return m.bits(); }

}  // namespace

TEST(Staircase, DescendAwayFromStaircaseIsSilentNoop) {
  StaircaseCorridor env = staircase();
  const StepResult r = env.step(StaircaseCorridor::kDescend);
  EXPECT_FALSE(r.action_valid);
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_FALSE(r.done);
  EXPECT_EQ(env.cell(), 0);
}

TEST(Staircase, DescendAtStaircasePaysAndTerminates) {
  StaircaseCorridor env = staircase(4);
  for (int i = 0; i < 3; ++i) ASSERT_TRUE(env.step(StaircaseCorridor::kRight).action_valid);
  EXPECT_EQ(env.cell(), env.staircase_cell());
  const StepResult r = env.step(StaircaseCorridor::kDescend);
  EXPECT_TRUE(r.action_valid);
  EXPECT_EQ(r.reward, 1.0);
  EXPECT_TRUE(r.done);
  EXPECT_FALSE(r.truncated);
  EXPECT_THROW(env.step(StaircaseCorridor::kNoop), UsageError);
}

TEST(Staircase, HorizonTruncates) {
  StaircaseConfig c;
  c.horizon = 3;
  StaircaseCorridor env(c);
  env.step(StaircaseCorridor::kNoop);
  env.step(StaircaseCorridor::kNoop);
  const StepResult r = env.step(StaircaseCorridor::kNoop);
  EXPECT_TRUE(r.done);
  EXPECT_TRUE(r.truncated);
}

TEST(Staircase, MaskAtInteriorStaircaseAndLeftWall) {
  StaircaseCorridor env = staircase(5);
  EXPECT_EQ(bits(env.validity_mask()), (std::vector<bool>{false, true, false, true}));
  env.step(StaircaseCorridor::kRight);
  EXPECT_EQ(bits(env.validity_mask()), (std::vector<bool>{true, true, false, true}));
  env.set_state_key(4);
  EXPECT_EQ(bits(env.validity_mask()), (std::vector<bool>{true, false, true, true}));
}

TEST(Staircase, DistractorsAreNeverValid) {
  StaircaseCorridor env = staircase(5, 43);
  for (int key = 0; key < 5; ++key) {
    env.set_state_key(key);
    const ValidityMask m = env.validity_mask();
    for (int a = 4; a < 43; ++a) EXPECT_FALSE(m[a]);
  }
}

TEST(Staircase, MaskIsFunctionOfAbstractState) {
  StaircaseCorridor env = staircase(6, 7);
  for (int key = 0; key <= 6; ++key) {
    env.set_state_key(key);
    EXPECT_EQ(env.validity_mask(), StaircaseCorridor::validity_from(env.abstract_state(), 7));
  }
}

TEST(Staircase, ObservationIsOneHotPlusPredicates) {
  StaircaseCorridor env = staircase(4);
  env.set_state_key(3);
  const Vector o = env.observation();
  ASSERT_EQ(o.size(), 7);
  EXPECT_EQ(o(3), 1.0);
  EXPECT_EQ(o.head(4).sum(), 1.0);
  EXPECT_EQ(o(4), 1.0);  // on staircase
  EXPECT_EQ(o(5), 0.0);
  EXPECT_EQ(o(6), 1.0);  // right wall
}

TEST(Staircase, RejectsBadConfig) {
  StaircaseConfig c;
  c.num_actions = 44;
  EXPECT_THROW(StaircaseCorridor{c}, InputError);
  c = {};
  c.length = 1;
  EXPECT_THROW(StaircaseCorridor{c}, InputError);
}

TEST(DoorCorridorEnv, ScriptedOpenDoorTrajectory) {
  DoorConfig c;
  c.num_cells = 5;
  c.num_doors = 1;
  c.start = DoorStart::kLeftEnd;
  DoorCorridor env(c);
  ASSERT_EQ(env.door_edge(0), 1);
  EXPECT_FALSE(env.validity_mask()[DoorCorridor::kOpenDoor]);
  EXPECT_TRUE(env.step(DoorCorridor::kEast).action_valid);
  EXPECT_EQ(env.cell(), 1);
  // Closed door to the east: east blocked, open_door available.
  EXPECT_FALSE(env.validity_mask()[DoorCorridor::kEast]);
  EXPECT_TRUE(env.validity_mask()[DoorCorridor::kOpenDoor]);
  const StepResult blocked = env.step(DoorCorridor::kEast);
  EXPECT_FALSE(blocked.action_valid);
  EXPECT_EQ(env.cell(), 1);
  const StepResult open = env.step(DoorCorridor::kOpenDoor);
  EXPECT_TRUE(open.action_valid);
  EXPECT_EQ(open.reward, 0.0);
  EXPECT_TRUE(env.door_open(0));
  EXPECT_FALSE(env.validity_mask()[DoorCorridor::kOpenDoor]);
  env.step(DoorCorridor::kEast);
  env.step(DoorCorridor::kEast);
  const StepResult goal = env.step(DoorCorridor::kEast);
  EXPECT_EQ(goal.reward, 1.0);
  EXPECT_TRUE(goal.done);
}

TEST(DoorCorridorEnv, NorthSouthAlwaysInvalid) {
  DoorCorridor env{DoorConfig{}};
  for (int c = 0; c < 15; ++c) {
    env.set_state_key(static_cast<std::int64_t>(c) << 2);
    EXPECT_FALSE(env.validity_mask()[DoorCorridor::kNorth]);
    EXPECT_FALSE(env.validity_mask()[DoorCorridor::kSouth]);
    EXPECT_TRUE(env.validity_mask()[DoorCorridor::kSearchWait]);
  }
}

TEST(ToTabular, StaircaseLengthThreeHasFourStates) {
  const TabularEnv t = to_tabular(staircase(3), 0.9);
  EXPECT_EQ(t.mdp.num_states(), 4);
  EXPECT_EQ(std::count(t.terminal.begin(), t.terminal.end(), true), 1);
}

TEST(ToTabular, StaircaseRewardOnlyAtStaircaseDescend) {
  const TabularEnv t = to_tabular(staircase(5, 6), 0.9);
  const int stair = t.index_of(4);
  for (int s = 0; s < t.mdp.num_states(); ++s) {
    for (int a = 0; a < 6; ++a) {
      const bool expected = s == stair && a == StaircaseCorridor::kDescend;
      EXPECT_EQ(t.mdp.reward(s, a) != 0.0, expected) << s << "," << a;
    }
  }
}

TEST(ToTabular, DoorCorridorOneDoorFiveCellsHasTenStates) {
  DoorConfig c;
  c.num_cells = 5;
  c.num_doors = 1;
  EXPECT_EQ(to_tabular(DoorCorridor(c), 0.9).mdp.num_states(), 10);
}

TEST(ToTabular, EveryReachableStateHasAValidAction) {
  const TabularEnv t = to_tabular(DoorCorridor(DoorConfig{}), 0.9);
  for (const auto& m : t.masks) EXPECT_TRUE(m.any_valid());
}

// Exhaustive: every invalid (state, action) leaves the state alone and pays nothing.
TEST(ToTabular, InvalidActionsNeverChangeStateOrPay) {
  std::vector<std::unique_ptr<Environment>> envs;
  envs.push_back(std::make_unique<StaircaseCorridor>(staircase(7, 9)));
  envs.push_back(std::make_unique<DoorCorridor>(DoorConfig{}));
  for (const auto& env : envs) {
    const TabularEnv t = to_tabular(*env, 0.9);
    for (int s = 0; s < t.mdp.num_states(); ++s) {
      for (int a = 0; a < env->num_actions(); ++a) {
        if (t.masks[s][a]) continue;
        ASSERT_EQ(t.mdp.successors(s, a).size(), 1u);
        EXPECT_EQ(t.mdp.successors(s, a)[0].next_state, s);
        EXPECT_EQ(t.mdp.reward(s, a), 0.0);
      }
    }
  }
}

// 10^4 random action sequences replayed in the live environment and in the
// tabular image must produce identical per-trajectory returns.
TEST(ToTabular, RoundTripMatchesLiveSimulation) {
  std::vector<std::unique_ptr<Environment>> envs;
  StaircaseConfig sc;
  sc.length = 5;
  sc.num_actions = 5;
  sc.horizon = 20;
  sc.move_reward = 0.01;
  envs.push_back(std::make_unique<StaircaseCorridor>(sc));
  DoorConfig dc;
  dc.num_cells = 7;
  dc.horizon = 30;
  envs.push_back(std::make_unique<DoorCorridor>(dc));
  for (const auto& env : envs) {
    const TabularEnv t = to_tabular(*env, 0.9);
    Rng rng(17);
    for (int traj = 0; traj < 5000; ++traj) {
      env->reset(rng);
      int s = t.index_of(env->state_key());
      ASSERT_GE(s, 0);
      double live = 0.0, tab = 0.0;
      while (!env->done()) {
        const int a = static_cast<int>(rng() % static_cast<std::uint64_t>(env->num_actions()));
        live += env->step(a).reward;
        tab += t.mdp.reward(s, a);
        s = t.mdp.successors(s, a)[0].next_state;
        ASSERT_EQ(t.keys[s], env->state_key());
        EXPECT_EQ(t.masks[s], env->validity_mask());
      }
      ASSERT_EQ(live, tab);
    }
  }
}

TEST(PreVisitCorridor, StaircaseHasZeroVisitation) {
  const PreVisitCorridor c = pre_visit_corridor(5, 4, 0.9);
  const VisitationPartition d = visitation_distribution(c.mdp, uniform_policy(c.mdp.num_states(), 4));
  EXPECT_EQ(d.d_pi(c.staircase_state), 0.0);
  EXPECT_EQ(d.d_pi(c.terminal_state), 0.0);
  for (int s : d.visited) EXPECT_FALSE(c.masks[s][StaircaseCorridor::kDescend]);
  EXPECT_TRUE(c.masks[c.staircase_state][StaircaseCorridor::kDescend]);
}

TEST(PreVisitCorridor, CorrelationDialControlsOverlap) {
  const PreVisitCorridor c = pre_visit_corridor(5, 4, 0.9);
  const Matrix phi0 = correlated_corridor_features(c, 0.0);
  const Matrix phi1 = correlated_corridor_features(c, 1.0);
  for (int s = 0; s < c.staircase_state; ++s) {
    EXPECT_EQ(phi0.row(c.staircase_state).dot(phi0.row(s)), 0.0);
    EXPECT_GT(phi1.row(c.staircase_state).dot(phi1.row(s)), 0.0);
  }
  EXPECT_THROW(correlated_corridor_features(c, 1.5), InputError);
}
