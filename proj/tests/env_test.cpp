#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <queue>
#include <vector>

#include "tdrm/core/common.hpp"
#include "tdrm/core/rng.hpp"
#include "tdrm/env/episode.hpp"
#include "tdrm/env/hidden_order.hpp"

namespace {

using tdrm::Cell;
using tdrm::EnvState;
using tdrm::GridConfig;
using tdrm::Heading;
using tdrm::HiddenOrderEnv;
using tdrm::Observation;
using tdrm::StepResult;

GridConfig scripted_config() {
  GridConfig cfg;
  cfg.grid_size = 8;
  cfg.n_balls = 4;
  cfg.max_steps = 400;
  cfg.render_size = 16;
  return cfg;
}

// Shortest action route that ends by stepping onto `target`, never entering
// any other present ball's cell on the way.
std::vector<int> route_to(const HiddenOrderEnv& env, Cell target) {
  const auto& s = env.state();
  const auto& cfg = env.config();
  const int G = cfg.grid_size;
  auto blocked = [&](int r, int c) {
    for (int b = 0; b < cfg.n_balls; ++b) {
      const Cell& h = s.ball_home[static_cast<size_t>(b)];
      if (s.ball_present[static_cast<size_t>(b)] && h.row == r && h.col == c && !(h == target)) {
        return true;
      }
    }
    return false;
  };
  auto idx = [&](int r, int c, int d) { return (r * G + c) * 4 + d; };
  std::vector<int> parent(static_cast<size_t>(G * G * 4), -1);
  std::vector<int> via(static_cast<size_t>(G * G * 4), -1);
  const int start = idx(s.agent_pos.row, s.agent_pos.col, static_cast<int>(s.agent_dir));
  std::queue<int> q;
  parent[static_cast<size_t>(start)] = start;
  q.push(start);
  int goal = -1;
  const int dr[4] = {-1, 0, 1, 0};
  const int dc[4] = {0, 1, 0, -1};
  while (!q.empty() && goal < 0) {
    int cur = q.front();
    q.pop();
    int d = cur % 4, c = (cur / 4) % G, r = cur / (4 * G);
    if (r == target.row && c == target.col && cur != start) {
      goal = cur;
      break;
    }
    auto push = [&](int nxt, int action) {
      if (parent[static_cast<size_t>(nxt)] < 0) {
        parent[static_cast<size_t>(nxt)] = cur;
        via[static_cast<size_t>(nxt)] = action;
        q.push(nxt);
      }
    };
    push(idx(r, c, (d + 3) % 4), tdrm::kActionTurnLeft);
    push(idx(r, c, (d + 1) % 4), tdrm::kActionTurnRight);
    int nr = r + dr[d], nc = c + dc[d];
    if (nr >= 0 && nr < G && nc >= 0 && nc < G && !blocked(nr, nc)) {
      push(idx(nr, nc, d), tdrm::kActionForward);
    }
  }
  EXPECT_GE(goal, 0) << "no route to target cell; pick a different seed";
  std::vector<int> actions;
  for (int cur = goal; cur != start; cur = parent[static_cast<size_t>(cur)]) {
    actions.push_back(via[static_cast<size_t>(cur)]);
  }
  std::reverse(actions.begin(), actions.end());
  return actions;
}

struct CollectOutcome {
  float reward_sum = 0.0f;
  tdrm::StepInfo last;
};

CollectOutcome collect_ball(HiddenOrderEnv* env, int ball) {
  Cell target = env->state().ball_home[static_cast<size_t>(ball)];
  CollectOutcome out;
  for (int a : route_to(*env, target)) {
    StepResult res = env->step(a);
    out.reward_sum += res.reward;
    out.last = res.info;
  }
  EXPECT_EQ(out.last.collected, ball);
  return out;
}

int permutation_index(const std::vector<int>& perm) {
  int n = static_cast<int>(perm.size()), code = 0;
  for (int i = 0; i < n; ++i) {
    int smaller = 0;
    for (int j = i + 1; j < n; ++j) smaller += perm[static_cast<size_t>(j)] < perm[static_cast<size_t>(i)];
    code = code * (n - i) + smaller;
  }
  return code;
}

TEST(Config, ValidateRejectsBadValues) {
  GridConfig cfg;
  cfg.view_cells = 4;
  EXPECT_THROW(HiddenOrderEnv{cfg}, tdrm::ContractError);
  cfg = GridConfig{};
  cfg.n_balls = 7;
  EXPECT_THROW(HiddenOrderEnv{cfg}, tdrm::ContractError);
  cfg = GridConfig{};
  cfg.render_size = 4;
  EXPECT_THROW(HiddenOrderEnv{cfg}, tdrm::ContractError);
  cfg = GridConfig{};
  cfg.sprite_px = 50;
  EXPECT_THROW(HiddenOrderEnv{cfg}, tdrm::ContractError);
}

TEST(Reset, DeterministicForSeed) {
  HiddenOrderEnv a(scripted_config()), b(scripted_config());
  Observation oa = a.reset(42), ob = b.reset(42);
  EXPECT_EQ(oa.rgb, ob.rgb);
  EXPECT_EQ(a.state().hidden_order, b.state().hidden_order);
  EXPECT_TRUE(a.state().agent_pos == b.state().agent_pos);
  for (int i = 0; i < 4; ++i) {
    EXPECT_TRUE(a.state().ball_home[i] == b.state().ball_home[i]);
  }
  Observation oc = a.reset(43);
  EXPECT_NE(oa.rgb, oc.rgb);
}

TEST(Reset, LayoutInvariantsOverSeeds) {
  HiddenOrderEnv env(scripted_config());
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    env.reset(seed);
    const EnvState& s = env.state();
    for (size_t i = 0; i < s.ball_home.size(); ++i) {
      EXPECT_FALSE(s.ball_home[i] == s.agent_pos);
      for (size_t j = i + 1; j < s.ball_home.size(); ++j) {
        EXPECT_GE(tdrm::manhattan(s.ball_home[i], s.ball_home[j]), 2);
      }
    }
    EXPECT_EQ(s.progress, 0);
    EXPECT_EQ(s.step_count, 1);
    EXPECT_EQ(std::count(s.rewarded.begin(), s.rewarded.end(), 1), 0);
    std::vector<int> sorted = s.hidden_order;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted, (std::vector<int>{0, 1, 2, 3}));
  }
}

TEST(Reset, HiddenOrderUniformOverPermutations) {
  HiddenOrderEnv env(scripted_config());
  const int kResets = 100000;
  std::array<int, 24> counts{};
  for (int i = 0; i < kResets; ++i) {
    env.reset(900000 + static_cast<uint64_t>(i));
    counts[static_cast<size_t>(permutation_index(env.state().hidden_order))] += 1;
  }
  const double p = 1.0 / 24.0;
  const double mean = kResets * p;
  const double sigma = std::sqrt(kResets * p * (1.0 - p));
  double chi2 = 0.0;
  for (int c : counts) {
    EXPECT_NEAR(c, mean, 3.0 * sigma);
    chi2 += (c - mean) * (c - mean) / mean;
  }
  // 99.9th percentile of chi-square with 23 degrees of freedom.
  EXPECT_LT(chi2, 49.73);
}

TEST(Step, TurnAndMoveGeometry) {
  HiddenOrderEnv env(scripted_config());
  env.reset(42);
  Heading d0 = env.state().agent_dir;
  env.step(tdrm::kActionTurnLeft);
  EXPECT_EQ(static_cast<int>(env.state().agent_dir), (static_cast<int>(d0) + 3) % 4);
  env.step(tdrm::kActionTurnRight);
  EXPECT_EQ(env.state().agent_dir, d0);

  // Drive into the north wall: position must pin at row 0.
  while (env.state().agent_dir != Heading::kNorth) env.step(tdrm::kActionTurnLeft);
  for (int i = 0; i < 10; ++i) {
    int col = env.state().agent_pos.col;
    bool hit_ball = false;
    for (size_t b = 0; b < env.state().ball_home.size(); ++b) {
      Cell ahead{env.state().agent_pos.row - 1, col};
      if (env.state().ball_present[b] && env.state().ball_home[b] == ahead) hit_ball = true;
    }
    if (hit_ball) break;  // collection would reset the map, not the point here
    env.step(tdrm::kActionForward);
  }
  EXPECT_GE(env.state().agent_pos.row, 0);
}

TEST(Scenario, FullCollectionPaysTwelveThenCycleRestarts) {
  HiddenOrderEnv env(scripted_config());
  env.reset(7);
  std::vector<int> order = env.state().hidden_order;
  float total = 0.0f;
  for (int k = 0; k < 4; ++k) {
    CollectOutcome out = collect_ball(&env, order[static_cast<size_t>(k)]);
    EXPECT_EQ(out.reward_sum, 3.0f);
    EXPECT_TRUE(out.last.correct);
    total += out.reward_sum;
  }
  EXPECT_EQ(total, 12.0f);
  EXPECT_TRUE(env.state().hidden_order == order);
  // Full completion starts a new cycle: map restored, paid set cleared.
  for (size_t b = 0; b < 4; ++b) EXPECT_TRUE(env.state().ball_present[b]);
  EXPECT_EQ(env.state().progress, 0);
  EXPECT_EQ(std::count(env.state().rewarded.begin(), env.state().rewarded.end(), 1), 0);
  CollectOutcome again = collect_ball(&env, order[0]);
  EXPECT_EQ(again.reward_sum, 3.0f);
}

TEST(Scenario, WrongBallResetsMapAndPaidSetPersists) {
  HiddenOrderEnv env(scripted_config());
  env.reset(7);
  std::vector<int> order = env.state().hidden_order;

  CollectOutcome first = collect_ball(&env, order[0]);
  EXPECT_EQ(first.reward_sum, 3.0f);
  EXPECT_FALSE(env.state().ball_present[static_cast<size_t>(order[0])]);

  Cell pose_before = env.state().agent_pos;  // will move while routing
  CollectOutcome wrong = collect_ball(&env, order[2]);
  (void)pose_before;
  EXPECT_EQ(wrong.reward_sum, 0.0f);
  EXPECT_TRUE(wrong.last.map_reset);
  EXPECT_FALSE(wrong.last.correct);
  // Map reset restores every ball to its home cell, progress restarts, but
  // the agent stays where it walked and the order is unchanged.
  for (size_t b = 0; b < 4; ++b) EXPECT_TRUE(env.state().ball_present[b]);
  EXPECT_TRUE(env.state().agent_pos == env.state().ball_home[static_cast<size_t>(order[2])]);
  EXPECT_EQ(env.state().progress, 0);
  EXPECT_TRUE(env.state().hidden_order == order);

  // The first ball was already paid this cycle, so collecting it again is free.
  CollectOutcome repeat = collect_ball(&env, order[0]);
  EXPECT_EQ(repeat.reward_sum, 0.0f);
  EXPECT_TRUE(repeat.last.correct);
  EXPECT_EQ(env.state().progress, 1);
}

TEST(Scenario, StrictVisitPenaltyChargesWrongTouches) {
  GridConfig cfg = scripted_config();
  cfg.strict_visit_penalty = true;
  HiddenOrderEnv env(cfg);
  env.reset(7);
  std::vector<int> order = env.state().hidden_order;

  CollectOutcome wrong = collect_ball(&env, order[1]);
  EXPECT_EQ(wrong.reward_sum, 0.0f);
  EXPECT_TRUE(wrong.last.map_reset);

  EXPECT_EQ(collect_ball(&env, order[0]).reward_sum, 3.0f);
  // order[1] was touched during a failed try, so its correct collection pays 0
  // under the strict reading.
  CollectOutcome second = collect_ball(&env, order[1]);
  EXPECT_TRUE(second.last.correct);
  EXPECT_EQ(second.reward_sum, 0.0f);
}

TEST(Step, CollectionOnlyOnEntry) {
  HiddenOrderEnv env(scripted_config());
  env.reset(7);
  std::vector<int> order = env.state().hidden_order;
  int wrong = order[3];
  collect_ball(&env, wrong);
  // The agent now stands on the restored wrong ball. Turning in place must
  // not trigger another collection.
  ASSERT_TRUE(env.state().agent_pos == env.state().ball_home[static_cast<size_t>(wrong)]);
  ASSERT_TRUE(env.state().ball_present[static_cast<size_t>(wrong)]);
  for (int i = 0; i < 4; ++i) {
    StepResult res = env.step(tdrm::kActionTurnLeft);
    EXPECT_EQ(res.info.collected, -1);
  }
  // Walk one cell off and return: re-entry collects again.
  Cell home = env.state().agent_pos;
  bool moved = false;
  for (int tries = 0; tries < 4 && !moved; ++tries) {
    StepResult res = env.step(tdrm::kActionForward);
    if (!(env.state().agent_pos == home) && res.info.collected == -1) {
      moved = true;
    } else if (!(env.state().agent_pos == home)) {
      moved = true;  // stepped onto another ball; still fine, map just reset
    } else {
      env.step(tdrm::kActionTurnLeft);
    }
  }
  ASSERT_TRUE(moved);
  CollectOutcome back = collect_ball(&env, wrong);
  EXPECT_EQ(back.last.collected, wrong);
}

TEST(Step, DoneAtMaxStepsAndStepAfterDoneThrows) {
  GridConfig cfg = scripted_config();
  cfg.max_steps = 5;
  HiddenOrderEnv env(cfg);
  env.reset(3);
  for (int i = 0; i < 3; ++i) {
    EXPECT_FALSE(env.step(tdrm::kActionTurnLeft).done);
  }
  EXPECT_TRUE(env.step(tdrm::kActionTurnLeft).done);
  EXPECT_THROW(env.step(tdrm::kActionTurnLeft), tdrm::ContractError);
}

TEST(Step, RandomRolloutRewardAlphabetAndReturnBound) {
  GridConfig cfg = scripted_config();
  cfg.max_steps = 120;
  HiddenOrderEnv env(cfg);
  tdrm::RngStream rng(5);
  for (uint64_t seed = 0; seed < 20; ++seed) {
    env.reset(seed);
    float ret = 0.0f;
    while (!env.done()) {
      StepResult res = env.step(static_cast<int>(rng.uniform_int(3)));
      EXPECT_TRUE(res.reward == 0.0f || res.reward == 3.0f);
      ret += res.reward;
    }
    EXPECT_LE(ret, 3.0f * cfg.n_balls * (cfg.max_steps / cfg.n_balls));
  }
}

EnvState mask_state(const HiddenOrderEnv& env, Cell ball, Cell agent, Heading dir) {
  EnvState s;
  s.agent_pos = agent;
  s.agent_dir = dir;
  s.ball_home = {ball};
  s.ball_present = {1};
  s.hidden_order = {0};
  s.rewarded = {0};
  (void)env;
  return s;
}

TEST(Mask, EmptyViewAndSpriteAreaInvariance) {
  GridConfig cfg;
  cfg.n_balls = 1;
  cfg.render_size = 64;
  HiddenOrderEnv env(cfg);
  const int sprite = cfg.ball_sprite_px();
  ASSERT_EQ(sprite, 8);

  // Ball behind the agent: nothing in view.
  EnvState away = mask_state(env, {2, 3}, {6, 3}, Heading::kSouth);
  std::vector<uint8_t> m0 = env.foreground_mask(away);
  EXPECT_EQ(std::count(m0.begin(), m0.end(), 1), 0);

  // The same ball seen from several poses: area is always the sprite's.
  struct Case { Cell agent; Heading dir; };
  const Case cases[] = {
      {{6, 3}, Heading::kNorth}, {{4, 3}, Heading::kNorth}, {{2, 7}, Heading::kWest},
      {{2, 1}, Heading::kEast},  {{0, 3}, Heading::kSouth}, {{3, 4}, Heading::kWest},
  };
  for (const Case& c : cases) {
    EnvState s = mask_state(env, {2, 3}, c.agent, c.dir);
    std::vector<uint8_t> mask = env.foreground_mask(s);
    Observation obs = env.render_obs(s);
    EXPECT_EQ(std::count(mask.begin(), mask.end(), 1), sprite * sprite);
    for (size_t p = 0; p < mask.size(); ++p) {
      if (!mask[p]) continue;
      tdrm::Rgb px{obs.rgb[p * 3], obs.rgb[p * 3 + 1], obs.rgb[p * 3 + 2]};
      EXPECT_TRUE(px == tdrm::kBallPalette[0]);
    }
  }

  // Agent standing on the ball covers part of the sprite.
  EnvState on = mask_state(env, {2, 3}, {2, 3}, Heading::kNorth);
  std::vector<uint8_t> mon = env.foreground_mask(on);
  const int agent_px = std::max(1, sprite / 2);
  EXPECT_EQ(std::count(mon.begin(), mon.end(), 1), sprite * sprite - agent_px * agent_px);
}

TEST(Mask, PixelsAreExactByteColors) {
  GridConfig cfg = scripted_config();
  HiddenOrderEnv env(cfg);
  Observation obs = env.reset(11);
  // Every byte maps to float and back without loss.
  std::vector<float> f = obs.to_float01();
  for (size_t i = 0; i < f.size(); ++i) {
    EXPECT_EQ(static_cast<uint8_t>(std::lround(f[i] * 255.0f)), obs.rgb[i]);
  }
}

TEST(Episode, RolloutRecordReplayBitwise) {
  GridConfig cfg = scripted_config();
  cfg.max_steps = 48;
  HiddenOrderEnv env(cfg);
  tdrm::RngStream rng(9);
  std::vector<int> actions;
  for (int i = 0; i < 60; ++i) actions.push_back(static_cast<int>(rng.uniform_int(3)));
  tdrm::Episode ep = tdrm::rollout_actions(&env, 1234, actions);
  ep.validate();
  EXPECT_EQ(ep.length(), cfg.max_steps);
  EXPECT_EQ(ep.continues.back(), 0.0f);
  EXPECT_EQ(std::count(ep.continues.begin(), ep.continues.end(), 0.0f), 1);

  std::string path = testing::TempDir() + "/ep_roundtrip.tdep";
  tdrm::write_episode_record(path, ep);
  tdrm::EpisodeRecord rec = tdrm::read_episode_record(path);
  EXPECT_EQ(rec.seed, 1234u);
  EXPECT_EQ(rec.actions, ep.actions);

  HiddenOrderEnv env2(cfg);
  tdrm::Episode back = tdrm::replay_episode_record(&env2, rec);
  EXPECT_EQ(back.frames, ep.frames);
  EXPECT_EQ(back.rewards, ep.rewards);
  EXPECT_EQ(back.continues, ep.continues);
  EXPECT_EQ(back.full_collections, ep.full_collections);

  GridConfig other = cfg;
  other.render_size = 32;
  HiddenOrderEnv env3(other);
  EXPECT_THROW(tdrm::replay_episode_record(&env3, rec), tdrm::ContractError);
}

TEST(Episode, SuccessDefinition) {
  GridConfig cfg = scripted_config();
  cfg.max_steps = 40;
  HiddenOrderEnv env(cfg);

  // An agent that only spins never completes the order.
  std::vector<int> spins(39, tdrm::kActionTurnLeft);
  EXPECT_FALSE(tdrm::episode_success(tdrm::rollout_actions(&env, 7, spins)));

  // Collecting three of four then idling is still a failure.
  cfg.max_steps = 400;
  HiddenOrderEnv env2(cfg);
  env2.reset(7);
  std::vector<int> order = env2.state().hidden_order;
  std::vector<int> script;
  {
    HiddenOrderEnv probe(cfg);
    probe.reset(7);
    for (int k = 0; k < 3; ++k) {
      std::vector<int> leg = route_to(probe, probe.state().ball_home[static_cast<size_t>(order[static_cast<size_t>(k)])]);
      for (int a : leg) {
        probe.step(a);
        script.push_back(a);
      }
    }
  }
  tdrm::Episode partial = tdrm::rollout_actions(&env2, 7, script);
  EXPECT_EQ(partial.total_return(), 9.0f);
  EXPECT_FALSE(tdrm::episode_success(partial));

  // The full tour succeeds.
  HiddenOrderEnv env3(cfg);
  env3.reset(7);
  std::vector<int> full = script;
  {
    HiddenOrderEnv probe(cfg);
    probe.reset(7);
    for (int a : script) probe.step(a);
    std::vector<int> leg = route_to(probe, probe.state().ball_home[static_cast<size_t>(order[3])]);
    for (int a : leg) full.push_back(a);
  }
  tdrm::Episode done = tdrm::rollout_actions(&env3, 7, full);
  EXPECT_EQ(done.total_return(), 12.0f);
  EXPECT_TRUE(tdrm::episode_success(done));
}

}  // namespace
