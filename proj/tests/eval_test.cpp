#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "support/scripted_collector.hpp"
#include "tdrm/agent/actor_critic.hpp"
#include "tdrm/core/common.hpp"
#include "tdrm/core/params.hpp"
#include "tdrm/core/rng.hpp"
#include "tdrm/env/episode.hpp"
#include "tdrm/env/hidden_order.hpp"
#include "tdrm/eval/evaluate.hpp"
#include "tdrm/eval/png.hpp"
#include "tdrm/eval/report.hpp"
#include "tdrm/wm/tssm.hpp"

namespace {

using tdrm::AgentEval;
using tdrm::Episode;
using tdrm::EvalReport;
using tdrm::GenerationEval;
using tdrm::GridConfig;
using tdrm::OpenLoopResult;
using tdrm::RngStream;
using tdrm::Tensor;

GridConfig small_cfg(int max_steps = 12) {
  GridConfig c;
  c.grid_size = 5;
  c.n_balls = 2;
  c.min_pair_distance = 1;
  c.max_steps = max_steps;
  c.view_cells = 5;
  c.render_size = 8;
  return c;
}

Episode random_episode(const GridConfig& cfg, uint64_t seed, int n_actions_taken) {
  tdrm::HiddenOrderEnv env(cfg);
  RngStream rng(seed * 977 + 13);
  std::vector<int> acts;
  for (int i = 0; i < n_actions_taken; ++i) {
    acts.push_back(static_cast<int>(rng.uniform_int(tdrm::kNumEnvActions)));
  }
  return tdrm::rollout_actions(&env, seed, acts);
}

// Scripted-collector episode with rewards of both classes after `context`.
Episode find_reward_episode(const GridConfig& cfg, int context) {
  for (uint64_t seed = 1; seed < 200; ++seed) {
    Episode ep = tdrm_test::collect_episode(cfg, seed, tdrm_test::scripted_collector_policy());
    int nz = 0, z = 0;
    for (int t = context; t < ep.length(); ++t) {
      if (ep.rewards[static_cast<size_t>(t)] != 0.0f) {
        nz += 1;
      } else {
        z += 1;
      }
    }
    if (nz >= 1 && z >= 1) return ep;
  }
  ADD_FAILURE() << "no scripted episode with both reward classes found";
  return Episode{};
}

// Echoes the recorded frames; rewards map through fixed per-class values.
class MapOracle : public tdrm::EpisodeGenerator<double> {
 public:
  MapOracle(double on_nonzero, double on_zero) : nz_(on_nonzero), z_(on_zero) {}

  OpenLoopResult<double> generate(const Episode& ep, int64_t context) override {
    const int64_t px = static_cast<int64_t>(ep.frame_size) * ep.frame_size * 3;
    const int64_t g = ep.length() - context;
    std::vector<double> img(static_cast<size_t>(g * px));
    const uint8_t* src = ep.frames.data() + context * px;
    for (int64_t i = 0; i < g * px; ++i) img[static_cast<size_t>(i)] = src[i] / 255.0;
    std::vector<double> rew(static_cast<size_t>(g));
    for (int64_t i = 0; i < g; ++i) {
      const float r = ep.rewards[static_cast<size_t>(context + i)];
      rew[static_cast<size_t>(i)] = r != 0.0f ? nz_ : z_;
    }
    OpenLoopResult<double> out;
    out.images = Tensor<double>::constant({1, g, ep.frame_size, ep.frame_size, 3},
                                          std::move(img));
    out.rewards = Tensor<double>::constant({1, g}, std::move(rew));
    return out;
  }

 private:
  double nz_, z_;
};

// Truth-echoing oracle: exact frames and exact rewards.
class EchoOracle : public tdrm::EpisodeGenerator<double> {
 public:
  OpenLoopResult<double> generate(const Episode& ep, int64_t context) override {
    MapOracle frames(0, 0);
    OpenLoopResult<double> out = frames.generate(ep, context);
    const int64_t g = ep.length() - context;
    std::vector<double> rew(static_cast<size_t>(g));
    for (int64_t i = 0; i < g; ++i) rew[static_cast<size_t>(i)] = ep.rewards[static_cast<size_t>(context + i)];
    out.rewards = Tensor<double>::constant({1, g}, std::move(rew));
    return out;
  }
};

class BlackOracle : public tdrm::EpisodeGenerator<double> {
 public:
  OpenLoopResult<double> generate(const Episode& ep, int64_t context) override {
    const int64_t px = static_cast<int64_t>(ep.frame_size) * ep.frame_size * 3;
    const int64_t g = ep.length() - context;
    OpenLoopResult<double> out;
    out.images = Tensor<double>::constant(
        {1, g, ep.frame_size, ep.frame_size, 3},
        std::vector<double>(static_cast<size_t>(g * px), 0.0));
    out.rewards = Tensor<double>::constant({1, g}, std::vector<double>(static_cast<size_t>(g), 0.0));
    return out;
  }
};

std::string fresh_dir(const std::string& tag) {
  std::string dir = testing::TempDir() + "tdrm_eval_" + tag;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

TEST(GenerationMse, TruthEchoingOracleScoresExactlyZero) {
  GridConfig cfg = small_cfg();
  Episode ep = find_reward_episode(cfg, 6);
  std::vector<const Episode*> eps = {&ep};

  // Precondition: a ball sprite is visible somewhere in the generated region.
  tdrm::HiddenOrderEnv env(cfg);
  env.reset(ep.seed);
  int64_t fg = 0;
  for (int t = 1; t < ep.length(); ++t) {
    env.step(ep.actions[static_cast<size_t>(t)]);
    if (t >= 6) {
      for (uint8_t m : env.foreground_mask(env.state())) fg += m;
    }
  }
  ASSERT_GT(fg, 0);

  EchoOracle oracle;
  GenerationEval r = tdrm::evaluate_generation<double>(oracle, eps, cfg, 6);
  EXPECT_EQ(r.overall_mse, 0.0);
  EXPECT_EQ(r.foreground_mse, 0.0);
  EXPECT_EQ(r.zero_acc, 100.0);
  EXPECT_EQ(r.nonzero_acc, 100.0);
  EXPECT_EQ(r.episodes_used, 1);
  EXPECT_EQ(r.episodes_skipped, 0);
}

TEST(GenerationMse, AllBlackPredictorMatchesDirectComputation) {
  GridConfig cfg = small_cfg();
  std::vector<Episode> pool;
  for (uint64_t s = 1; s <= 3; ++s) pool.push_back(random_episode(cfg, s, 11));
  std::vector<const Episode*> eps;
  for (const Episode& e : pool) eps.push_back(&e);
  const int c = 5;

  BlackOracle black;
  GenerationEval r = tdrm::evaluate_generation<double>(black, eps, cfg, c);

  // Independent recomputation: black prediction means the error is the pixel
  // value itself.
  const int64_t px = static_cast<int64_t>(cfg.render_size) * cfg.render_size * 3;
  double mse_sum = 0.0, fg_sum = 0.0;
  int64_t imgs = 0, fg_imgs = 0;
  for (const Episode* e : eps) {
    tdrm::HiddenOrderEnv env(cfg);
    env.reset(e->seed);
    std::vector<std::vector<uint8_t>> masks = {env.foreground_mask(env.state())};
    for (int t = 1; t < e->length(); ++t) {
      env.step(e->actions[static_cast<size_t>(t)]);
      masks.push_back(env.foreground_mask(env.state()));
    }
    for (int t = c; t < e->length(); ++t) {
      const uint8_t* f = e->frames.data() + static_cast<size_t>(t) * px;
      double se = 0.0, fse = 0.0;
      int64_t fpx = 0;
      for (int64_t p = 0; p < px; ++p) {
        se += static_cast<double>(f[p]) * f[p];
        if (masks[static_cast<size_t>(t)][static_cast<size_t>(p / 3)]) {
          fse += static_cast<double>(f[p]) * f[p];
          fpx += 1;
        }
      }
      mse_sum += se / static_cast<double>(px);
      imgs += 1;
      if (fpx > 0) {
        fg_sum += fse / static_cast<double>(fpx);
        fg_imgs += 1;
      }
    }
  }
  EXPECT_DOUBLE_EQ(r.overall_mse, mse_sum / static_cast<double>(imgs));
  ASSERT_GT(fg_imgs, 0);
  EXPECT_DOUBLE_EQ(r.foreground_mse, fg_sum / static_cast<double>(fg_imgs));
  EXPECT_GT(r.foreground_mse, r.overall_mse);  // sprites are the bright pixels
  EXPECT_EQ(r.zero_acc, 100.0);                // black also predicts zero reward
}

TEST(RewardAccuracy, ThresholdBoundariesAreInclusive) {
  GridConfig cfg = small_cfg();
  Episode ep = find_reward_episode(cfg, 6);
  std::vector<const Episode*> eps = {&ep};
  auto acc = [&](double on_nz, double on_z) {
    MapOracle gen(on_nz, on_z);
    return tdrm::evaluate_generation<double>(gen, eps, cfg, 6);
  };
  EXPECT_EQ(acc(2.7, 0.0).nonzero_acc, 100.0);   // band edge counts
  EXPECT_EQ(acc(3.3, 0.0).nonzero_acc, 100.0);
  EXPECT_EQ(acc(2.65, 0.0).nonzero_acc, 0.0);    // just outside the band
  EXPECT_EQ(acc(3.35, 0.0).nonzero_acc, 0.0);
  EXPECT_EQ(acc(3.0, 0.01).zero_acc, 100.0);
  EXPECT_EQ(acc(3.0, -0.01).zero_acc, 100.0);
  EXPECT_EQ(acc(3.0, 0.011).zero_acc, 0.0);
  GenerationEval both = acc(0.0, 0.0);           // constant-zero reward head
  EXPECT_EQ(both.zero_acc, 100.0);
  EXPECT_EQ(both.nonzero_acc, 0.0);
}

TEST(RewardAccuracy, AbsentClassReportsNaNAndShortEpisodesSkip) {
  GridConfig cfg = small_cfg();
  // All-turn episode: the agent never moves, so no reward is ever paid.
  tdrm::HiddenOrderEnv env(cfg);
  Episode spin = tdrm::rollout_actions(&env, 11, std::vector<int>(11, tdrm::kActionTurnLeft));
  Episode shorty = random_episode(cfg, 12, 4);  // five slots only
  std::vector<const Episode*> eps = {&spin, &shorty};
  EchoOracle oracle;
  GenerationEval r = tdrm::evaluate_generation<double>(oracle, eps, cfg, 6);
  EXPECT_EQ(r.episodes_used, 1);
  EXPECT_EQ(r.episodes_skipped, 1);
  EXPECT_TRUE(std::isnan(r.nonzero_acc));
  EXPECT_EQ(r.zero_acc, 100.0);
  EXPECT_EQ(r.overall_mse, 0.0);

  std::vector<const Episode*> none = {&shorty};
  GenerationEval all_skipped = tdrm::evaluate_generation<double>(oracle, none, cfg, 6);
  EXPECT_EQ(all_skipped.episodes_used, 0);
  EXPECT_TRUE(std::isnan(all_skipped.overall_mse));

  GridConfig other = small_cfg();
  other.n_balls = 3;
  std::vector<const Episode*> wrong = {&spin};
  EXPECT_THROW(tdrm::evaluate_generation<double>(oracle, wrong, other, 6),
               tdrm::ContractError);
}

tdrm::TssmConfig mini_wm_cfg() {
  tdrm::TssmConfig wc;
  wc.n_layers = 1;
  wc.n_heads = 2;
  wc.d_model = 16;
  wc.d_ff = 32;
  wc.latent_groups = 4;
  wc.latent_classes = 4;
  wc.t_max = 12;
  wc.image_size = 8;
  wc.cnn_depth = 2;
  wc.embed_dim = 8;
  wc.head_hidden = 8;
  wc.head_depth = 2;
  wc.latent_mlp_depth = 1;
  return wc;
}

TEST(GenerationMse, RealModelScoresAreFiniteAndParamsUntouched) {
  GridConfig cfg = small_cfg();
  std::vector<Episode> pool;
  for (uint64_t s = 21; s <= 22; ++s) pool.push_back(random_episode(cfg, s, 11));
  std::vector<const Episode*> eps;
  for (const Episode& e : pool) eps.push_back(&e);

  tdrm::ParamSet<double> ps;
  tdrm::Tssm<double> wm(mini_wm_cfg(), ps, "wm", RngStream(30));
  auto before = ps.snapshot("wm");
  tdrm::WorldModelGenerator<double> gen(&wm, 31);
  GenerationEval r = tdrm::evaluate_generation<double>(gen, eps, cfg, 6);
  EXPECT_TRUE(std::isfinite(r.overall_mse));
  EXPECT_GE(r.overall_mse, 0.0);
  EXPECT_TRUE(std::isfinite(r.foreground_mse));
  EXPECT_TRUE(std::isnan(r.zero_acc) || (r.zero_acc >= 0.0 && r.zero_acc <= 100.0));
  EXPECT_EQ(ps.snapshot("wm"), before);
}

TEST(AgentScores, ScriptedCollectorAlwaysCompletesTheOrder) {
  GridConfig cfg = small_cfg(40);
  auto make = [](int64_t) { return tdrm_test::scripted_collector_policy(); };
  std::vector<double> returns;
  AgentEval r = tdrm::evaluate_env_policy(make, cfg, 25, 3, &returns);
  EXPECT_EQ(r.success_pct, 100.0);
  EXPECT_GE(r.mean_return, 6.0);  // completing both balls pays at least 3+3
  ASSERT_EQ(returns.size(), 25u);
  double sum = 0.0;
  for (double x : returns) sum += x;
  EXPECT_DOUBLE_EQ(r.mean_return, sum / 25.0);
}

TEST(AgentScores, RandomBaselineIsDeterministicPerSeed) {
  GridConfig cfg = small_cfg(20);
  std::vector<double> ra, rb;
  AgentEval a = tdrm::evaluate_random_policy(cfg, 50, 5, &ra);
  AgentEval b = tdrm::evaluate_random_policy(cfg, 50, 5, &rb);
  EXPECT_EQ(a.mean_return, b.mean_return);
  EXPECT_EQ(a.success_pct, b.success_pct);
  EXPECT_EQ(ra, rb);
  double sum = 0.0, sumsq = 0.0;
  for (double x : ra) {
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / 50.0;
  const double var = (sumsq - 50.0 * mean * mean) / 49.0;
  EXPECT_NEAR(a.stderr_return, std::sqrt(std::max(0.0, var) / 50.0), 1e-12);
}

TEST(AgentScores, WorldModelAgentEvalIsPureAndRepeatable) {
  GridConfig cfg = small_cfg();
  tdrm::ParamSet<double> ps;
  tdrm::Tssm<double> wm(mini_wm_cfg(), ps, "wm", RngStream(40));
  tdrm::AgentConfig ac;
  ac.feature_dim = wm.feature_dim();
  ac.n_actions = tdrm::kNumEnvActions;
  ac.hidden = 8;
  ac.depth = 2;
  tdrm::ActorCritic<double> agent(ac, ps, "ag", RngStream(41));
  auto before = ps.snapshot("");
  std::vector<double> ra, rb;
  AgentEval a = tdrm::evaluate_agent(wm, agent, cfg, 3, 7, &ra);
  AgentEval b = tdrm::evaluate_agent(wm, agent, cfg, 3, 7, &rb);
  EXPECT_EQ(ra, rb);
  EXPECT_EQ(a.mean_return, b.mean_return);
  EXPECT_EQ(a.n_episodes, 3);
  EXPECT_EQ(ps.snapshot(""), before);
}

TEST(Report, EmptyReportIsHeaderOnlyAndRoundTrips) {
  std::string path = fresh_dir("empty") + "/report.csv";
  tdrm::write_report_csv(EvalReport{}, path);
  std::ifstream f(path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  EXPECT_EQ(text, std::string(tdrm::kReportHeader) + "\n");
  EvalReport back = tdrm::read_report_csv(path);
  EXPECT_TRUE(back.generation.empty());
  EXPECT_FALSE(back.has_agent);
}

TEST(Report, PopulatedRoundTripAndSummary) {
  EvalReport rep;
  GenerationEval g1;
  g1.context = 60;
  g1.overall_mse = 123.5;
  g1.foreground_mse = 456.25;
  g1.zero_acc = 99.5;
  g1.nonzero_acc = 50.0;
  g1.episodes_used = 16;
  GenerationEval g2;
  g2.context = 80;
  g2.overall_mse = 88.0;
  g2.foreground_mse = 100.0;
  g2.zero_acc = 100.0;
  g2.episodes_skipped = 2;  // nonzero class absent: stays NaN
  rep.generation = {g1, g2};
  rep.has_agent = true;
  rep.agent.n_episodes = 100;
  rep.agent.mean_return = 3.25;
  rep.agent.stderr_return = 0.5;
  rep.agent.success_pct = 12.0;
  rep.checkpoint_hash = 0xABCDEF0123456789ull;
  rep.seed = 7;

  std::string path = fresh_dir("full") + "/report.csv";
  tdrm::write_report_csv(rep, path);
  EvalReport back = tdrm::read_report_csv(path);
  ASSERT_EQ(back.generation.size(), 2u);
  EXPECT_EQ(back.generation[0].context, 60);
  EXPECT_DOUBLE_EQ(back.generation[0].overall_mse, 123.5);
  EXPECT_DOUBLE_EQ(back.generation[0].nonzero_acc, 50.0);
  EXPECT_EQ(back.generation[0].episodes_used, 16);
  EXPECT_TRUE(std::isnan(back.generation[1].nonzero_acc));
  EXPECT_EQ(back.generation[1].episodes_skipped, 2);
  EXPECT_TRUE(back.has_agent);
  EXPECT_DOUBLE_EQ(back.agent.mean_return, 3.25);
  EXPECT_EQ(back.agent.n_episodes, 100);
  EXPECT_EQ(back.checkpoint_hash, rep.checkpoint_hash);
  EXPECT_EQ(back.seed, 7u);

  std::string summary = tdrm::report_summary_text(back);
  EXPECT_NE(summary.find("0-255"), std::string::npos);
  EXPECT_NE(summary.find("context 60"), std::string::npos);
  EXPECT_NE(summary.find("N/A"), std::string::npos);
  EXPECT_NE(summary.find("success 12.00%"), std::string::npos);
}

TEST(Report, RejectsCorruptFiles) {
  std::string dir = fresh_dir("corrupt");
  {
    std::ofstream f(dir + "/bad_header.csv");
    f << "totally,different,header\n";
  }
  EXPECT_THROW(tdrm::read_report_csv(dir + "/bad_header.csv"), tdrm::ContractError);
  {
    std::ofstream f(dir + "/bad_acc.csv");
    f << tdrm::kReportHeader << "\n";
    f << "generation,60,1.0,1.0,150,,,,,4,0,1,2\n";
  }
  EXPECT_THROW(tdrm::read_report_csv(dir + "/bad_acc.csv"), tdrm::ContractError);
  {
    std::ofstream f(dir + "/bad_kind.csv");
    f << tdrm::kReportHeader << "\n";
    f << "mystery,60,1.0,1.0,50,,,,,4,0,1,2\n";
  }
  EXPECT_THROW(tdrm::read_report_csv(dir + "/bad_kind.csv"), tdrm::ContractError);
}

TEST(Report, FileHashIsStableAndByteSensitive) {
  std::string dir = fresh_dir("hash");
  {
    std::ofstream f(dir + "/a.bin", std::ios::binary);
    f << "some checkpoint bytes";
  }
  const uint64_t h1 = tdrm::hash_file_bytes(dir + "/a.bin");
  EXPECT_EQ(tdrm::hash_file_bytes(dir + "/a.bin"), h1);
  {
    std::ofstream f(dir + "/a.bin", std::ios::binary);
    f << "some checkpoint bytez";
  }
  EXPECT_NE(tdrm::hash_file_bytes(dir + "/a.bin"), h1);
}

TEST(Strip, LayoutMatchesBandsAndPngDecodesBitwise) {
  GridConfig cfg = small_cfg();
  Episode ep = random_episode(cfg, 33, 11);
  const int c = 7;
  EchoOracle oracle;
  OpenLoopResult<double> gen = oracle.generate(ep, c);
  tdrm::RgbImage img = tdrm::generation_strip(ep, gen, c);
  const int64_t tile = tdrm::kStripTilePx;
  ASSERT_EQ(img.w, 12 * tile);
  ASSERT_EQ(img.h, 3 * tile);

  const int hw = ep.frame_size;
  auto at = [&](int64_t y, int64_t x, int64_t ch) {
    return img.rgb[static_cast<size_t>((y * img.w + x) * 3 + ch)];
  };
  auto truth = [&](int t, int r, int cc, int ch) {
    return ep.frames[static_cast<size_t>(((t * hw + r) * hw + cc) * 3 + ch)];
  };
  for (int t : {0, 5, 11}) {
    for (int r : {0, 31, 63}) {
      for (int x : {0, 17, 63}) {
        const int sr = r * hw / static_cast<int>(tile);
        const int sc = x * hw / static_cast<int>(tile);
        // Middle band always shows the ground truth.
        EXPECT_EQ(at(tile + r, t * tile + x, 1), truth(t, sr, sc, 1));
        if (t < c) {
          EXPECT_EQ(at(r, t * tile + x, 1), truth(t, sr, sc, 1));   // context band
          EXPECT_EQ(at(2 * tile + r, t * tile + x, 1), 0);          // prediction blank
        } else {
          EXPECT_EQ(at(r, t * tile + x, 1), 0);                     // context blank
          EXPECT_EQ(at(2 * tile + r, t * tile + x, 1), truth(t, sr, sc, 1));
        }
      }
    }
  }

  std::string path = fresh_dir("png") + "/strip.png";
  tdrm::write_png(path, img);
  std::ifstream f(path, std::ios::binary);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  ASSERT_GT(bytes.size(), 45u);
  const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  EXPECT_TRUE(std::equal(sig, sig + 8, bytes.begin()));
  auto be32at = [&](size_t i) {
    return (uint32_t(bytes[i]) << 24) | (uint32_t(bytes[i + 1]) << 16) |
           (uint32_t(bytes[i + 2]) << 8) | uint32_t(bytes[i + 3]);
  };
  EXPECT_EQ(be32at(16), static_cast<uint32_t>(img.w));
  EXPECT_EQ(be32at(20), static_cast<uint32_t>(img.h));

  // Walk the chunks, inflate the IDAT payload, and compare scanlines.
  std::vector<uint8_t> idat;
  size_t pos = 8;
  while (pos + 8 <= bytes.size()) {
    const uint32_t len = be32at(pos);
    std::string type(bytes.begin() + pos + 4, bytes.begin() + pos + 8);
    if (type == "IDAT") {
      idat.insert(idat.end(), bytes.begin() + pos + 8, bytes.begin() + pos + 8 + len);
    }
    pos += 12 + len;
  }
  ASSERT_FALSE(idat.empty());
  const size_t raw_size = static_cast<size_t>((img.w * 3 + 1) * img.h);
  std::vector<uint8_t> raw(raw_size);
  uLongf out_len = raw_size;
  ASSERT_EQ(uncompress(raw.data(), &out_len, idat.data(), idat.size()), Z_OK);
  ASSERT_EQ(out_len, raw_size);
  for (int64_t y = 0; y < img.h; ++y) {
    const uint8_t* line = raw.data() + static_cast<size_t>(y) * (img.w * 3 + 1);
    EXPECT_EQ(line[0], 0);
    EXPECT_TRUE(std::equal(line + 1, line + 1 + img.w * 3,
                           img.rgb.begin() + static_cast<size_t>(y) * img.w * 3));
  }
}

}  // namespace
