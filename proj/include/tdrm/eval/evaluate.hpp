#ifndef TDRM_EVAL_EVALUATE_HPP_
#define TDRM_EVAL_EVALUATE_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "tdrm/agent/actor_critic.hpp"
#include "tdrm/core/common.hpp"
#include "tdrm/core/rng.hpp"
#include "tdrm/env/episode.hpp"
#include "tdrm/env/hidden_order.hpp"
#include "tdrm/eval/png.hpp"
#include "tdrm/wm/types.hpp"

namespace tdrm {

// Reward predictions are scored as class labels: a true +3 step is correct
// when the prediction lands within +-0.3 of 3, a true zero step when it lands
// within +-0.01 of 0. Both bands are inclusive.
inline constexpr double kNonzeroRewardLo = 2.7;
inline constexpr double kNonzeroRewardHi = 3.3;
inline constexpr double kZeroRewardTol = 0.01;

namespace detail {

// Pixel values are scored on the byte grid: predictions in [0,1] are clamped
// and rounded to 0..255, the same quantization used when writing images.
inline int quantize_unit(double v) {
  return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

template <typename S>
Tensor<S> obs_tensor(const Observation& obs) {
  std::vector<S> px(obs.rgb.size());
  for (size_t i = 0; i < obs.rgb.size(); ++i) px[i] = static_cast<S>(obs.rgb[i]) / S(255);
  return Tensor<S>::constant({1, obs.size, obs.size, 3}, std::move(px));
}

}  // namespace detail

// Open-loop predictor over a recorded episode: given the first `context`
// slots, produce frames (in [0,1]) and rewards for the remaining slots,
// conditioning on the episode's recorded actions. The world-model wrapper is
// the real implementation; tests substitute oracle or constant predictors.
template <typename S>
class EpisodeGenerator {
 public:
  virtual ~EpisodeGenerator() = default;
  virtual OpenLoopResult<S> generate(const Episode& ep, int64_t context) = 0;
};

template <typename S>
class WorldModelGenerator : public EpisodeGenerator<S> {
 public:
  WorldModelGenerator(WorldModel<S>* wm, uint64_t seed)
      : wm_(wm), rng_(RngStream(seed).child("eval_gen")) {}

  OpenLoopResult<S> generate(const Episode& ep, int64_t context) override {
    NoGradGuard ng;
    std::vector<const Episode*> eps = {&ep};
    EpisodeBatch<S> batch = make_episode_batch<S>(eps, ep.length(), wm_->n_actions());
    return wm_->open_loop_generate(batch, context, &rng_);
  }

 private:
  WorldModel<S>* wm_;
  RngStream rng_;
};

// Open-loop scores at one context length. MSE is per image on the 0-255
// pixel scale (so squared values up to 255^2), averaged over generated
// images; the foreground variant scores only pixels whose ground-truth
// render shows a ball sprite. Accuracies are percentages; a class with no
// steps in the generated region stays NaN rather than reading as 0.
struct GenerationEval {
  int64_t context = 0;
  double overall_mse = std::numeric_limits<double>::quiet_NaN();
  double foreground_mse = std::numeric_limits<double>::quiet_NaN();
  double zero_acc = std::numeric_limits<double>::quiet_NaN();
  double nonzero_acc = std::numeric_limits<double>::quiet_NaN();
  int64_t episodes_used = 0;
  int64_t episodes_skipped = 0;
};

// Scores a generator on recorded episodes at one context length. Episodes
// with no slots past the context are skipped and counted. Foreground masks
// come from replaying each episode's actions through a fresh environment, so
// they reflect ground truth rather than anything the model produced. Works
// on episodes from any policy, which also covers evaluating one model on
// trajectories collected by another.
template <typename S>
GenerationEval evaluate_generation(EpisodeGenerator<S>& gen,
                                   const std::vector<const Episode*>& episodes,
                                   const GridConfig& env_cfg, int64_t context) {
  TDRM_CHECK(context >= 1, "context must include at least the reset slot");
  GenerationEval out;
  out.context = context;
  HiddenOrderEnv env(env_cfg);
  const int64_t hw = env_cfg.render_size;
  const int64_t px = hw * hw * 3;
  double mse_sum = 0.0, fg_sum = 0.0;
  int64_t n_images = 0, n_fg_images = 0;
  int64_t zero_total = 0, zero_ok = 0, nz_total = 0, nz_ok = 0;

  for (const Episode* e : episodes) {
    const Episode& ep = *e;
    if (ep.length() <= context) {
      out.episodes_skipped += 1;
      continue;
    }
    TDRM_CHECK(ep.config_hash == env_cfg.hash(),
               "episode was recorded under a different environment configuration");
    TDRM_CHECK(ep.frame_size == hw, "episode frame size does not match the environment");
    const int64_t len = ep.length();
    const int64_t g = len - context;

    OpenLoopResult<S> res = gen.generate(ep, context);
    TDRM_CHECK(numel(res.images.shape()) == g * px, "generated frames have the wrong size");
    TDRM_CHECK(numel(res.rewards.shape()) == g, "generated rewards have the wrong size");

    // Ground-truth foreground masks for the generated slots.
    std::vector<std::vector<uint8_t>> masks(static_cast<size_t>(len));
    env.reset(ep.seed);
    masks[0] = env.foreground_mask(env.state());
    for (int64_t t = 1; t < len; ++t) {
      env.step(ep.actions[static_cast<size_t>(t)]);
      masks[static_cast<size_t>(t)] = env.foreground_mask(env.state());
    }

    const S* pred = res.images.value().data();
    const uint8_t* truth = ep.frames.data() + context * px;
    for (int64_t i = 0; i < g; ++i) {
      const std::vector<uint8_t>& mask = masks[static_cast<size_t>(context + i)];
      double se = 0.0, fg_se = 0.0;
      int64_t fg_px = 0;
      for (int64_t p = 0; p < px; ++p) {
        const int pb = detail::quantize_unit(static_cast<double>(pred[i * px + p]));
        const int d = pb - static_cast<int>(truth[i * px + p]);
        se += static_cast<double>(d) * d;
        if (mask[static_cast<size_t>(p / 3)]) {
          fg_se += static_cast<double>(d) * d;
          fg_px += 1;
        }
      }
      mse_sum += se / static_cast<double>(px);
      n_images += 1;
      if (fg_px > 0) {
        fg_sum += fg_se / static_cast<double>(fg_px);
        n_fg_images += 1;
      }
    }

    const S* rhat = res.rewards.value().data();
    for (int64_t i = 0; i < g; ++i) {
      const double r = static_cast<double>(ep.rewards[static_cast<size_t>(context + i)]);
      const double p = static_cast<double>(rhat[i]);
      if (r != 0.0) {
        nz_total += 1;
        if (p >= kNonzeroRewardLo && p <= kNonzeroRewardHi) nz_ok += 1;
      } else {
        zero_total += 1;
        if (std::abs(p) <= kZeroRewardTol) zero_ok += 1;
      }
    }
    out.episodes_used += 1;
  }

  if (n_images > 0) out.overall_mse = mse_sum / static_cast<double>(n_images);
  if (n_fg_images > 0) out.foreground_mse = fg_sum / static_cast<double>(n_fg_images);
  if (zero_total > 0) out.zero_acc = 100.0 * static_cast<double>(zero_ok) / static_cast<double>(zero_total);
  if (nz_total > 0) out.nonzero_acc = 100.0 * static_cast<double>(nz_ok) / static_cast<double>(nz_total);
  return out;
}

// Live-environment scores for a policy: mean episode return with its
// standard error, and the percentage of episodes that completed the full
// hidden order at least once.
struct AgentEval {
  int64_t n_episodes = 0;
  double mean_return = std::numeric_limits<double>::quiet_NaN();
  double stderr_return = std::numeric_limits<double>::quiet_NaN();
  double success_pct = std::numeric_limits<double>::quiet_NaN();
};

// A live policy maps the current observation (and read-only environment, for
// scripted oracles) to an action.
using EnvPolicy = std::function<int(const Observation&, const HiddenOrderEnv&)>;

// Runs n fresh episodes under per-episode policies built by `make_policy` and
// aggregates returns and successes. Episode seeds derive from `seed`, so the
// result is a pure function of (policies, env config, n, seed).
inline AgentEval evaluate_env_policy(const std::function<EnvPolicy(int64_t)>& make_policy,
                                     const GridConfig& env_cfg, int64_t n_episodes,
                                     uint64_t seed,
                                     std::vector<double>* returns_out = nullptr) {
  TDRM_CHECK(n_episodes >= 1, "need at least one evaluation episode");
  HiddenOrderEnv env(env_cfg);
  RngStream env_seeds = RngStream(seed).child("eval_env");
  AgentEval out;
  out.n_episodes = n_episodes;
  double sum = 0.0, sumsq = 0.0;
  int64_t successes = 0;
  for (int64_t i = 0; i < n_episodes; ++i) {
    EnvPolicy policy = make_policy(i);
    Observation obs = env.reset(env_seeds.next_u64());
    double ep_return = 0.0;
    bool success = false;
    while (!env.done()) {
      StepResult res = env.step(policy(obs, env));
      ep_return += static_cast<double>(res.reward);
      if (res.info.full_reset) success = true;
      obs = std::move(res.obs);
    }
    sum += ep_return;
    sumsq += ep_return * ep_return;
    if (success) successes += 1;
    if (returns_out) returns_out->push_back(ep_return);
  }
  const double n = static_cast<double>(n_episodes);
  out.mean_return = sum / n;
  out.success_pct = 100.0 * static_cast<double>(successes) / n;
  if (n_episodes > 1) {
    const double var = std::max(0.0, (sumsq - sum * sum / n) / (n - 1.0));
    out.stderr_return = std::sqrt(var / n);
  } else {
    out.stderr_return = 0.0;
  }
  return out;
}

// Evaluates a trained agent acting greedily through its world model's
// posterior filter. Parameters are never written; only the filter's latent
// draws consume randomness, from a stream derived from `seed`.
template <typename S>
AgentEval evaluate_agent(WorldModel<S>& wm, const ActorCritic<S>& agent,
                         const GridConfig& env_cfg, int64_t n_episodes, uint64_t seed,
                         std::vector<double>* returns_out = nullptr) {
  NoGradGuard ng;
  RngStream filter_rng = RngStream(seed).child("eval_filter");
  auto make_policy = [&](int64_t) -> EnvPolicy {
    auto sess = std::shared_ptr<FilterSession<S>>(wm.make_filter_session());
    auto started = std::make_shared<bool>(false);
    auto last_action = std::make_shared<int>(0);
    return [&wm, &agent, &filter_rng, sess, started, last_action](
               const Observation& obs, const HiddenOrderEnv&) {
      Tensor<S> feat = *started
                           ? sess->step(*last_action, detail::obs_tensor<S>(obs), &filter_rng)
                           : sess->start(detail::obs_tensor<S>(obs), &filter_rng);
      *started = true;
      *last_action = agent.act(feat, nullptr, false);
      return *last_action;
    };
  };
  return evaluate_env_policy(make_policy, env_cfg, n_episodes, seed, returns_out);
}

// Uniform-random baseline over the action set, driven by a child of `seed`.
inline AgentEval evaluate_random_policy(const GridConfig& env_cfg, int64_t n_episodes,
                                        uint64_t seed,
                                        std::vector<double>* returns_out = nullptr) {
  auto rng = std::make_shared<RngStream>(RngStream(seed).child("eval_random"));
  auto make_policy = [rng](int64_t) -> EnvPolicy {
    return [rng](const Observation&, const HiddenOrderEnv&) {
      return static_cast<int>(rng->uniform_int(kNumEnvActions));
    };
  };
  return evaluate_env_policy(make_policy, env_cfg, n_episodes, seed, returns_out);
}

inline constexpr int64_t kStripTilePx = 64;

// Side-by-side rollout strip: three 64 px bands stacked vertically. The top
// band shows the context frames the model saw, the middle band the full
// ground-truth episode, and the bottom band the open-loop continuation.
// Regions outside a band's range stay black. Width is one tile per slot.
template <typename S>
RgbImage generation_strip(const Episode& ep, const OpenLoopResult<S>& gen, int64_t context) {
  const int64_t len = ep.length();
  const int64_t hw = ep.frame_size;
  const int64_t px = hw * hw * 3;
  TDRM_CHECK(context >= 1 && context < len, "context must leave generated slots");
  const int64_t g = len - context;
  TDRM_CHECK(numel(gen.images.shape()) == g * px, "generated frames have the wrong size");

  RgbImage img;
  img.w = len * kStripTilePx;
  img.h = 3 * kStripTilePx;
  img.rgb.assign(static_cast<size_t>(img.w * img.h * 3), 0);
  auto paste = [&](int64_t band, int64_t tile, auto&& pixel) {
    for (int64_t r = 0; r < kStripTilePx; ++r) {
      for (int64_t c = 0; c < kStripTilePx; ++c) {
        const int64_t sr = r * hw / kStripTilePx;
        const int64_t sc = c * hw / kStripTilePx;
        const int64_t y = band * kStripTilePx + r;
        const int64_t x = tile * kStripTilePx + c;
        uint8_t* dst = img.rgb.data() + static_cast<size_t>((y * img.w + x) * 3);
        for (int64_t ch = 0; ch < 3; ++ch) dst[ch] = pixel(sr, sc, ch);
      }
    }
  };
  auto truth_px = [&](int64_t t) {
    const uint8_t* f = ep.frames.data() + static_cast<size_t>(t * px);
    return [f, hw](int64_t r, int64_t c, int64_t ch) {
      return f[(r * hw + c) * 3 + ch];
    };
  };
  for (int64_t t = 0; t < context; ++t) paste(0, t, truth_px(t));
  for (int64_t t = 0; t < len; ++t) paste(1, t, truth_px(t));
  const S* pred = gen.images.value().data();
  for (int64_t i = 0; i < g; ++i) {
    const S* f = pred + i * px;
    paste(2, context + i, [f, hw](int64_t r, int64_t c, int64_t ch) {
      return static_cast<uint8_t>(
          detail::quantize_unit(static_cast<double>(f[(r * hw + c) * 3 + ch])));
    });
  }
  return img;
}

}  // namespace tdrm

#endif  // TDRM_EVAL_EVALUATE_HPP_
