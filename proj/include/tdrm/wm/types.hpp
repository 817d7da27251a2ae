#ifndef TDRM_WM_TYPES_HPP_
#define TDRM_WM_TYPES_HPP_

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "tdrm/core/common.hpp"
#include "tdrm/core/distributions.hpp"
#include "tdrm/core/ops.hpp"
#include "tdrm/core/rng.hpp"
#include "tdrm/core/tensor.hpp"
#include "tdrm/env/episode.hpp"

namespace tdrm {

// Padded, masked batch of whole episodes for world-model training. Slot 0 of
// every row is the reset frame: its action entry is the null action (-1,
// encoded as an all-zero one-hot row) and its reward is 0.
template <typename S>
struct EpisodeBatch {
  int64_t b = 0;   // rows
  int64_t t = 0;   // padded slots per row
  int64_t hw = 0;  // square frame edge
  int64_t n_actions = 0;

  Tensor<S> images;          // [B,T,H,W,3] in [0,1]
  std::vector<int> actions;  // B*T row-major, -1 for null and padding
  Tensor<S> actions_onehot;  // [B,T,A]
  Tensor<S> rewards;         // [B,T]
  Tensor<S> continues;       // [B,T], 0 at terminal slots
  Tensor<S> mask;            // [B,T], prefix of 1s per row
  std::vector<int> lengths;          // valid slots per row
  std::vector<uint64_t> episode_seeds;  // provenance for failure dumps
};

// Assembles a batch from whole episodes, zero-padding every stream to t_max.
template <typename S>
EpisodeBatch<S> make_episode_batch(const std::vector<const Episode*>& eps, int t_max,
                                   int n_actions) {
  TDRM_CHECK(!eps.empty(), "empty episode batch");
  TDRM_CHECK(t_max >= 1 && n_actions >= 1, "bad batch geometry");
  const int64_t b = static_cast<int64_t>(eps.size());
  const int hw = eps[0]->frame_size;
  EpisodeBatch<S> out;
  out.b = b;
  out.t = t_max;
  out.hw = hw;
  out.n_actions = n_actions;
  const int64_t px = static_cast<int64_t>(hw) * hw * 3;
  std::vector<S> images(static_cast<size_t>(b * t_max * px), S(0));
  std::vector<S> rewards(static_cast<size_t>(b * t_max), S(0));
  std::vector<S> continues(static_cast<size_t>(b * t_max), S(0));
  std::vector<S> mask(static_cast<size_t>(b * t_max), S(0));
  out.actions.assign(static_cast<size_t>(b * t_max), -1);
  for (int64_t i = 0; i < b; ++i) {
    const Episode& ep = *eps[static_cast<size_t>(i)];
    ep.validate();
    TDRM_CHECK(ep.frame_size == hw, "mixed frame sizes in one batch");
    const int len = ep.length();
    TDRM_CHECK(len <= t_max, "episode longer than the batch window");
    out.lengths.push_back(len);
    out.episode_seeds.push_back(ep.seed);
    for (int tt = 0; tt < len; ++tt) {
      const size_t at = static_cast<size_t>(i * t_max + tt);
      out.actions[at] = ep.actions[static_cast<size_t>(tt)];
      rewards[at] = static_cast<S>(ep.rewards[static_cast<size_t>(tt)]);
      continues[at] = static_cast<S>(ep.continues[static_cast<size_t>(tt)]);
      mask[at] = S(1);
      const uint8_t* src = ep.frames.data() + static_cast<size_t>(tt) * px;
      S* dst = images.data() + static_cast<size_t>((i * t_max + tt) * px);
      for (int64_t p = 0; p < px; ++p) dst[p] = static_cast<S>(src[p]) / S(255);
    }
  }
  out.images = Tensor<S>::constant({b, t_max, hw, hw, 3}, std::move(images));
  out.rewards = Tensor<S>::constant({b, t_max}, std::move(rewards));
  out.continues = Tensor<S>::constant({b, t_max}, std::move(continues));
  out.mask = Tensor<S>::constant({b, t_max}, std::move(mask));
  out.actions_onehot = reshape(one_hot<S>(out.actions, n_actions), {b, t_max, n_actions});
  return out;
}

// Scalar loss with its unscaled components. `total` combines the components
// with the configured weights; `kl` is the balanced KL's value.
template <typename S>
struct WmLoss {
  Tensor<S> total, image, reward, discount, kl;
};

// Posterior states for every slot of a batch: deterministic state h, the
// straight-through latent sample z, its logits, and concat(h, z) features.
template <typename S>
struct FilterResult {
  Tensor<S> h;            // [B,T,d_h]
  Tensor<S> z;            // [B,T,G*C]
  Tensor<S> post_logits;  // [B,T,G,C]
  Tensor<S> features;     // [B,T,d_h+G*C]
};

// One action draw from the agent: straight-through one-hot, its log
// probability, and the policy entropy at that state.
template <typename S>
struct PolicySample {
  Tensor<S> onehot;    // [B,A]
  Tensor<S> log_prob;  // [B]
  Tensor<S> entropy;   // [B]
};

template <typename S>
using PolicyFn = std::function<PolicySample<S>(const Tensor<S>& features, RngStream* rng)>;

// Latent rollout of length H. Feature row 0 is the start state; rows 1..H are
// imagined. Action row j is the action taken from state j, and reward /
// discount row j-1 describe imagined state j.
template <typename S>
struct ImaginedTrajectory {
  Tensor<S> features;   // [B,H+1,F]
  Tensor<S> actions;    // [B,H,A]
  Tensor<S> log_probs;  // [B,H]
  Tensor<S> entropies;  // [B,H]
  Tensor<S> rewards;    // [B,H]
  Tensor<S> discounts;  // [B,H] continuation probabilities
};

// Predicted frames and rewards for slots context..T-1 of an episode batch.
template <typename S>
struct OpenLoopResult {
  Tensor<S> images;   // [B,T-c,H,W,3]
  Tensor<S> rewards;  // [B,T-c]
};

// Incremental posterior filtering for one live episode (batch row of one).
// Both calls return the feature row [1,F] of the fresh posterior state.
template <typename S>
class FilterSession {
 public:
  virtual ~FilterSession() = default;
  virtual Tensor<S> start(const Tensor<S>& obs, RngStream* rng) = 0;
  virtual Tensor<S> step(int action, const Tensor<S>& obs, RngStream* rng) = 0;
};

// Mask-weighted negative ELBO shared by both world models. Head outputs are
// flat over batch and time: image [B*T,H,W,3], reward and cont_logit [B*T].
// Components come back unscaled; total applies the eta weights and the
// free-nats floor on the KL term.
template <typename S>
WmLoss<S> masked_elbo(const EpisodeBatch<S>& batch, const Tensor<S>& post_logits,
                      const Tensor<S>& prior_logits, const Tensor<S>& image,
                      const Tensor<S>& reward, const Tensor<S>& cont_logit, double eta_x,
                      double eta_r, double eta_g, double beta, double free_nats) {
  const int64_t b = batch.b, t = batch.t;
  const S mask_sum = sum_all(batch.mask).item();
  TDRM_CHECK(mask_sum > S(0), "batch mask selects no steps");
  Tensor<S> q = softmax_groups(post_logits);
  Tensor<S> p = softmax_groups(prior_logits);
  Tensor<S> x_err = sum_last(sum_last(sum_last(
      half_sq_err(reshape(image, {b, t, batch.hw, batch.hw, 3}), batch.images))));
  Tensor<S> r_err = half_sq_err(reshape(reward, {b, t}), batch.rewards);
  Tensor<S> g_err = bernoulli_nll(reshape(cont_logit, {b, t}), batch.continues);
  Tensor<S> kl = kl_balanced(q, p, S(beta));
  Tensor<S> kl_used =
      free_nats > 0 ? clamp(kl, S(free_nats), std::numeric_limits<S>::infinity()) : kl;
  auto masked_mean = [&](const Tensor<S>& per_step) {
    return mul_scalar(sum_all(per_step * batch.mask), S(1) / mask_sum);
  };
  WmLoss<S> out;
  out.image = masked_mean(x_err);
  out.reward = masked_mean(r_err);
  out.discount = masked_mean(g_err);
  out.kl = masked_mean(kl);
  Tensor<S> per_step = mul_scalar(x_err, S(eta_x)) + mul_scalar(r_err, S(eta_r)) +
                       mul_scalar(g_err, S(eta_g)) + kl_used;
  out.total = masked_mean(per_step);
  return out;
}

// Common surface of the transformer and recurrent world models.
template <typename S>
class WorldModel {
 public:
  virtual ~WorldModel() = default;
  virtual int64_t feature_dim() const = 0;
  virtual int64_t deterministic_dim() const = 0;
  virtual int64_t latent_dim() const = 0;
  virtual int n_actions() const = 0;
  virtual int64_t t_max() const = 0;
  virtual WmLoss<S> loss(const EpisodeBatch<S>& batch, RngStream* rng) = 0;
  virtual FilterResult<S> observe_filter(const EpisodeBatch<S>& batch, RngStream* rng) = 0;
  virtual ImaginedTrajectory<S> imagine(const FilterResult<S>& ctx, const EpisodeBatch<S>& batch,
                                        int64_t t0, int64_t horizon, const PolicyFn<S>& policy,
                                        RngStream* rng) = 0;
  virtual OpenLoopResult<S> open_loop_generate(const EpisodeBatch<S>& batch, int64_t context,
                                               RngStream* rng) = 0;
  virtual std::unique_ptr<FilterSession<S>> make_filter_session() = 0;
};

}  // namespace tdrm

#endif  // TDRM_WM_TYPES_HPP_
