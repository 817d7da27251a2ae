#ifndef TDRM_AGENT_ACTOR_CRITIC_HPP_
#define TDRM_AGENT_ACTOR_CRITIC_HPP_

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tdrm/core/distributions.hpp"
#include "tdrm/core/ops.hpp"
#include "tdrm/core/params.hpp"
#include "tdrm/core/rng.hpp"
#include "tdrm/core/tensor.hpp"
#include "tdrm/nn/linear.hpp"
#include "tdrm/wm/types.hpp"

namespace tdrm {

// Lambda-mixed return targets over an imagined rollout. Inputs per batch row:
// rewards [B,H] where entry t is the reward at imagined state t+1, values
// [B,H+1] at states 0..H, discounts [B,H] already containing the effective
// per-step factor (discount times continuation). Backward recursion
//   V_t = r_t + d_t * ((1 - lambda) * v_{t+1} + lambda * V_{t+1}),
// bootstrapped with V_H = v_H; returns [B,H] with V_t the target for state t.
template <typename S>
Tensor<S> lambda_returns(const Tensor<S>& rewards, const Tensor<S>& values,
                         const Tensor<S>& discounts, double lambda) {
  TDRM_CHECK(rewards.rank() == 2 && values.rank() == 2 && discounts.rank() == 2,
             "lambda_returns expects [B,H] inputs");
  const int64_t b = rewards.dim(0), h = rewards.dim(1);
  TDRM_CHECK(h >= 1, "lambda_returns needs a horizon of at least one step");
  TDRM_CHECK(values.dim(0) == b && values.dim(1) == h + 1 && discounts.dim(0) == b &&
                 discounts.dim(1) == h,
             "lambda_returns shape mismatch");
  TDRM_CHECK(lambda >= 0 && lambda <= 1, "lambda outside [0,1]");
  Tensor<S> carry = reshape(slice(values, 1, h, 1), {b, 1});
  std::vector<Tensor<S>> rev;
  rev.reserve(static_cast<size_t>(h));
  for (int64_t t = h - 1; t >= 0; --t) {
    Tensor<S> r = reshape(slice(rewards, 1, t, 1), {b, 1});
    Tensor<S> d = reshape(slice(discounts, 1, t, 1), {b, 1});
    Tensor<S> v_next = reshape(slice(values, 1, t + 1, 1), {b, 1});
    carry = r + d * (mul_scalar(v_next, S(1) - S(lambda)) + mul_scalar(carry, S(lambda)));
    rev.push_back(carry);
  }
  std::reverse(rev.begin(), rev.end());
  return concat(rev, 1);
}

// Trajectory weights: w_0 = 1 and w_t = w_{t-1} * d_{t-1}, all under
// stop-gradient, so later steps count less once the rollout may have ended.
template <typename S>
Tensor<S> discount_weights(const Tensor<S>& discounts) {
  TDRM_CHECK(discounts.rank() == 2, "discount_weights expects [B,H]");
  const int64_t b = discounts.dim(0), h = discounts.dim(1);
  Tensor<S> d = stop_grad(discounts);
  std::vector<Tensor<S>> cols{Tensor<S>::constant({b, 1},
                                                  std::vector<S>(static_cast<size_t>(b), S(1)))};
  for (int64_t t = 1; t < h; ++t)
    cols.push_back(cols.back() * reshape(slice(d, 1, t - 1, 1), {b, 1}));
  return concat(cols, 1);
}

struct AgentConfig {
  int64_t feature_dim = 0;
  int n_actions = 0;
  int64_t horizon = 15;
  double gamma = 0.99;
  double lambda = 0.95;
  double rho = 0.0;           // 0 = pure REINFORCE, 1 = pure dynamics backprop
  double eta_entropy = 1e-3;
  double explore_eps = 0.0;   // uniform mixing weight in explore mode
  int64_t explore_eps_decay_steps = 0;  // linear decay horizon; 0 keeps it flat
  int64_t k_starts = 1;
  int64_t slow_critic_period = 100;
  double discount_clamp = 1e-5;  // keeps imagined continuation away from 0 and 1
  int64_t hidden = 400;
  int64_t depth = 4;

  void validate() const {
    TDRM_CHECK(feature_dim >= 1 && n_actions >= 1, "agent needs feature and action sizes");
    TDRM_CHECK(horizon >= 1, "horizon must be at least 1");
    TDRM_CHECK(gamma > 0 && gamma < 1, "discount outside (0,1)");
    TDRM_CHECK(lambda >= 0 && lambda <= 1, "lambda outside [0,1]");
    TDRM_CHECK(rho >= 0 && rho <= 1, "reinforce mix outside [0,1]");
    TDRM_CHECK(eta_entropy >= 0, "entropy scale must be non-negative");
    TDRM_CHECK(explore_eps >= 0 && explore_eps <= 1, "explore mixing outside [0,1]");
    TDRM_CHECK(explore_eps_decay_steps >= 0, "negative decay horizon");
    TDRM_CHECK(k_starts >= 1, "need at least one imagination start state");
    TDRM_CHECK(slow_critic_period >= 1, "slow critic period must be at least 1");
    TDRM_CHECK(discount_clamp > 0 && discount_clamp < 0.5, "discount clamp outside (0,0.5)");
    TDRM_CHECK(hidden >= 1 && depth >= 1, "network sizes must be positive");
  }
};

// Actor-critic trained purely on imagined rollouts. The actor is a categorical
// policy over world-model features; the critic regresses lambda returns whose
// bootstrap values come from a slow copy of the critic, refreshed by hard sync.
template <typename S>
class ActorCritic {
 public:
  ActorCritic(AgentConfig cfg, ParamSet<S>& ps, const std::string& prefix, const RngStream& init)
      : cfg_(std::move(cfg)), prefix_(prefix), ps_(&ps) {
    cfg_.validate();
    actor_ = Mlp<S>(ps, prefix + ".actor", cfg_.feature_dim, cfg_.hidden, cfg_.depth,
                    cfg_.n_actions, init);
    critic_ = Mlp<S>(ps, prefix + ".critic", cfg_.feature_dim, cfg_.hidden, cfg_.depth, 1, init);
    slow_ = Mlp<S>(ps, prefix + ".slow_critic", cfg_.feature_dim, cfg_.hidden, cfg_.depth, 1,
                   init);
    ps.set_trainable(prefix + ".slow_critic", false);
    sync_slow_critic();
  }

  const AgentConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }

  Tensor<S> policy_logits(const Tensor<S>& features) const { return actor_(features); }
  Tensor<S> values(const Tensor<S>& features) const {
    return reshape(critic_(features), {features.dim(0)});
  }
  Tensor<S> slow_values(const Tensor<S>& features) const {
    return reshape(slow_(features), {features.dim(0)});
  }

  // One policy draw per row. The returned one-hot carries straight-through
  // gradients for the dynamics path; the log-prob selects with a stopped
  // one-hot so REINFORCE sees only the d(log pi)/d(theta) term.
  PolicySample<S> sample_policy(const Tensor<S>& features, RngStream* rng) const {
    Tensor<S> logits = actor_(features);
    Tensor<S> probs = softmax_last(logits);
    Tensor<S> logp = log_softmax_last(logits);
    PolicySample<S> out;
    out.onehot = st_sample(probs, *rng);
    out.log_prob = sum_last(stop_grad(out.onehot) * logp);
    out.entropy = cat_entropy(probs);
    return out;
  }

  PolicyFn<S> policy_fn() const {
    return [this](const Tensor<S>& features, RngStream* rng) {
      return sample_policy(features, rng);
    };
  }

  // Action for one live state [1,F]. Eval mode picks the most likely action;
  // explore mode samples, mixed with a (possibly decaying) uniform draw.
  int act(const Tensor<S>& feature_row, RngStream* rng, bool explore,
          int64_t env_step = 0) const {
    NoGradGuard ng;
    Tensor<S> probs = softmax_last(actor_(feature_row));
    if (!explore) {
      const auto& v = probs.value();
      return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
    }
    const double eps = explore_eps_at(env_step);
    if (eps > 0 && rng->uniform() < eps)
      return static_cast<int>(rng->uniform_int(cfg_.n_actions));
    return static_cast<int>(rng->categorical(probs.value().data(), cfg_.n_actions));
  }

  double explore_eps_at(int64_t env_step) const {
    if (cfg_.explore_eps_decay_steps <= 0) return cfg_.explore_eps;
    const double frac = 1.0 - static_cast<double>(env_step) /
                                  static_cast<double>(cfg_.explore_eps_decay_steps);
    return cfg_.explore_eps * std::max(0.0, frac);
  }

  struct AgentLoss {
    Tensor<S> actor;    // scalar
    Tensor<S> critic;   // scalar
    S entropy = S(0);   // mean policy entropy over the rollout, for metrics
    S mean_value = S(0);
  };

  // Actor and critic objectives over one imagined rollout. Continuation
  // predictions are clamped away from 0 and 1 before use; the lambda-return
  // bootstrap and the REINFORCE baseline both read the slow critic; the
  // actor loss averages the per-row weighted sums over the batch.
  AgentLoss losses(const ImaginedTrajectory<S>& traj) const {
    TDRM_CHECK(traj.rewards.defined() && traj.log_probs.defined(),
               "empty imagined trajectory");
    const int64_t b = traj.features.dim(0), h = traj.rewards.dim(1);
    TDRM_CHECK(h >= 1, "empty imagined trajectory");
    Tensor<S> feats = reshape(traj.features, {b * (h + 1), cfg_.feature_dim});
    Tensor<S> v_fast = reshape(critic_(feats), {b, h + 1});
    Tensor<S> v_slow = reshape(slow_(feats), {b, h + 1});
    Tensor<S> cont = clamp(traj.discounts, S(cfg_.discount_clamp),
                           S(1) - S(cfg_.discount_clamp));
    Tensor<S> d = mul_scalar(cont, S(cfg_.gamma));
    Tensor<S> v_target = lambda_returns(traj.rewards, v_slow, d, cfg_.lambda);
    Tensor<S> w = discount_weights(d);

    Tensor<S> objective;
    if (cfg_.rho > 0) objective = mul_scalar(v_target, S(cfg_.rho));
    if (cfg_.rho < 1) {
      Tensor<S> baseline = slice(v_slow, 1, 0, h);
      Tensor<S> reinforce = traj.log_probs * stop_grad(v_target - baseline);
      Tensor<S> scaled = mul_scalar(reinforce, S(1) - S(cfg_.rho));
      objective = objective.defined() ? objective + scaled : scaled;
    }
    if (cfg_.eta_entropy > 0)
      objective = objective + mul_scalar(traj.entropies, S(cfg_.eta_entropy));

    AgentLoss out;
    out.actor = mul_scalar(sum_all(w * objective), S(-1) / static_cast<S>(b));
    Tensor<S> err = square(slice(v_fast, 1, 0, h) - stop_grad(v_target));
    Tensor<S> w_sum = sum_all(w);
    out.critic = sum_all(w * err) / w_sum;
    out.entropy = mean_all(traj.entropies).item();
    out.mean_value = mean_all(stop_grad(v_target)).item();
    return out;
  }

  // Hard copy of the critic into the slow critic; bitwise.
  void sync_slow_critic() {
    const std::string fast = prefix_ + ".critic";
    const std::string slow = prefix_ + ".slow_critic";
    for (auto& e : ps_->entries()) {
      if (e.name.rfind(fast, 0) != 0) continue;
      const std::string target = slow + e.name.substr(fast.size());
      ps_->at(target).raw_value() = e.tensor.value();
    }
  }

  // Counts agent updates and refreshes the slow critic on the period.
  void after_update() {
    ++updates_;
    if (updates_ % cfg_.slow_critic_period == 0) sync_slow_critic();
  }

  int64_t updates_done() const { return updates_; }

  // Restores the update counter when resuming from a checkpoint so the slow
  // critic refresh phase is preserved.
  void set_updates_done(int64_t n) { updates_ = n; }

 private:
  AgentConfig cfg_;
  std::string prefix_;
  ParamSet<S>* ps_;
  Mlp<S> actor_;
  Mlp<S> critic_;
  Mlp<S> slow_;
  int64_t updates_ = 0;
};

}  // namespace tdrm

#endif  // TDRM_AGENT_ACTOR_CRITIC_HPP_
