#ifndef TDRM_WM_RSSM_HPP_
#define TDRM_WM_RSSM_HPP_

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tdrm/core/distributions.hpp"
#include "tdrm/core/ops.hpp"
#include "tdrm/core/params.hpp"
#include "tdrm/core/rng.hpp"
#include "tdrm/core/tensor.hpp"
#include "tdrm/nn/conv_stack.hpp"
#include "tdrm/nn/gru.hpp"
#include "tdrm/nn/linear.hpp"
#include "tdrm/wm/types.hpp"

namespace tdrm {

// Recurrent state-space baseline. The deterministic state advances one step
// at a time, h_t = gru(h_{t-1}, z_{t-1}, a_t), with h_0 the zero vector, and
// the posterior reads both h_t and the frame. Heads, latents and the loss are
// shared with the transformer model so the rest of the system runs unchanged.
struct RssmConfig {
  int64_t d_hidden = 200;
  int64_t latent_groups = 32;
  int64_t latent_classes = 32;
  int64_t t_max = 100;

  int64_t image_size = 64;
  int64_t cnn_depth = 32;
  int64_t embed_dim = 256;
  int64_t head_hidden = 200;
  int64_t head_depth = 2;
  int64_t latent_mlp_depth = 1;
  int n_actions = kNumEnvActions;

  double eta_x = 1.0;
  double eta_r = 1.0;
  double eta_g = 1.0;
  double kl_balance = 0.8;
  double kl_free_nats = 0.0;

  int64_t deterministic_dim() const { return d_hidden; }
  int64_t latent_dim() const { return latent_groups * latent_classes; }
  int64_t feature_dim() const { return d_hidden + latent_dim(); }

  void validate() const {
    TDRM_CHECK(d_hidden >= 1, "d_hidden must be positive");
    TDRM_CHECK(latent_groups >= 1 && latent_classes >= 2, "latent grid too small");
    TDRM_CHECK(t_max >= 2, "t_max must cover at least two slots");
    TDRM_CHECK(embed_dim >= 1 && cnn_depth >= 1 && head_hidden >= 1 && head_depth >= 1 &&
                   latent_mlp_depth >= 1,
               "head sizes must be positive");
    TDRM_CHECK(n_actions >= 1, "need at least one action");
    TDRM_CHECK(eta_x >= 0 && eta_r >= 0 && eta_g >= 0, "loss scales must be non-negative");
    TDRM_CHECK(kl_balance >= 0 && kl_balance <= 1, "kl_balance outside [0,1]");
    TDRM_CHECK(kl_free_nats >= 0, "kl_free_nats must be non-negative");
  }
};

template <typename S>
class Rssm : public WorldModel<S> {
 public:
  Rssm(RssmConfig cfg, ParamSet<S>& ps, const std::string& prefix, const RngStream& init)
      : cfg_(std::move(cfg)), prefix_(prefix) {
    cfg_.validate();
    enc_ = ImageEncoder<S>(ps, prefix + ".enc", cfg_.image_size, cfg_.cnn_depth, cfg_.embed_dim,
                           init);
    gru_ = GruCell<S>(ps, prefix + ".gru", cfg_.latent_dim() + cfg_.n_actions, cfg_.d_hidden,
                      init);
    post_ = Mlp<S>(ps, prefix + ".post", cfg_.d_hidden + cfg_.embed_dim, cfg_.head_hidden,
                   cfg_.latent_mlp_depth, cfg_.latent_dim(), init);
    prior_ = Mlp<S>(ps, prefix + ".prior", cfg_.d_hidden, cfg_.head_hidden, cfg_.latent_mlp_depth,
                    cfg_.latent_dim(), init);
    dec_ = ImageDecoder<S>(ps, prefix + ".dec", cfg_.feature_dim(), cfg_.cnn_depth,
                           cfg_.image_size, init);
    reward_ = Mlp<S>(ps, prefix + ".reward", cfg_.feature_dim(), cfg_.head_hidden, cfg_.head_depth,
                     1, init);
    cont_ = Mlp<S>(ps, prefix + ".cont", cfg_.feature_dim(), cfg_.head_hidden, cfg_.head_depth, 1,
                   init);
  }

  const RssmConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }
  int64_t feature_dim() const override { return cfg_.feature_dim(); }
  int64_t deterministic_dim() const override { return cfg_.d_hidden; }
  int64_t latent_dim() const override { return cfg_.latent_dim(); }
  int n_actions() const override { return cfg_.n_actions; }
  int64_t t_max() const override { return cfg_.t_max; }

  Tensor<S> encode_obs(const Tensor<S>& x) const { return enc_(x); }

  // One deterministic update: h' from (h, z sample, action one-hot).
  Tensor<S> gru_step(const Tensor<S>& h, const Tensor<S>& z, const Tensor<S>& a) const {
    return gru_(h, concat<S>({z, a}, static_cast<int>(z.rank()) - 1));
  }

  // Posterior conditioned on the recurrent state and the frame embedding.
  Tensor<S> posterior_logits(const Tensor<S>& h, const Tensor<S>& embed) const {
    const int64_t n = h.dim(0);
    return reshape(post_(concat<S>({h, embed}, 1)), {n, cfg_.latent_groups, cfg_.latent_classes});
  }

  Tensor<S> prior_logits(const Tensor<S>& h) const {
    std::vector<int64_t> shape = h.shape();
    shape.back() = cfg_.latent_groups;
    shape.push_back(cfg_.latent_classes);
    return reshape(prior_(h), shape);
  }

  struct Heads {
    Tensor<S> image;
    Tensor<S> reward;
    Tensor<S> cont_logit;
    Tensor<S> cont_prob;
  };

  Heads heads_from_features(const Tensor<S>& feat) const {
    TDRM_CHECK(feat.rank() == 2 && feat.dim(1) == cfg_.feature_dim(), "bad feature shape");
    Heads out;
    out.image = dec_(feat);
    out.reward = reshape(reward_(feat), {feat.dim(0)});
    out.cont_logit = reshape(cont_(feat), {feat.dim(0)});
    out.cont_prob = sigmoid(out.cont_logit);
    return out;
  }

  Heads predict_heads(const Tensor<S>& h, const Tensor<S>& z) const {
    return heads_from_features(concat<S>({h, z}, static_cast<int>(h.rank()) - 1));
  }

  FilterResult<S> observe_filter(const EpisodeBatch<S>& batch, RngStream* rng) override {
    const int64_t b = batch.b, t = batch.t;
    Tensor<S> embed = reshape(enc_(reshape(batch.images, {b * t, batch.hw, batch.hw, 3})),
                              {b, t, cfg_.embed_dim});
    Tensor<S> h = Tensor<S>::zeros({b, cfg_.d_hidden});
    std::vector<Tensor<S>> hs, zs, logits;
    Tensor<S> z;
    for (int64_t i = 0; i < t; ++i) {
      if (i > 0) {
        Tensor<S> a = reshape(slice(batch.actions_onehot, 1, i, 1),
                              {b, static_cast<int64_t>(cfg_.n_actions)});
        h = gru_step(h, z, a);
      }
      Tensor<S> e = reshape(slice(embed, 1, i, 1), {b, cfg_.embed_dim});
      Tensor<S> lg = posterior_logits(h, e);
      z = reshape(st_sample(softmax_groups(lg), *rng), {b, cfg_.latent_dim()});
      hs.push_back(reshape(h, {b, 1, cfg_.d_hidden}));
      zs.push_back(reshape(z, {b, 1, cfg_.latent_dim()}));
      logits.push_back(reshape(lg, {b, 1, cfg_.latent_groups, cfg_.latent_classes}));
    }
    FilterResult<S> out;
    out.h = concat(hs, 1);
    out.z = concat(zs, 1);
    out.post_logits = concat(logits, 1);
    out.features = concat<S>({out.h, out.z}, 2);
    return out;
  }

  WmLoss<S> loss(const EpisodeBatch<S>& batch, RngStream* rng) override {
    const int64_t b = batch.b, t = batch.t;
    FilterResult<S> f = observe_filter(batch, rng);
    Tensor<S> p_logits = prior_logits(f.h);
    Heads heads = heads_from_features(reshape(f.features, {b * t, cfg_.feature_dim()}));
    return masked_elbo(batch, f.post_logits, p_logits, heads.image, heads.reward,
                       heads.cont_logit, cfg_.eta_x, cfg_.eta_r, cfg_.eta_g, cfg_.kl_balance,
                       cfg_.kl_free_nats);
  }

  struct ImagineForcing {
    const Tensor<S>* z = nullptr;
    const Tensor<S>* actions = nullptr;
  };

  ImaginedTrajectory<S> imagine(const FilterResult<S>& ctx, const EpisodeBatch<S>& batch,
                                int64_t t0, int64_t horizon, const PolicyFn<S>& policy,
                                RngStream* rng) override {
    return imagine_with(ctx, batch, t0, horizon, policy, rng, ImagineForcing{});
  }

  ImaginedTrajectory<S> imagine_with(const FilterResult<S>& ctx, const EpisodeBatch<S>& batch,
                                     int64_t t0, int64_t horizon, const PolicyFn<S>& policy,
                                     RngStream* rng, const ImagineForcing& forced) {
    const int64_t b = batch.b;
    TDRM_CHECK(t0 >= 0 && t0 < batch.t, "imagination start outside the batch");
    TDRM_CHECK(horizon >= 0, "negative horizon");
    Tensor<S> h = reshape(slice(ctx.h, 1, t0, 1), {b, cfg_.d_hidden});
    Tensor<S> z = reshape(slice(ctx.z, 1, t0, 1), {b, cfg_.latent_dim()});
    ImaginedTrajectory<S> out;
    std::vector<Tensor<S>> feats{reshape(concat<S>({h, z}, 1), {b, 1, cfg_.feature_dim()})};
    std::vector<Tensor<S>> acts, logps, ents, rews, conts;
    for (int64_t j = 0; j < horizon; ++j) {
      Tensor<S> feat = concat<S>({h, z}, 1);
      Tensor<S> a;
      if (forced.actions != nullptr) {
        a = reshape(slice(*forced.actions, 1, j, 1), {b, static_cast<int64_t>(cfg_.n_actions)});
        acts.push_back(reshape(a, {b, 1, static_cast<int64_t>(cfg_.n_actions)}));
      } else {
        PolicySample<S> ps = policy(feat, rng);
        a = ps.onehot;
        acts.push_back(reshape(ps.onehot, {b, 1, static_cast<int64_t>(cfg_.n_actions)}));
        logps.push_back(reshape(ps.log_prob, {b, 1}));
        ents.push_back(reshape(ps.entropy, {b, 1}));
      }
      h = gru_step(h, z, a);
      if (forced.z != nullptr) {
        z = reshape(slice(*forced.z, 1, j, 1), {b, cfg_.latent_dim()});
      } else {
        z = reshape(st_sample(softmax_groups(prior_logits(h)), *rng), {b, cfg_.latent_dim()});
      }
      Tensor<S> f = concat<S>({h, z}, 1);
      feats.push_back(reshape(f, {b, 1, cfg_.feature_dim()}));
      rews.push_back(reshape(reward_(f), {b, 1}));
      conts.push_back(reshape(sigmoid(cont_(f)), {b, 1}));
    }
    out.features = concat(feats, 1);
    if (!acts.empty()) out.actions = concat(acts, 1);
    if (!logps.empty()) out.log_probs = concat(logps, 1);
    if (!ents.empty()) out.entropies = concat(ents, 1);
    if (!rews.empty()) {
      out.rewards = concat(rews, 1);
      out.discounts = concat(conts, 1);
    }
    return out;
  }

  OpenLoopResult<S> open_loop_generate(const EpisodeBatch<S>& batch, int64_t context,
                                       RngStream* rng) override {
    const int64_t b = batch.b, t = batch.t;
    TDRM_CHECK(context >= 0 && context < t, "context must leave steps to generate");
    Tensor<S> embed;
    if (context > 0) {
      embed = reshape(enc_(reshape(slice(batch.images, 1, 0, context),
                                   {b * context, batch.hw, batch.hw, 3})),
                      {b, context, cfg_.embed_dim});
    }
    Tensor<S> h = Tensor<S>::zeros({b, cfg_.d_hidden});
    Tensor<S> z;
    std::vector<Tensor<S>> images, rewards;
    auto emit = [&](const Tensor<S>& h_cur) {
      Tensor<S> zp = reshape(st_sample(softmax_groups(prior_logits(h_cur)), *rng),
                             {b, cfg_.latent_dim()});
      Tensor<S> f = concat<S>({h_cur, zp}, 1);
      images.push_back(reshape(dec_(f), {b, 1, batch.hw, batch.hw, 3}));
      rewards.push_back(reshape(reward_(f), {b, 1}));
      return zp;
    };
    for (int64_t i = 0; i < t; ++i) {
      if (i > 0) {
        Tensor<S> a = reshape(slice(batch.actions_onehot, 1, i, 1),
                              {b, static_cast<int64_t>(cfg_.n_actions)});
        h = gru_step(h, z, a);
      }
      if (i < context) {
        Tensor<S> e = reshape(slice(embed, 1, i, 1), {b, cfg_.embed_dim});
        z = reshape(st_sample(softmax_groups(posterior_logits(h, e)), *rng),
                    {b, cfg_.latent_dim()});
      } else {
        z = emit(h);
      }
    }
    OpenLoopResult<S> out;
    out.images = concat(images, 1);
    out.rewards = concat(rewards, 1);
    return out;
  }

  std::unique_ptr<FilterSession<S>> make_filter_session() override {
    return std::make_unique<Session>(this);
  }

 private:
  class Session : public FilterSession<S> {
   public:
    explicit Session(Rssm* m) : m_(m) {}

    Tensor<S> start(const Tensor<S>& obs, RngStream* rng) override {
      h_ = Tensor<S>::zeros({1, m_->cfg_.d_hidden});
      return posterior_feature(obs, rng);
    }

    Tensor<S> step(int action, const Tensor<S>& obs, RngStream* rng) override {
      TDRM_CHECK(z_.defined(), "step before start");
      Tensor<S> a = one_hot<S>({action}, m_->cfg_.n_actions);
      h_ = m_->gru_step(h_, z_, a);
      return posterior_feature(obs, rng);
    }

   private:
    Tensor<S> posterior_feature(const Tensor<S>& obs, RngStream* rng) {
      Tensor<S> lg = m_->posterior_logits(h_, m_->enc_(obs));
      z_ = reshape(st_sample(softmax_groups(lg), *rng), {1, m_->cfg_.latent_dim()});
      return concat<S>({h_, z_}, 1);
    }

    Rssm* m_;
    Tensor<S> h_, z_;
  };

  RssmConfig cfg_;
  std::string prefix_;
  ImageEncoder<S> enc_;
  GruCell<S> gru_;
  Mlp<S> post_;
  Mlp<S> prior_;
  ImageDecoder<S> dec_;
  Mlp<S> reward_;
  Mlp<S> cont_;
};

}  // namespace tdrm

#endif  // TDRM_WM_RSSM_HPP_
