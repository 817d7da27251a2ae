#ifndef TDRM_WM_TSSM_HPP_
#define TDRM_WM_TSSM_HPP_

#include <cstdint>
#include <limits>
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
#include "tdrm/nn/linear.hpp"
#include "tdrm/nn/transformer.hpp"
#include "tdrm/wm/types.hpp"

namespace tdrm {

// Transformer state-space world model. The deterministic state h_t is the
// causal transformer's output at position t over a token stream that starts
// with a learned start token and continues with projections of
// (z_{t-1}, a_t) pairs, so h_t depends only on latents before t and actions
// up to t. The stochastic state z_t is a grouped categorical: its posterior
// looks at the current frame alone, its prior at h_t alone. Image, reward and
// continuation heads read concat(h_t, z_t).
struct TssmConfig {
  int64_t n_layers = 6;
  int64_t n_heads = 10;
  int64_t d_model = 200;
  int64_t d_ff = 400;
  GatingMode gating = GatingMode::kIdentityMapReordering;
  PositionalMode positional = PositionalMode::kLearnedAbsolute;
  bool concat_layer_outputs = true;

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

  int64_t deterministic_dim() const {
    return concat_layer_outputs ? n_layers * d_model : d_model;
  }
  int64_t latent_dim() const { return latent_groups * latent_classes; }
  int64_t feature_dim() const { return deterministic_dim() + latent_dim(); }

  void validate() const {
    TDRM_CHECK(n_layers >= 1, "need at least one transformer layer");
    TDRM_CHECK(n_heads >= 1 && d_model % n_heads == 0, "d_model must split across heads");
    TDRM_CHECK(d_ff >= 1, "d_ff must be positive");
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

  TransformerSpec transformer_spec() const {
    TransformerSpec spec;
    spec.n_layers = n_layers;
    spec.n_heads = n_heads;
    spec.d_model = d_model;
    spec.d_ff = d_ff;
    spec.t_max = t_max;
    spec.gating = gating;
    spec.positional = positional;
    spec.concat_layer_outputs = concat_layer_outputs;
    return spec;
  }
};

template <typename S>
class Tssm : public WorldModel<S> {
 public:
  Tssm(TssmConfig cfg, ParamSet<S>& ps, const std::string& prefix, const RngStream& init)
      : cfg_(std::move(cfg)), prefix_(prefix) {
    cfg_.validate();
    enc_ = ImageEncoder<S>(ps, prefix + ".enc", cfg_.image_size, cfg_.cnn_depth, cfg_.embed_dim,
                           init);
    post_ = Mlp<S>(ps, prefix + ".post", cfg_.embed_dim, cfg_.head_hidden, cfg_.latent_mlp_depth,
                   cfg_.latent_dim(), init);
    tf_ = CausalTransformer<S>(cfg_.transformer_spec(), ps, prefix + ".tf",
                               init);
    token_ = Linear<S>(ps, prefix + ".token", cfg_.latent_dim() + cfg_.n_actions, cfg_.d_model,
                       init);
    start_ = ps.create(prefix + ".start", {cfg_.d_model},
                       normal_init<S>(init, prefix + ".start", cfg_.d_model, S(0.02)));
    prior_ = Mlp<S>(ps, prefix + ".prior", cfg_.deterministic_dim(), cfg_.head_hidden,
                    cfg_.latent_mlp_depth, cfg_.latent_dim(), init);
    dec_ = ImageDecoder<S>(ps, prefix + ".dec", cfg_.feature_dim(), cfg_.cnn_depth,
                           cfg_.image_size, init);
    reward_ = Mlp<S>(ps, prefix + ".reward", cfg_.feature_dim(), cfg_.head_hidden, cfg_.head_depth,
                     1, init);
    cont_ = Mlp<S>(ps, prefix + ".cont", cfg_.feature_dim(), cfg_.head_hidden, cfg_.head_depth, 1,
                   init);
  }

  const TssmConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }
  int64_t feature_dim() const override { return cfg_.feature_dim(); }
  int64_t deterministic_dim() const override { return cfg_.deterministic_dim(); }
  int64_t latent_dim() const override { return cfg_.latent_dim(); }
  int n_actions() const override { return cfg_.n_actions; }
  int64_t t_max() const override { return cfg_.t_max; }

  // [N,H,W,3] frames -> [N,embed] embeddings.
  Tensor<S> encode_obs(const Tensor<S>& x) const { return enc_(x); }

  // Myopic posterior: logits [N,G,C] from single frames, no history.
  Tensor<S> posterior_logits(const Tensor<S>& x) const {
    return reshape(post_(encode_obs(x)), {x.dim(0), cfg_.latent_groups, cfg_.latent_classes});
  }

  // Parallel pass over a whole batch: h_t from the start token and the
  // (z_{i-1}, a_i) tokens with i <= t. Causality comes from the transformer's
  // mask, so trailing padded slots cannot leak into valid positions.
  Tensor<S> deterministic_states(const Tensor<S>& z, const Tensor<S>& a_onehot) const {
    const int64_t b = z.dim(0), t = z.dim(1);
    TDRM_CHECK(a_onehot.dim(0) == b && a_onehot.dim(1) == t, "z and actions misaligned");
    TDRM_CHECK(z.dim(2) == cfg_.latent_dim() && a_onehot.dim(2) == cfg_.n_actions,
               "bad latent or action width");
    std::vector<Tensor<S>> tokens;
    tokens.reserve(static_cast<size_t>(t));
    tokens.push_back(reshape(start_tokens(b), {b, 1, cfg_.d_model}));
    if (t > 1) {
      Tensor<S> pair = concat<S>({slice(z, 1, 0, t - 1), slice(a_onehot, 1, 1, t - 1)}, 2);
      tokens.push_back(token_(pair));
    }
    return tf_.forward(concat(tokens, 1));
  }

  // Prior over z_t from h_t alone: logits [..., G, C].
  Tensor<S> prior_logits(const Tensor<S>& h) const {
    std::vector<int64_t> shape = h.shape();
    shape.back() = cfg_.latent_groups;
    shape.push_back(cfg_.latent_classes);
    return reshape(prior_(h), shape);
  }

  struct Heads {
    Tensor<S> image;       // [N,H,W,3]
    Tensor<S> reward;      // [N]
    Tensor<S> cont_logit;  // [N]
    Tensor<S> cont_prob;   // [N]
  };

  // Decodes concat(h, z) features. Accepts [N,F].
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
    FilterResult<S> out;
    const int64_t b = batch.b, t = batch.t;
    check_window(t);
    Tensor<S> flat = reshape(batch.images, {b * t, batch.hw, batch.hw, 3});
    out.post_logits =
        reshape(posterior_logits(flat), {b, t, cfg_.latent_groups, cfg_.latent_classes});
    Tensor<S> q = softmax_groups(out.post_logits);
    out.z = reshape(st_sample(q, *rng), {b, t, cfg_.latent_dim()});
    out.h = deterministic_states(out.z, batch.actions_onehot);
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

  // Optional overrides for the autoregressive rollout: forced latents replace
  // prior samples and forced actions replace policy draws (teacher forcing).
  struct ImagineForcing {
    const Tensor<S>* z = nullptr;        // [B,H,G*C]
    const Tensor<S>* actions = nullptr;  // [B,H,A]
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
    if (cfg_.positional == PositionalMode::kLearnedAbsolute) {
      TDRM_CHECK(t0 + 1 + horizon <= cfg_.t_max,
                 "imagined steps would pass the absolute position budget");
    }
    typename CausalTransformer<S>::Cache cache = tf_.make_cache(b);
    Tensor<S> h = prime_cache(&cache, ctx.z, batch.actions_onehot, t0);
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
      drop_oldest_if_full(&cache);
      h = extend_state(&cache, z, a);
      if (forced.z != nullptr) {
        z = reshape(slice(*forced.z, 1, j, 1), {b, cfg_.latent_dim()});
      } else {
        Tensor<S> prior = softmax_groups(prior_logits(h));
        z = reshape(st_sample(prior, *rng), {b, cfg_.latent_dim()});
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
    check_window(t);
    Tensor<S> z_post;
    if (context > 0) {
      Tensor<S> prefix = reshape(slice(batch.images, 1, 0, context),
                                 {b * context, batch.hw, batch.hw, 3});
      Tensor<S> q = softmax_groups(
          reshape(posterior_logits(prefix), {b, context, cfg_.latent_groups, cfg_.latent_classes}));
      z_post = reshape(st_sample(q, *rng), {b, context, cfg_.latent_dim()});
    }
    typename CausalTransformer<S>::Cache cache = tf_.make_cache(b);
    Tensor<S> h = tf_.extend(cache, reshape(start_tokens(b), {b, 1, cfg_.d_model}));
    Tensor<S> z_prev;
    std::vector<Tensor<S>> images, rewards;
    auto emit = [&](const Tensor<S>& h_flat) {
      Tensor<S> prior = softmax_groups(prior_logits(h_flat));
      Tensor<S> z = reshape(st_sample(prior, *rng), {b, cfg_.latent_dim()});
      Tensor<S> f = concat<S>({h_flat, z}, 1);
      images.push_back(reshape(dec_(f), {b, 1, batch.hw, batch.hw, 3}));
      rewards.push_back(reshape(reward_(f), {b, 1}));
      return z;
    };
    if (context == 0) z_prev = emit(reshape(h, {b, cfg_.deterministic_dim()}));
    else z_prev = reshape(slice(z_post, 1, 0, 1), {b, cfg_.latent_dim()});
    for (int64_t i = 1; i < t; ++i) {
      Tensor<S> a = reshape(slice(batch.actions_onehot, 1, i, 1),
                            {b, static_cast<int64_t>(cfg_.n_actions)});
      drop_oldest_if_full(&cache);
      h = extend_state(&cache, z_prev, a);
      if (i < context) {
        z_prev = reshape(slice(z_post, 1, i, 1), {b, cfg_.latent_dim()});
      } else {
        z_prev = emit(reshape(h, {b, cfg_.deterministic_dim()}));
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
    explicit Session(Tssm* m) : m_(m) {}

    Tensor<S> start(const Tensor<S>& obs, RngStream* rng) override {
      cache_ = m_->tf_.make_cache(1);
      h_ = reshape(m_->tf_.extend(cache_, reshape(m_->start_tokens(1), {1, 1, m_->cfg_.d_model})),
                   {1, m_->cfg_.deterministic_dim()});
      return posterior_feature(obs, rng);
    }

    Tensor<S> step(int action, const Tensor<S>& obs, RngStream* rng) override {
      TDRM_CHECK(z_.defined(), "step before start");
      Tensor<S> a = one_hot<S>({action}, m_->cfg_.n_actions);
      m_->drop_oldest_if_full(&cache_);
      h_ = m_->extend_state(&cache_, z_, a);
      return posterior_feature(obs, rng);
    }

   private:
    Tensor<S> posterior_feature(const Tensor<S>& obs, RngStream* rng) {
      Tensor<S> q = softmax_groups(m_->posterior_logits(obs));
      z_ = reshape(st_sample(q, *rng), {1, m_->cfg_.latent_dim()});
      return concat<S>({h_, z_}, 1);
    }

    Tssm* m_;
    typename CausalTransformer<S>::Cache cache_;
    Tensor<S> h_, z_;
  };

  void check_window(int64_t t) const {
    if (cfg_.positional == PositionalMode::kLearnedAbsolute) {
      TDRM_CHECK(t <= cfg_.t_max, "batch longer than the absolute position budget");
    }
  }

  Tensor<S> start_tokens(int64_t b) const {
    return reshape(start_, {1, cfg_.d_model}) + Tensor<S>::zeros({b, cfg_.d_model});
  }

  // With relative positions a full cache slides: the oldest token is dropped
  // to make room. Absolute mode instead rejects such windows up front.
  void drop_oldest_if_full(typename CausalTransformer<S>::Cache* cache) const {
    if (cfg_.positional == PositionalMode::kRelative && cache->len == cfg_.t_max) {
      tf_.truncate_front(*cache, 1);
    }
  }

  // Appends the token for (z_prev, a) and returns the new h as [B,d_h].
  Tensor<S> extend_state(typename CausalTransformer<S>::Cache* cache, const Tensor<S>& z_prev,
                         const Tensor<S>& a) const {
    const int64_t b = z_prev.dim(0);
    Tensor<S> tok = token_(concat<S>({z_prev, a}, 1));
    return reshape(tf_.extend(*cache, reshape(tok, {b, 1, cfg_.d_model})),
                   {b, cfg_.deterministic_dim()});
  }

  // Replays context tokens 0..t0 through the cache; returns h at position t0.
  Tensor<S> prime_cache(typename CausalTransformer<S>::Cache* cache, const Tensor<S>& z,
                        const Tensor<S>& a_onehot, int64_t t0) const {
    const int64_t b = z.dim(0);
    Tensor<S> h = reshape(tf_.extend(*cache, reshape(start_tokens(b), {b, 1, cfg_.d_model})),
                          {b, cfg_.deterministic_dim()});
    for (int64_t i = 1; i <= t0; ++i) {
      Tensor<S> z_prev = reshape(slice(z, 1, i - 1, 1), {b, cfg_.latent_dim()});
      Tensor<S> a = reshape(slice(a_onehot, 1, i, 1), {b, static_cast<int64_t>(cfg_.n_actions)});
      h = extend_state(cache, z_prev, a);
    }
    return h;
  }

  TssmConfig cfg_;
  std::string prefix_;
  ImageEncoder<S> enc_;
  Mlp<S> post_;
  CausalTransformer<S> tf_;
  Linear<S> token_;
  Tensor<S> start_;
  Mlp<S> prior_;
  ImageDecoder<S> dec_;
  Mlp<S> reward_;
  Mlp<S> cont_;
};

}  // namespace tdrm

#endif  // TDRM_WM_TSSM_HPP_
