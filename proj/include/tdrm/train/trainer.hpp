#ifndef TDRM_TRAIN_TRAINER_HPP_
#define TDRM_TRAIN_TRAINER_HPP_

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tdrm/agent/actor_critic.hpp"
#include "tdrm/core/optim.hpp"
#include "tdrm/core/params.hpp"
#include "tdrm/core/rng.hpp"
#include "tdrm/env/episode.hpp"
#include "tdrm/env/hidden_order.hpp"
#include "tdrm/replay/trajectory_store.hpp"
#include "tdrm/train/checkpoint.hpp"
#include "tdrm/train/config.hpp"
#include "tdrm/train/metrics.hpp"
#include "tdrm/wm/rssm.hpp"
#include "tdrm/wm/tssm.hpp"

namespace tdrm {

// Runs the three-phase training cycle: collect whole episodes into replay,
// update the world model on sampled batches, update the agent on rollouts
// imagined from posterior start states. World-model parameters never change
// during agent updates because the actor and critic optimizers only touch
// their own name prefixes.
//
// Randomness is split into named child streams of the root seed (env_seeds,
// collect_filter, collect_policy, batch_wm, batch_agent, loss_wm, imagine),
// so each consumer draws an independent, individually restorable sequence.
template <typename S = double>
class Trainer {
 public:
  explicit Trainer(RunConfig cfg)
      : cfg_(prepare(std::move(cfg))),
        env_(cfg_.env),
        store_(std::make_unique<TrajectoryStore>(cfg_.replay)),
        rng_env_seeds_(RngStream(cfg_.seed).child("env_seeds")),
        rng_collect_filter_(RngStream(cfg_.seed).child("collect_filter")),
        rng_collect_policy_(RngStream(cfg_.seed).child("collect_policy")),
        rng_batch_wm_(RngStream(cfg_.seed).child("batch_wm")),
        rng_batch_agent_(RngStream(cfg_.seed).child("batch_agent")),
        rng_loss_wm_(RngStream(cfg_.seed).child("loss_wm")),
        rng_imagine_(RngStream(cfg_.seed).child("imagine")),
        start_time_(std::chrono::steady_clock::now()) {
    RngStream init(RngStream(cfg_.seed).child("init"));
    if (cfg_.model_kind == ModelKind::kTssm) {
      wm_ = std::make_unique<Tssm<S>>(cfg_.tssm, ps_, "wm", init);
    } else {
      wm_ = std::make_unique<Rssm<S>>(cfg_.rssm, ps_, "wm", init);
    }
    agent_ = std::make_unique<ActorCritic<S>>(cfg_.agent, ps_, "ag", init);
    AdamWConfig<S> oc;
    oc.clip_norm = static_cast<S>(cfg_.optim.clip_norm);
    oc.weight_decay = static_cast<S>(cfg_.optim.weight_decay);
    oc.lr = static_cast<S>(cfg_.optim.lr_wm);
    opt_wm_ = AdamW<S>(oc, "wm");
    oc.lr = static_cast<S>(cfg_.optim.lr_actor);
    opt_actor_ = AdamW<S>(oc, "ag.actor");
    oc.lr = static_cast<S>(cfg_.optim.lr_critic);
    opt_critic_ = AdamW<S>(oc, "ag.critic");
  }

  const RunConfig& config() const { return cfg_; }
  ParamSet<S>& params() { return ps_; }
  WorldModel<S>& world_model() { return *wm_; }
  ActorCritic<S>& agent() { return *agent_; }
  TrajectoryStore& store() { return *store_; }
  int64_t env_steps() const { return env_steps_; }
  int64_t episodes() const { return episodes_; }
  int64_t wm_updates() const { return wm_updates_; }
  int64_t agent_updates() const { return agent_updates_; }

  // Collects one whole episode with a fresh seed. With use_policy the live
  // frames stream through a posterior filter session and the agent picks
  // actions from the resulting features; otherwise actions are uniform.
  // When feats_out is given it receives the per-slot feature rows.
  Episode collect_one(bool use_policy, bool explore,
                      std::vector<Tensor<S>>* feats_out = nullptr) {
    NoGradGuard ng;
    const uint64_t ep_seed = rng_env_seeds_.next_u64();
    Observation obs = env_.reset(ep_seed);
    Episode ep;
    ep.seed = ep_seed;
    ep.config_hash = env_.config().hash();
    ep.frame_size = env_.config().render_size;
    append_slot(&ep, obs, kActionNull, 0.0f, false);
    std::unique_ptr<FilterSession<S>> sess;
    Tensor<S> feat;
    if (use_policy) {
      sess = wm_->make_filter_session();
      feat = sess->start(obs_to_tensor(obs), &rng_collect_filter_);
      if (feats_out) feats_out->push_back(feat);
    }
    while (!env_.done()) {
      int action = use_policy
                       ? agent_->act(feat, &rng_collect_policy_, explore, env_steps_)
                       : static_cast<int>(rng_collect_policy_.uniform_int(kNumEnvActions));
      StepResult res = env_.step(action);
      append_slot(&ep, res.obs, action, res.reward, res.done);
      if (res.info.full_reset) ep.full_collections += 1;
      env_steps_ += 1;
      if (use_policy) {
        feat = sess->step(action, obs_to_tensor(res.obs), &rng_collect_filter_);
        if (feats_out) feats_out->push_back(feat);
      }
    }
    last_episode_return_ = static_cast<double>(ep.total_return());
    episodes_ += 1;
    store_->add_episode(ep);
    return ep;
  }

  // One world-model update on a replay batch. Returns the loss for callers
  // that track progress.
  WmLoss<S> wm_update() {
    EpisodeBatch<S> batch =
        store_->template sample_sequences<S>(cfg_.schedule.batch_size, kNumEnvActions,
                                             &rng_batch_wm_);
    WmLoss<S> loss = wm_->loss(batch, &rng_loss_wm_);
    abort_if_not_finite(static_cast<double>(loss.total.item()), "world-model loss", batch);
    int64_t epoch = loss.total.backward();
    auto stats = opt_wm_.step(ps_, epoch);
    check_clip(stats);
    wm_updates_ += 1;
    MetricsRow row = base_row("wm");
    row.loss_total = static_cast<double>(loss.total.item());
    row.loss_image = static_cast<double>(loss.image.item());
    row.loss_reward = static_cast<double>(loss.reward.item());
    row.loss_discount = static_cast<double>(loss.discount.item());
    row.kl = static_cast<double>(loss.kl.item());
    log_row(row);
    return loss;
  }

  // One agent update: filter a fresh batch, pick k_starts posterior start
  // slots uniformly, imagine to the episode end from each, and step the actor
  // and critic on their summed objectives.
  typename ActorCritic<S>::AgentLoss agent_update() {
    EpisodeBatch<S> batch =
        store_->template sample_sequences<S>(cfg_.schedule.batch_size, kNumEnvActions,
                                             &rng_batch_agent_);
    FilterResult<S> ctx = wm_->observe_filter(batch, &rng_imagine_);
    int min_len = batch.lengths[0];
    for (int len : batch.lengths) min_len = std::min(min_len, len);
    const int64_t upper =
        std::min<int64_t>(min_len - 1, wm_->t_max() - 2);  // latest slot that can imagine
    TDRM_CHECK(upper >= 0, "episodes too short to imagine from");

    Tensor<S> actor_sum, critic_sum;
    double entropy_sum = 0.0, value_sum = 0.0;
    const int64_t k_starts = cfg_.agent.k_starts;
    for (int64_t k = 0; k < k_starts; ++k) {
      const int64_t t0 = rng_imagine_.uniform_int(upper + 1);
      const int64_t budget = wm_->t_max() - 1 - t0;
      const int64_t horizon =
          cfg_.schedule.imagine_to_end ? budget : std::min<int64_t>(cfg_.agent.horizon, budget);
      ImaginedTrajectory<S> traj =
          wm_->imagine(ctx, batch, t0, horizon, agent_->policy_fn(), &rng_imagine_);
      auto loss = agent_->losses(traj);
      actor_sum = actor_sum.defined() ? actor_sum + loss.actor : loss.actor;
      critic_sum = critic_sum.defined() ? critic_sum + loss.critic : loss.critic;
      entropy_sum += static_cast<double>(loss.entropy);
      value_sum += static_cast<double>(loss.mean_value);
    }
    Tensor<S> actor_loss = mul_scalar(actor_sum, S(1) / static_cast<S>(k_starts));
    Tensor<S> critic_loss = mul_scalar(critic_sum, S(1) / static_cast<S>(k_starts));
    abort_if_not_finite(static_cast<double>(actor_loss.item()), "actor loss", batch);
    abort_if_not_finite(static_cast<double>(critic_loss.item()), "critic loss", batch);

    int64_t actor_epoch = actor_loss.backward();
    check_clip(opt_actor_.step(ps_, actor_epoch));
    int64_t critic_epoch = critic_loss.backward();
    check_clip(opt_critic_.step(ps_, critic_epoch));
    agent_->after_update();
    agent_updates_ += 1;

    typename ActorCritic<S>::AgentLoss out;
    out.actor = actor_loss;
    out.critic = critic_loss;
    out.entropy = static_cast<S>(entropy_sum / static_cast<double>(k_starts));
    out.mean_value = static_cast<S>(value_sum / static_cast<double>(k_starts));
    MetricsRow row = base_row("agent");
    row.actor_loss = static_cast<double>(actor_loss.item());
    row.critic_loss = static_cast<double>(critic_loss.item());
    row.policy_entropy = static_cast<double>(out.entropy);
    log_row(row);
    return out;
  }

  // Collects until the cycle's step quota is met (whole episodes), then runs
  // the configured number of world-model and agent updates.
  void run_cycle() {
    const int64_t target = env_steps_ + cfg_.schedule.steps_per_cycle;
    while (env_steps_ < target) collect_one(true, true);
    for (int64_t i = 0; i < cfg_.schedule.wm_updates; ++i) wm_update();
    for (int64_t i = 0; i < cfg_.schedule.agent_updates; ++i) agent_update();
    cycles_ += 1;
  }

  // Full training run: random prefill, then cycles until the step budget,
  // with periodic checkpoints and a final one under the logdir.
  void run() {
    TDRM_CHECK(!cfg_.logdir.empty(), "training needs a logdir");
    std::filesystem::create_directories(cfg_.logdir);
    open_log();
    {
      std::ofstream cf(cfg_.logdir + "/config.txt");
      TDRM_CHECK(cf.good(), "logdir is not writable: " + cfg_.logdir);
      cf << config_to_text(cfg_);
    }
    while (env_steps_ < cfg_.schedule.prefill_steps) collect_one(false, false);
    while (env_steps_ < cfg_.schedule.total_env_steps) {
      run_cycle();
      if (env_steps_ - last_checkpoint_step_ >= cfg_.schedule.checkpoint_every) {
        save(cfg_.logdir + "/ckpt_" + std::to_string(env_steps_) + ".tdrm");
        last_checkpoint_step_ = env_steps_;
      }
    }
    save(cfg_.logdir + "/final.tdrm");
  }

  // Serializes parameters, optimizer moments, every RNG stream, the loop
  // counters, and the replay buffer as compact seed+action records.
  void save(const std::string& path) {
    CheckpointWriter w;
    w.add_string("__meta.kind", model_kind_name(cfg_.model_kind));
    w.add_string("__meta.config", config_to_text(cfg_));
    w.add_scalar_u64("__meta.arch_hash", cfg_.arch_hash());
    save_params(w, ps_);
    save_adamw(w, opt_wm_, "wm");
    save_adamw(w, opt_actor_, "actor");
    save_adamw(w, opt_critic_, "critic");
    save_rng(w, rng_env_seeds_, "env_seeds");
    save_rng(w, rng_collect_filter_, "collect_filter");
    save_rng(w, rng_collect_policy_, "collect_policy");
    save_rng(w, rng_batch_wm_, "batch_wm");
    save_rng(w, rng_batch_agent_, "batch_agent");
    save_rng(w, rng_loss_wm_, "loss_wm");
    save_rng(w, rng_imagine_, "imagine");
    w.add_scalar_u64("__meta.env_steps", static_cast<uint64_t>(env_steps_));
    w.add_scalar_u64("__meta.episodes", static_cast<uint64_t>(episodes_));
    w.add_scalar_u64("__meta.cycles", static_cast<uint64_t>(cycles_));
    w.add_scalar_u64("__meta.wm_updates", static_cast<uint64_t>(wm_updates_));
    w.add_scalar_u64("__meta.agent_updates", static_cast<uint64_t>(agent_updates_));
    w.add_scalar_u64("__meta.slow_critic_updates",
                     static_cast<uint64_t>(agent_->updates_done()));
    w.add_scalar_u64("__meta.last_checkpoint_step",
                     static_cast<uint64_t>(last_checkpoint_step_));
    w.add_f64("__meta.last_episode_return", {1}, {last_episode_return_});
    w.add_scalar_u64("__replay.count", store_->size());
    w.add_scalar_u64("__replay.config_hash", env_.config().hash());
    for (size_t i = 0; i < store_->size(); ++i) {
      const Episode& ep = store_->episode(i);
      const std::string pre = "__replay." + std::to_string(i) + ".";
      w.add_scalar_u64(pre + "seed", ep.seed);
      std::vector<int64_t> actions(ep.actions.begin(), ep.actions.end());
      w.add_i64(pre + "actions", {static_cast<int64_t>(actions.size())}, actions);
      w.add_f32(pre + "rewards", {static_cast<int64_t>(ep.rewards.size())}, ep.rewards);
      std::vector<uint8_t> dones(ep.continues.size());
      for (size_t t = 0; t < ep.continues.size(); ++t) dones[t] = ep.continues[t] == 0.0f;
      w.add_u8(pre + "dones", {static_cast<int64_t>(dones.size())}, dones);
    }
    w.write(path);
  }

  // Restores a checkpoint written by a trainer with the same architecture.
  // Replay episodes are rebuilt by replaying their recorded actions through a
  // fresh environment; rewards must reproduce bitwise.
  void load(const std::string& path) {
    CheckpointFile f = CheckpointFile::load(path);
    TDRM_CHECK(f.kind() == model_kind_name(cfg_.model_kind),
               "checkpoint holds a " + f.kind() + " model but this run expects " +
                   model_kind_name(cfg_.model_kind) + "; refusing to load");
    TDRM_CHECK(f.arch_hash() == cfg_.arch_hash(),
               "checkpoint was written by a different architecture or environment "
               "configuration; refusing to load");
    load_params(f, ps_);
    load_adamw(f, opt_wm_, "wm");
    load_adamw(f, opt_actor_, "actor");
    load_adamw(f, opt_critic_, "critic");
    load_rng(f, rng_env_seeds_, "env_seeds");
    load_rng(f, rng_collect_filter_, "collect_filter");
    load_rng(f, rng_collect_policy_, "collect_policy");
    load_rng(f, rng_batch_wm_, "batch_wm");
    load_rng(f, rng_batch_agent_, "batch_agent");
    load_rng(f, rng_loss_wm_, "loss_wm");
    load_rng(f, rng_imagine_, "imagine");
    env_steps_ = static_cast<int64_t>(f.scalar_u64("__meta.env_steps"));
    episodes_ = static_cast<int64_t>(f.scalar_u64("__meta.episodes"));
    cycles_ = static_cast<int64_t>(f.scalar_u64("__meta.cycles"));
    wm_updates_ = static_cast<int64_t>(f.scalar_u64("__meta.wm_updates"));
    agent_updates_ = static_cast<int64_t>(f.scalar_u64("__meta.agent_updates"));
    agent_->set_updates_done(static_cast<int64_t>(f.scalar_u64("__meta.slow_critic_updates")));
    last_checkpoint_step_ = static_cast<int64_t>(f.scalar_u64("__meta.last_checkpoint_step"));
    last_episode_return_ = f.f64("__meta.last_episode_return")[0];
    TDRM_CHECK(f.scalar_u64("__replay.config_hash") == env_.config().hash(),
               "checkpoint replay episodes come from a different environment; refusing to load");
    store_ = std::make_unique<TrajectoryStore>(cfg_.replay);
    HiddenOrderEnv scratch(cfg_.env);
    const uint64_t count = f.scalar_u64("__replay.count");
    for (uint64_t i = 0; i < count; ++i) {
      const std::string pre = "__replay." + std::to_string(i) + ".";
      EpisodeRecord rec;
      rec.config_hash = env_.config().hash();
      rec.seed = f.scalar_u64(pre + "seed");
      std::vector<int64_t> actions = f.i64(pre + "actions");
      rec.actions.assign(actions.begin(), actions.end());
      rec.rewards = f.f32(pre + "rewards");
      rec.dones = f.u8(pre + "dones");
      store_->add_episode(replay_episode_record(&scratch, rec));
    }
  }

  double wallclock_s() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time_)
        .count();
  }

 private:
  static RunConfig prepare(RunConfig cfg) {
    cfg.finalize();
    cfg.validate();
    return cfg;
  }

  Tensor<S> obs_to_tensor(const Observation& obs) const {
    const int64_t hw = obs.size;
    std::vector<S> v(obs.rgb.size());
    for (size_t i = 0; i < obs.rgb.size(); ++i) v[i] = static_cast<S>(obs.rgb[i]) / S(255);
    return Tensor<S>::constant({1, hw, hw, 3}, std::move(v));
  }

  void abort_if_not_finite(double value, const std::string& what,
                           const EpisodeBatch<S>& batch) const {
    if (std::isfinite(value)) return;
    std::ostringstream msg;
    msg << "non-finite " << what << " at env step " << env_steps_
        << "; offending batch episode seeds:";
    for (uint64_t s : batch.episode_seeds) msg << ' ' << s;
    throw ContractError(msg.str());
  }

  void check_clip(const typename AdamW<S>::StepStats& stats) const {
    if (!stats.applied || cfg_.optim.clip_norm <= 0) return;
    TDRM_CHECK(static_cast<double>(stats.post_clip_norm) <= cfg_.optim.clip_norm + 1e-6,
               "post-clip gradient norm exceeds the configured clip");
  }

  MetricsRow base_row(const char* phase) {
    MetricsRow row;
    row.step = env_steps_;
    row.phase = phase;
    row.episode_return = episodes_ > 0 ? last_episode_return_
                                       : std::numeric_limits<double>::quiet_NaN();
    row.episodes = episodes_;
    row.wallclock_s = wallclock_s();
    return row;
  }

  void open_log() {
    if (!log_ && !cfg_.logdir.empty()) {
      log_ = std::make_unique<MetricsLog>(cfg_.logdir + "/metrics.csv");
    }
  }

  void log_row(const MetricsRow& row) {
    if (log_) log_->append(row);
  }

  RunConfig cfg_;
  HiddenOrderEnv env_;
  std::unique_ptr<TrajectoryStore> store_;
  ParamSet<S> ps_;
  std::unique_ptr<WorldModel<S>> wm_;
  std::unique_ptr<ActorCritic<S>> agent_;
  AdamW<S> opt_wm_{AdamWConfig<S>{}, "wm"};
  AdamW<S> opt_actor_{AdamWConfig<S>{}, "ag.actor"};
  AdamW<S> opt_critic_{AdamWConfig<S>{}, "ag.critic"};
  RngStream rng_env_seeds_, rng_collect_filter_, rng_collect_policy_;
  RngStream rng_batch_wm_, rng_batch_agent_, rng_loss_wm_, rng_imagine_;
  std::unique_ptr<MetricsLog> log_;
  int64_t env_steps_ = 0;
  int64_t episodes_ = 0;
  int64_t cycles_ = 0;
  int64_t wm_updates_ = 0;
  int64_t agent_updates_ = 0;
  int64_t last_checkpoint_step_ = 0;
  double last_episode_return_ = std::numeric_limits<double>::quiet_NaN();
  std::chrono::steady_clock::time_point start_time_;
};

}  // namespace tdrm

#endif  // TDRM_TRAIN_TRAINER_HPP_
