#ifndef TDRM_TRAIN_CONFIG_HPP_
#define TDRM_TRAIN_CONFIG_HPP_

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "tdrm/agent/actor_critic.hpp"
#include "tdrm/core/common.hpp"
#include "tdrm/env/hidden_order.hpp"
#include "tdrm/replay/trajectory_store.hpp"
#include "tdrm/wm/rssm.hpp"
#include "tdrm/wm/tssm.hpp"

namespace tdrm {

enum class ModelKind { kTssm, kRssm };

inline std::string model_kind_name(ModelKind k) {
  return k == ModelKind::kTssm ? "tssm" : "rssm";
}

struct OptimSettings {
  double lr_wm = 2e-4;
  double lr_actor = 4e-5;
  double lr_critic = 1e-4;
  double clip_norm = 100.0;
  double weight_decay = 1e-6;

  void validate() const {
    TDRM_CHECK(lr_wm > 0 && lr_actor > 0 && lr_critic > 0, "learning rates must be positive");
    TDRM_CHECK(clip_norm >= 0, "clip_norm must be non-negative");
    TDRM_CHECK(weight_decay >= 0, "weight_decay must be non-negative");
  }
};

struct Schedule {
  int64_t prefill_steps = 5000;     // random-policy env steps before training
  int64_t steps_per_cycle = 100;    // env steps collected per cycle
  int64_t wm_updates = 1;           // world-model updates per cycle
  int64_t agent_updates = 1;        // agent updates per cycle
  int64_t total_env_steps = 100000;
  int64_t batch_size = 16;
  int64_t checkpoint_every = 5000;  // env steps between periodic checkpoints
  bool imagine_to_end = true;       // horizon reaches the last episode slot

  void validate() const {
    TDRM_CHECK(prefill_steps >= 1 && steps_per_cycle >= 1 && total_env_steps >= 1,
               "step counts must be positive");
    TDRM_CHECK(wm_updates >= 0 && agent_updates >= 0, "negative update counts");
    TDRM_CHECK(batch_size >= 1, "batch_size must be positive");
    TDRM_CHECK(checkpoint_every >= 1, "checkpoint_every must be positive");
  }
};

// Everything one training run needs. `finalize()` propagates the shared
// geometry (frame size, episode length, action count, feature width) from the
// environment and the chosen model into the dependent configs, so those
// derived fields are not config keys.
struct RunConfig {
  ModelKind model_kind = ModelKind::kTssm;
  GridConfig env;
  TssmConfig tssm;
  RssmConfig rssm;
  AgentConfig agent;
  ReplayConfig replay;
  OptimSettings optim;
  Schedule schedule;
  uint64_t seed = 0;
  std::string logdir;

  void finalize() {
    tssm.image_size = env.render_size;
    tssm.t_max = env.max_steps;
    tssm.n_actions = kNumEnvActions;
    rssm.image_size = env.render_size;
    rssm.t_max = env.max_steps;
    rssm.n_actions = kNumEnvActions;
    replay.t_max = env.max_steps;
    agent.n_actions = kNumEnvActions;
    agent.feature_dim =
        model_kind == ModelKind::kTssm ? tssm.feature_dim() : rssm.feature_dim();
  }

  void validate() const {
    env.validate();
    if (model_kind == ModelKind::kTssm) {
      tssm.validate();
    } else {
      rssm.validate();
    }
    agent.validate();
    replay.validate();
    optim.validate();
    schedule.validate();
    TDRM_CHECK(schedule.prefill_steps >= env.max_steps - 1,
               "prefill must cover at least one full episode");
  }

  // Identity of the trainable architecture; checkpoints refuse to load across
  // a mismatch. Covers the environment geometry and every width that shapes a
  // parameter tensor, not the loss scales or schedule.
  uint64_t arch_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](uint64_t v) {
      h ^= v;
      h *= 0x100000001b3ull;
    };
    mix(model_kind == ModelKind::kTssm ? 1 : 2);
    mix(env.hash());
    if (model_kind == ModelKind::kTssm) {
      mix(static_cast<uint64_t>(tssm.n_layers));
      mix(static_cast<uint64_t>(tssm.n_heads));
      mix(static_cast<uint64_t>(tssm.d_model));
      mix(static_cast<uint64_t>(tssm.d_ff));
      mix(static_cast<uint64_t>(tssm.gating));
      mix(static_cast<uint64_t>(tssm.positional));
      mix(tssm.concat_layer_outputs ? 1 : 0);
      mix(static_cast<uint64_t>(tssm.latent_groups));
      mix(static_cast<uint64_t>(tssm.latent_classes));
      mix(static_cast<uint64_t>(tssm.cnn_depth));
      mix(static_cast<uint64_t>(tssm.embed_dim));
      mix(static_cast<uint64_t>(tssm.head_hidden));
      mix(static_cast<uint64_t>(tssm.head_depth));
      mix(static_cast<uint64_t>(tssm.latent_mlp_depth));
    } else {
      mix(static_cast<uint64_t>(rssm.d_hidden));
      mix(static_cast<uint64_t>(rssm.latent_groups));
      mix(static_cast<uint64_t>(rssm.latent_classes));
      mix(static_cast<uint64_t>(rssm.cnn_depth));
      mix(static_cast<uint64_t>(rssm.embed_dim));
      mix(static_cast<uint64_t>(rssm.head_hidden));
      mix(static_cast<uint64_t>(rssm.head_depth));
      mix(static_cast<uint64_t>(rssm.latent_mlp_depth));
    }
    mix(static_cast<uint64_t>(agent.hidden));
    mix(static_cast<uint64_t>(agent.depth));
    return h;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline int64_t parse_i64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t out = std::stoll(v, &pos);
    TDRM_CHECK(pos == v.size(), "trailing characters");
    return out;
  } catch (const ContractError&) {
    throw;
  } catch (...) {
    throw ContractError("config key " + key + ": not an integer: " + v);
  }
}

inline uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    uint64_t out = std::stoull(v, &pos);
    TDRM_CHECK(pos == v.size(), "trailing characters");
    return out;
  } catch (const ContractError&) {
    throw;
  } catch (...) {
    throw ContractError("config key " + key + ": not an unsigned integer: " + v);
  }
}

inline double parse_f64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    TDRM_CHECK(pos == v.size(), "trailing characters");
    return out;
  } catch (const ContractError&) {
    throw;
  } catch (...) {
    throw ContractError("config key " + key + ": not a number: " + v);
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ContractError("config key " + key + ": expected a boolean, got: " + v);
}

}  // namespace detail

// Applies one key=value pair. Unknown keys are rejected by name.
inline void apply_config_kv(RunConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_f64;
  using detail::parse_i64;
  using detail::parse_u64;
  auto i = [&] { return parse_i64(key, value); };
  auto f = [&] { return parse_f64(key, value); };
  auto b = [&] { return parse_bool(key, value); };

  if (key == "model_kind") {
    if (value == "tssm") {
      c.model_kind = ModelKind::kTssm;
    } else if (value == "rssm") {
      c.model_kind = ModelKind::kRssm;
    } else {
      throw ContractError("config key model_kind: expected tssm or rssm, got: " + value);
    }
  } else if (key == "seed") {
    c.seed = parse_u64(key, value);
  } else if (key == "logdir") {
    c.logdir = value;
  } else if (key == "env.grid_size") {
    c.env.grid_size = static_cast<int>(i());
  } else if (key == "env.n_balls") {
    c.env.n_balls = static_cast<int>(i());
  } else if (key == "env.min_pair_distance") {
    c.env.min_pair_distance = static_cast<int>(i());
  } else if (key == "env.max_steps") {
    c.env.max_steps = static_cast<int>(i());
  } else if (key == "env.view_cells") {
    c.env.view_cells = static_cast<int>(i());
  } else if (key == "env.render_size") {
    c.env.render_size = static_cast<int>(i());
  } else if (key == "env.sprite_px") {
    c.env.sprite_px = static_cast<int>(i());
  } else if (key == "env.strict_visit_penalty") {
    c.env.strict_visit_penalty = b();
  } else if (key == "tssm.n_layers") {
    c.tssm.n_layers = i();
  } else if (key == "tssm.n_heads") {
    c.tssm.n_heads = i();
  } else if (key == "tssm.d_model") {
    c.tssm.d_model = i();
  } else if (key == "tssm.d_ff") {
    c.tssm.d_ff = i();
  } else if (key == "tssm.gating") {
    if (value == "none") {
      c.tssm.gating = GatingMode::kNone;
    } else if (value == "identity_map_reordering") {
      c.tssm.gating = GatingMode::kIdentityMapReordering;
    } else if (value == "gru") {
      c.tssm.gating = GatingMode::kGruGate;
    } else {
      throw ContractError("config key tssm.gating: unknown mode: " + value);
    }
  } else if (key == "tssm.positional") {
    if (value == "learned_absolute") {
      c.tssm.positional = PositionalMode::kLearnedAbsolute;
    } else if (value == "relative") {
      c.tssm.positional = PositionalMode::kRelative;
    } else {
      throw ContractError("config key tssm.positional: unknown mode: " + value);
    }
  } else if (key == "tssm.concat_layer_outputs") {
    c.tssm.concat_layer_outputs = b();
  } else if (key == "tssm.latent_groups") {
    c.tssm.latent_groups = i();
  } else if (key == "tssm.latent_classes") {
    c.tssm.latent_classes = i();
  } else if (key == "tssm.cnn_depth") {
    c.tssm.cnn_depth = i();
  } else if (key == "tssm.embed_dim") {
    c.tssm.embed_dim = i();
  } else if (key == "tssm.head_hidden") {
    c.tssm.head_hidden = i();
  } else if (key == "tssm.head_depth") {
    c.tssm.head_depth = i();
  } else if (key == "tssm.latent_mlp_depth") {
    c.tssm.latent_mlp_depth = i();
  } else if (key == "tssm.eta_x") {
    c.tssm.eta_x = f();
  } else if (key == "tssm.eta_r") {
    c.tssm.eta_r = f();
  } else if (key == "tssm.eta_g") {
    c.tssm.eta_g = f();
  } else if (key == "tssm.kl_balance") {
    c.tssm.kl_balance = f();
  } else if (key == "tssm.kl_free_nats") {
    c.tssm.kl_free_nats = f();
  } else if (key == "rssm.d_hidden") {
    c.rssm.d_hidden = i();
  } else if (key == "rssm.latent_groups") {
    c.rssm.latent_groups = i();
  } else if (key == "rssm.latent_classes") {
    c.rssm.latent_classes = i();
  } else if (key == "rssm.cnn_depth") {
    c.rssm.cnn_depth = i();
  } else if (key == "rssm.embed_dim") {
    c.rssm.embed_dim = i();
  } else if (key == "rssm.head_hidden") {
    c.rssm.head_hidden = i();
  } else if (key == "rssm.head_depth") {
    c.rssm.head_depth = i();
  } else if (key == "rssm.latent_mlp_depth") {
    c.rssm.latent_mlp_depth = i();
  } else if (key == "rssm.eta_x") {
    c.rssm.eta_x = f();
  } else if (key == "rssm.eta_r") {
    c.rssm.eta_r = f();
  } else if (key == "rssm.eta_g") {
    c.rssm.eta_g = f();
  } else if (key == "rssm.kl_balance") {
    c.rssm.kl_balance = f();
  } else if (key == "rssm.kl_free_nats") {
    c.rssm.kl_free_nats = f();
  } else if (key == "agent.horizon") {
    c.agent.horizon = i();
  } else if (key == "agent.gamma") {
    c.agent.gamma = f();
  } else if (key == "agent.lambda") {
    c.agent.lambda = f();
  } else if (key == "agent.rho") {
    c.agent.rho = f();
  } else if (key == "agent.eta_entropy") {
    c.agent.eta_entropy = f();
  } else if (key == "agent.explore_eps") {
    c.agent.explore_eps = f();
  } else if (key == "agent.explore_eps_decay_steps") {
    c.agent.explore_eps_decay_steps = i();
  } else if (key == "agent.k_starts") {
    c.agent.k_starts = i();
  } else if (key == "agent.slow_critic_period") {
    c.agent.slow_critic_period = i();
  } else if (key == "agent.discount_clamp") {
    c.agent.discount_clamp = f();
  } else if (key == "agent.hidden") {
    c.agent.hidden = i();
  } else if (key == "agent.depth") {
    c.agent.depth = i();
  } else if (key == "replay.capacity_steps") {
    c.replay.capacity_steps = i();
  } else if (key == "replay.alpha") {
    c.replay.alpha = f();
  } else if (key == "opt.lr_wm") {
    c.optim.lr_wm = f();
  } else if (key == "opt.lr_actor") {
    c.optim.lr_actor = f();
  } else if (key == "opt.lr_critic") {
    c.optim.lr_critic = f();
  } else if (key == "opt.clip_norm") {
    c.optim.clip_norm = f();
  } else if (key == "opt.weight_decay") {
    c.optim.weight_decay = f();
  } else if (key == "schedule.prefill_steps") {
    c.schedule.prefill_steps = i();
  } else if (key == "schedule.steps_per_cycle") {
    c.schedule.steps_per_cycle = i();
  } else if (key == "schedule.wm_updates") {
    c.schedule.wm_updates = i();
  } else if (key == "schedule.agent_updates") {
    c.schedule.agent_updates = i();
  } else if (key == "schedule.total_env_steps") {
    c.schedule.total_env_steps = i();
  } else if (key == "schedule.batch_size") {
    c.schedule.batch_size = i();
  } else if (key == "schedule.checkpoint_every") {
    c.schedule.checkpoint_every = i();
  } else if (key == "schedule.imagine_to_end") {
    c.schedule.imagine_to_end = b();
  } else {
    throw ContractError("unknown config key: " + key);
  }
}

// Parses flat key=value text. Blank lines and lines starting with '#' are
// skipped; inline comments are not supported.
inline void parse_config_text(RunConfig& c, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    TDRM_CHECK(eq != std::string::npos,
               "config line " + std::to_string(lineno) + " is not key=value: " + t);
    apply_config_kv(c, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
}

inline RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  TDRM_CHECK(in.good(), "cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  RunConfig c;
  parse_config_text(c, buf.str());
  return c;
}

// Emits every known key so parse(serialize(c)) reproduces c. Written into the
// logdir so a finished run documents its exact settings.
inline std::string config_to_text(const RunConfig& c) {
  std::ostringstream o;
  o.precision(17);
  auto kv = [&o](const std::string& k, const auto& v) { o << k << " = " << v << "\n"; };
  kv("model_kind", model_kind_name(c.model_kind));
  kv("seed", c.seed);
  if (!c.logdir.empty()) kv("logdir", c.logdir);
  kv("env.grid_size", c.env.grid_size);
  kv("env.n_balls", c.env.n_balls);
  kv("env.min_pair_distance", c.env.min_pair_distance);
  kv("env.max_steps", c.env.max_steps);
  kv("env.view_cells", c.env.view_cells);
  kv("env.render_size", c.env.render_size);
  kv("env.sprite_px", c.env.sprite_px);
  kv("env.strict_visit_penalty", c.env.strict_visit_penalty ? 1 : 0);
  kv("tssm.n_layers", c.tssm.n_layers);
  kv("tssm.n_heads", c.tssm.n_heads);
  kv("tssm.d_model", c.tssm.d_model);
  kv("tssm.d_ff", c.tssm.d_ff);
  kv("tssm.gating", c.tssm.gating == GatingMode::kNone ? "none"
                    : c.tssm.gating == GatingMode::kIdentityMapReordering
                        ? "identity_map_reordering"
                        : "gru");
  kv("tssm.positional",
     c.tssm.positional == PositionalMode::kLearnedAbsolute ? "learned_absolute" : "relative");
  kv("tssm.concat_layer_outputs", c.tssm.concat_layer_outputs ? 1 : 0);
  kv("tssm.latent_groups", c.tssm.latent_groups);
  kv("tssm.latent_classes", c.tssm.latent_classes);
  kv("tssm.cnn_depth", c.tssm.cnn_depth);
  kv("tssm.embed_dim", c.tssm.embed_dim);
  kv("tssm.head_hidden", c.tssm.head_hidden);
  kv("tssm.head_depth", c.tssm.head_depth);
  kv("tssm.latent_mlp_depth", c.tssm.latent_mlp_depth);
  kv("tssm.eta_x", c.tssm.eta_x);
  kv("tssm.eta_r", c.tssm.eta_r);
  kv("tssm.eta_g", c.tssm.eta_g);
  kv("tssm.kl_balance", c.tssm.kl_balance);
  kv("tssm.kl_free_nats", c.tssm.kl_free_nats);
  kv("rssm.d_hidden", c.rssm.d_hidden);
  kv("rssm.latent_groups", c.rssm.latent_groups);
  kv("rssm.latent_classes", c.rssm.latent_classes);
  kv("rssm.cnn_depth", c.rssm.cnn_depth);
  kv("rssm.embed_dim", c.rssm.embed_dim);
  kv("rssm.head_hidden", c.rssm.head_hidden);
  kv("rssm.head_depth", c.rssm.head_depth);
  kv("rssm.latent_mlp_depth", c.rssm.latent_mlp_depth);
  kv("rssm.eta_x", c.rssm.eta_x);
  kv("rssm.eta_r", c.rssm.eta_r);
  kv("rssm.eta_g", c.rssm.eta_g);
  kv("rssm.kl_balance", c.rssm.kl_balance);
  kv("rssm.kl_free_nats", c.rssm.kl_free_nats);
  kv("agent.horizon", c.agent.horizon);
  kv("agent.gamma", c.agent.gamma);
  kv("agent.lambda", c.agent.lambda);
  kv("agent.rho", c.agent.rho);
  kv("agent.eta_entropy", c.agent.eta_entropy);
  kv("agent.explore_eps", c.agent.explore_eps);
  kv("agent.explore_eps_decay_steps", c.agent.explore_eps_decay_steps);
  kv("agent.k_starts", c.agent.k_starts);
  kv("agent.slow_critic_period", c.agent.slow_critic_period);
  kv("agent.discount_clamp", c.agent.discount_clamp);
  kv("agent.hidden", c.agent.hidden);
  kv("agent.depth", c.agent.depth);
  kv("replay.capacity_steps", c.replay.capacity_steps);
  kv("replay.alpha", c.replay.alpha);
  kv("opt.lr_wm", c.optim.lr_wm);
  kv("opt.lr_actor", c.optim.lr_actor);
  kv("opt.lr_critic", c.optim.lr_critic);
  kv("opt.clip_norm", c.optim.clip_norm);
  kv("opt.weight_decay", c.optim.weight_decay);
  kv("schedule.prefill_steps", c.schedule.prefill_steps);
  kv("schedule.steps_per_cycle", c.schedule.steps_per_cycle);
  kv("schedule.wm_updates", c.schedule.wm_updates);
  kv("schedule.agent_updates", c.schedule.agent_updates);
  kv("schedule.total_env_steps", c.schedule.total_env_steps);
  kv("schedule.batch_size", c.schedule.batch_size);
  kv("schedule.checkpoint_every", c.schedule.checkpoint_every);
  kv("schedule.imagine_to_end", c.schedule.imagine_to_end ? 1 : 0);
  return o.str();
}

}  // namespace tdrm

#endif  // TDRM_TRAIN_CONFIG_HPP_
