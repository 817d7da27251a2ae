#ifndef TDRM_ENV_EPISODE_HPP_
#define TDRM_ENV_EPISODE_HPP_

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "tdrm/core/common.hpp"
#include "tdrm/env/hidden_order.hpp"

namespace tdrm {

// One recorded episode. Slot 0 is the reset frame (null action, zero reward);
// slot t > 0 holds the frame observed after the t-th action.
struct Episode {
  uint64_t seed = 0;
  uint64_t config_hash = 0;
  int frame_size = 0;                // square frame edge in pixels
  std::vector<uint8_t> frames;       // T * frame_size^2 * 3
  std::vector<int> actions;          // T entries, actions[0] == kActionNull
  std::vector<float> rewards;        // T entries, rewards[0] == 0
  std::vector<float> continues;      // 1 everywhere except a final done slot
  int full_collections = 0;          // times the whole order was completed

  int length() const { return static_cast<int>(actions.size()); }

  float total_return() const {
    float s = 0.0f;
    for (float r : rewards) s += r;
    return s;
  }

  void validate() const {
    TDRM_CHECK(!actions.empty(), "empty episode");
    TDRM_CHECK(actions.size() == rewards.size() && actions.size() == continues.size(),
               "episode stream lengths differ");
    TDRM_CHECK(frames.size() == actions.size() * static_cast<size_t>(frame_size) * frame_size * 3,
               "frame buffer does not match episode length");
    TDRM_CHECK(actions[0] == kActionNull && rewards[0] == 0.0f,
               "slot 0 must be the reset frame");
  }
};

// True iff the full hidden order was completed at least once.
inline bool episode_success(const Episode& ep) { return ep.full_collections > 0; }

inline void append_slot(Episode* ep, const Observation& obs, int action, float reward,
                        bool done) {
  ep->frames.insert(ep->frames.end(), obs.rgb.begin(), obs.rgb.end());
  ep->actions.push_back(action);
  ep->rewards.push_back(reward);
  ep->continues.push_back(done ? 0.0f : 1.0f);
}

// Runs a fixed action list from a fresh reset. Stops early if the episode
// finishes first.
inline Episode rollout_actions(HiddenOrderEnv* env, uint64_t seed,
                               const std::vector<int>& actions) {
  Episode ep;
  ep.seed = seed;
  ep.config_hash = env->config().hash();
  ep.frame_size = env->config().render_size;
  Observation obs = env->reset(seed);
  append_slot(&ep, obs, kActionNull, 0.0f, false);
  for (int a : actions) {
    StepResult res = env->step(a);
    append_slot(&ep, res.obs, a, res.reward, res.done);
    if (res.info.full_reset) ep.full_collections += 1;
    if (res.done) break;
  }
  return ep;
}

// Compact on-disk form: the seed plus the action/reward stream. Frames are
// regenerated by replaying the actions through a fresh environment.
struct EpisodeRecord {
  uint64_t config_hash = 0;
  uint64_t seed = 0;
  std::vector<int> actions;    // actions[0] == kActionNull
  std::vector<float> rewards;
  std::vector<uint8_t> dones;
};

namespace detail {

inline void write_bytes(std::FILE* f, const void* p, size_t n) {
  TDRM_CHECK(std::fwrite(p, 1, n, f) == n, "short write to episode record");
}

inline void read_bytes(std::FILE* f, void* p, size_t n) {
  TDRM_CHECK(std::fread(p, 1, n, f) == n, "short read from episode record");
}

}  // namespace detail

inline void write_episode_record(const std::string& path, const Episode& ep) {
  ep.validate();
  std::FILE* f = std::fopen(path.c_str(), "wb");
  TDRM_CHECK(f != nullptr, "cannot open episode record for writing: " + path);
  const char magic[4] = {'T', 'D', 'E', 'P'};
  uint32_t version = 1;
  uint32_t n = static_cast<uint32_t>(ep.actions.size());
  detail::write_bytes(f, magic, 4);
  detail::write_bytes(f, &version, 4);
  detail::write_bytes(f, &ep.config_hash, 8);
  detail::write_bytes(f, &ep.seed, 8);
  detail::write_bytes(f, &n, 4);
  for (uint32_t t = 0; t < n; ++t) {
    uint8_t a = ep.actions[t] == kActionNull ? 255 : static_cast<uint8_t>(ep.actions[t]);
    float r = ep.rewards[t];
    uint8_t d = ep.continues[t] == 0.0f ? 1 : 0;
    detail::write_bytes(f, &a, 1);
    detail::write_bytes(f, &r, 4);
    detail::write_bytes(f, &d, 1);
  }
  std::fclose(f);
}

inline EpisodeRecord read_episode_record(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  TDRM_CHECK(f != nullptr, "cannot open episode record: " + path);
  char magic[4];
  uint32_t version = 0, n = 0;
  EpisodeRecord rec;
  detail::read_bytes(f, magic, 4);
  TDRM_CHECK(std::memcmp(magic, "TDEP", 4) == 0, "not an episode record: " + path);
  detail::read_bytes(f, &version, 4);
  TDRM_CHECK(version == 1, "unsupported episode record version");
  detail::read_bytes(f, &rec.config_hash, 8);
  detail::read_bytes(f, &rec.seed, 8);
  detail::read_bytes(f, &n, 4);
  rec.actions.resize(n);
  rec.rewards.resize(n);
  rec.dones.resize(n);
  for (uint32_t t = 0; t < n; ++t) {
    uint8_t a = 0, d = 0;
    float r = 0.0f;
    detail::read_bytes(f, &a, 1);
    detail::read_bytes(f, &r, 4);
    detail::read_bytes(f, &d, 1);
    rec.actions[t] = a == 255 ? kActionNull : static_cast<int>(a);
    rec.rewards[t] = r;
    rec.dones[t] = d;
  }
  std::fclose(f);
  return rec;
}

// Rebuilds the full episode (frames included) by replaying the recorded
// actions. Rewards must reproduce bitwise or the record does not belong to
// this environment build.
inline Episode replay_episode_record(HiddenOrderEnv* env, const EpisodeRecord& rec) {
  TDRM_CHECK(rec.config_hash == env->config().hash(),
             "episode record was made with a different environment config");
  TDRM_CHECK(!rec.actions.empty() && rec.actions[0] == kActionNull,
             "episode record must start with the reset slot");
  Episode ep;
  ep.seed = rec.seed;
  ep.config_hash = rec.config_hash;
  ep.frame_size = env->config().render_size;
  Observation obs = env->reset(rec.seed);
  append_slot(&ep, obs, kActionNull, 0.0f, false);
  for (size_t t = 1; t < rec.actions.size(); ++t) {
    StepResult res = env->step(rec.actions[t]);
    TDRM_CHECK(res.reward == rec.rewards[t], "replayed reward diverged from the record");
    append_slot(&ep, res.obs, rec.actions[t], res.reward, res.done);
    if (res.info.full_reset) ep.full_collections += 1;
  }
  return ep;
}

}  // namespace tdrm

#endif  // TDRM_ENV_EPISODE_HPP_
