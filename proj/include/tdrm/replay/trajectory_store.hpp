#ifndef TDRM_REPLAY_TRAJECTORY_STORE_HPP_
#define TDRM_REPLAY_TRAJECTORY_STORE_HPP_

#include <cstdint>
#include <deque>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "tdrm/core/common.hpp"
#include "tdrm/core/rng.hpp"
#include "tdrm/env/episode.hpp"
#include "tdrm/wm/types.hpp"

namespace tdrm {

struct ReplayConfig {
  int64_t capacity_steps = 200000;
  double alpha = 0.5;   // chance of drawing from the positive-return subset
  int t_max = 100;      // batch rows are padded to this many slots
  std::string spill_dir;  // when set, evicted episodes are written here

  void validate() const {
    TDRM_CHECK(capacity_steps >= t_max, "capacity below one episode");
    TDRM_CHECK(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0,1]");
    TDRM_CHECK(t_max >= 1, "t_max must be positive");
  }
};

struct BufferStats {
  int64_t episodes = 0;
  int64_t steps = 0;
  double nonzero_fraction = 0.0;  // by episode count
  double mean_return = 0.0;
};

// Episodic replay with return-proportional prioritized sampling. Each batch
// slot independently draws from the positive-return subset with probability
// alpha (weights proportional to episode return) and uniformly over all
// episodes otherwise. With no positive-return episode stored the prioritized
// branch falls back to uniform. Eviction is oldest-first by episode.
class TrajectoryStore {
 public:
  explicit TrajectoryStore(ReplayConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const ReplayConfig& config() const { return cfg_; }

  void add_episode(Episode ep) {
    ep.validate();
    TDRM_CHECK(ep.length() <= cfg_.t_max, "episode longer than the sampling window");
    const float ret = ep.total_return();
    TDRM_CHECK(ret >= 0.0f, "return-proportional priorities need non-negative returns");
    std::lock_guard<std::mutex> lock(mu_);
    if (!episodes_.empty()) {
      TDRM_CHECK(ep.frame_size == episodes_.front().frame_size,
                 "mixed frame sizes in one store");
    }
    episodes_.push_back(std::move(ep));
    returns_.push_back(ret);
    total_steps_ += episodes_.back().length();
    while (total_steps_ > cfg_.capacity_steps && episodes_.size() > 1) {
      if (!cfg_.spill_dir.empty()) {
        write_episode_record(
            cfg_.spill_dir + "/evicted_" + std::to_string(evicted_) + ".tdep",
            episodes_.front());
      }
      total_steps_ -= episodes_.front().length();
      episodes_.pop_front();
      returns_.pop_front();
      evicted_ += 1;
    }
  }

  size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return episodes_.size();
  }

  int64_t evicted() const {
    std::lock_guard<std::mutex> lock(mu_);
    return evicted_;
  }

  const Episode& episode(size_t i) const {
    std::lock_guard<std::mutex> lock(mu_);
    TDRM_CHECK(i < episodes_.size(), "episode index out of range");
    return episodes_[i];
  }

  BufferStats stats() const {
    std::lock_guard<std::mutex> lock(mu_);
    BufferStats st;
    st.episodes = static_cast<int64_t>(episodes_.size());
    st.steps = total_steps_;
    if (episodes_.empty()) return st;
    int64_t nonzero = 0;
    double sum = 0.0;
    for (float r : returns_) {
      nonzero += r > 0.0f;
      sum += r;
    }
    st.nonzero_fraction = static_cast<double>(nonzero) / static_cast<double>(st.episodes);
    st.mean_return = sum / static_cast<double>(st.episodes);
    return st;
  }

  // Normalized priority of each stored episode within the positive subset;
  // zero for zero-return episodes.
  std::vector<double> nonzero_probs() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<double> probs(returns_.size(), 0.0);
    double total = 0.0;
    for (float r : returns_) total += r > 0.0f ? r : 0.0f;
    if (total <= 0.0) return probs;
    for (size_t i = 0; i < returns_.size(); ++i) {
      probs[i] = returns_[i] > 0.0f ? returns_[i] / total : 0.0;
    }
    return probs;
  }

  std::vector<size_t> sample_indices(int64_t b, RngStream* rng) const {
    std::lock_guard<std::mutex> lock(mu_);
    TDRM_CHECK(!episodes_.empty(), "sampling from an empty store");
    TDRM_CHECK(b >= 1, "batch size must be positive");
    std::vector<size_t> nonzero;
    std::vector<double> weights;
    for (size_t i = 0; i < returns_.size(); ++i) {
      if (returns_[i] > 0.0f) {
        nonzero.push_back(i);
        weights.push_back(static_cast<double>(returns_[i]));
      }
    }
    std::vector<size_t> out;
    out.reserve(static_cast<size_t>(b));
    for (int64_t k = 0; k < b; ++k) {
      const bool prioritized = rng->uniform() < cfg_.alpha && !nonzero.empty();
      if (prioritized) {
        int64_t j = rng->categorical(weights.data(), static_cast<int64_t>(weights.size()));
        out.push_back(nonzero[static_cast<size_t>(j)]);
      } else {
        out.push_back(static_cast<size_t>(
            rng->uniform_int(static_cast<int64_t>(episodes_.size()))));
      }
    }
    return out;
  }

  template <typename S>
  EpisodeBatch<S> sample_sequences(int64_t b, int n_actions, RngStream* rng) const {
    std::vector<size_t> idx = sample_indices(b, rng);
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<const Episode*> eps;
    eps.reserve(idx.size());
    for (size_t i : idx) eps.push_back(&episodes_[i]);
    return make_episode_batch<S>(eps, cfg_.t_max, n_actions);
  }

 private:
  ReplayConfig cfg_;
  mutable std::mutex mu_;
  std::deque<Episode> episodes_;
  std::deque<float> returns_;
  int64_t total_steps_ = 0;
  int64_t evicted_ = 0;
};

}  // namespace tdrm

#endif  // TDRM_REPLAY_TRAJECTORY_STORE_HPP_
