#pragma once

#include <cmath>
#include <map>

#include "tdrm/core/params.hpp"

namespace tdrm {

template <typename S>
struct AdamWConfig {
  S lr = S(1e-3);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
  S weight_decay = S(0);
  S clip_norm = S(0);  // 0 disables clipping
};

// Adam with decoupled weight decay over the parameters under one name prefix.
// Only trainable entries whose gradient carries the given backward epoch are
// touched; everything else keeps its bits.
template <typename S>
class AdamW {
 public:
  struct StepStats {
    S grad_norm = S(0);       // before clipping
    S post_clip_norm = S(0);  // after clipping
    bool applied = false;
  };

  AdamW(AdamWConfig<S> cfg, std::string prefix) : cfg_(cfg), prefix_(std::move(prefix)) {}

  const AdamWConfig<S>& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }

  StepStats step(ParamSet<S>& params, int64_t epoch) {
    StepStats stats;
    std::vector<typename ParamSet<S>::Entry*> group;
    double norm_sq = 0;
    for (auto& e : params.entries()) {
      if (e.name.rfind(prefix_, 0) != 0 || !e.trainable) continue;
      if (!e.tensor.grad_fresh(epoch)) continue;
      for (S g : e.tensor.grad()) norm_sq += static_cast<double>(g) * static_cast<double>(g);
      group.push_back(&e);
    }
    if (group.empty()) return stats;
    TDRM_CHECK_FINITE(std::isfinite(norm_sq), "gradient norm non-finite in group " + prefix_);
    double norm = std::sqrt(norm_sq);
    double scale = 1.0;
    if (cfg_.clip_norm > S(0) && norm > static_cast<double>(cfg_.clip_norm))
      scale = static_cast<double>(cfg_.clip_norm) / norm;
    stats.grad_norm = static_cast<S>(norm);
    stats.post_clip_norm = static_cast<S>(norm * scale);
    stats.applied = true;

    ++t_;
    S bc1 = S(1) - std::pow(cfg_.beta1, static_cast<S>(t_));
    S bc2 = S(1) - std::pow(cfg_.beta2, static_cast<S>(t_));
    for (auto* e : group) {
      auto& slot = state_[e->name];
      auto& m = slot.first;
      auto& v = slot.second;
      if (m.empty()) {
        m.assign(static_cast<size_t>(e->tensor.size()), S(0));
        v.assign(static_cast<size_t>(e->tensor.size()), S(0));
      }
      auto& w = e->tensor.raw_value();
      const auto& grad = e->tensor.grad();
      for (size_t i = 0; i < w.size(); ++i) {
        S g = static_cast<S>(static_cast<double>(grad[i]) * scale);
        m[i] = cfg_.beta1 * m[i] + (S(1) - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (S(1) - cfg_.beta2) * g * g;
        S mh = m[i] / bc1;
        S vh = v[i] / bc2;
        w[i] -= cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * w[i]);
      }
    }
    return stats;
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }

  // name -> (first moment, second moment); exposed for checkpointing.
  std::map<std::string, std::pair<std::vector<S>, std::vector<S>>>& state() { return state_; }

 private:
  AdamWConfig<S> cfg_;
  std::string prefix_;
  int64_t t_ = 0;
  std::map<std::string, std::pair<std::vector<S>, std::vector<S>>> state_;
};

}  // namespace tdrm
