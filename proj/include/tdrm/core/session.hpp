#pragma once

#include <cstddef>
#include <vector>

#include "tdrm/core/common.hpp"

namespace tdrm {

// Record/replay support for finite-difference checks of objectives that
// contain stop-gradient or straight-through sampling sites.
//
// A naive central difference through such an objective is ill-posed: discrete
// samples can flip under perturbation, and a stop-gradient site would expose
// the full (unrouted) derivative. During the base evaluation each site records
// a per-site constant (the sampled one-hot minus the base probabilities for
// straight-through sites, the raw value for stop-gradient sites). Replay
// evaluations substitute the recorded constants, so the objective becomes a
// smooth function of the parameters whose exact derivative is the routed
// gradient the reverse pass computes. Sites are matched by visit order, which
// the evaluation closure must keep deterministic.
template <typename S>
class GradCheckSession {
 public:
  enum class Mode { Record, Replay };

  static GradCheckSession** current_slot() {
    thread_local GradCheckSession* cur = nullptr;
    return &cur;
  }
  static GradCheckSession* current() { return *current_slot(); }

  // Installs/uninstalls this session for the current thread.
  struct Scope {
    explicit Scope(GradCheckSession* s) { *current_slot() = s; }
    ~Scope() { *current_slot() = nullptr; }
  };

  void begin_record() {
    mode_ = Mode::Record;
    sites_.clear();
    cursor_ = 0;
  }

  void begin_replay() {
    mode_ = Mode::Replay;
    cursor_ = 0;
  }

  bool recording() const { return mode_ == Mode::Record; }
  bool replaying() const { return mode_ == Mode::Replay; }

  void push(std::vector<S> v) { sites_.push_back(std::move(v)); }

  const std::vector<S>& fetch() {
    TDRM_CHECK(cursor_ < sites_.size(),
               "gradcheck replay visited more stochastic sites than were recorded");
    return sites_[cursor_++];
  }

  size_t site_count() const { return sites_.size(); }

 private:
  Mode mode_ = Mode::Record;
  std::vector<std::vector<S>> sites_;
  size_t cursor_ = 0;
};

}  // namespace tdrm
