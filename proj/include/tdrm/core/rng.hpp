#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "tdrm/core/common.hpp"

namespace tdrm {

// Counter-based pseudo-random stream (splitmix64 finalizer over key + counter).
// One root seed fans out to named child streams; deriving a child does not
// advance the parent, so adding a consumer never shifts another module's draws.
// Stream state is two u64 words and serializes trivially.
class RngStream {
 public:
  RngStream() : RngStream(0) {}
  explicit RngStream(uint64_t seed) : key_(finalize(seed ^ 0x6a09e667f3bcc908ull)) {}

  RngStream child(std::string_view name) const {
    RngStream c;
    c.key_ = finalize(key_ ^ finalize(fnv1a(name)));
    c.counter_ = 0;
    return c;
  }

  RngStream child(uint64_t index) const {
    RngStream c;
    c.key_ = finalize(key_ ^ finalize(index * 0x9e3779b97f4a7c15ull + 0x3c6ef372fe94f82bull));
    c.counter_ = 0;
    return c;
  }

  uint64_t next_u64() { return finalize(key_ + (++counter_) * 0x9e3779b97f4a7c15ull); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; consumes two draws, no cached spare.
  double normal() {
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform integer in [0, n).
  int64_t uniform_int(int64_t n) {
    TDRM_CHECK(n > 0, "uniform_int needs n > 0");
    return static_cast<int64_t>(uniform() * static_cast<double>(n));
  }

  // Index draw from (possibly unnormalized) nonnegative weights; one uniform.
  template <typename S>
  int64_t categorical(const S* w, int64_t n) {
    TDRM_CHECK(n > 0, "categorical needs n > 0");
    double total = 0;
    for (int64_t i = 0; i < n; ++i) total += static_cast<double>(w[i]);
    TDRM_CHECK_FINITE(std::isfinite(total) && total > 0, "categorical weights must sum > 0");
    double u = uniform() * total;
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) {
      acc += static_cast<double>(w[i]);
      if (u < acc) return i;
    }
    return n - 1;
  }

  struct State {
    uint64_t key;
    uint64_t counter;
  };
  State state() const { return {key_, counter_}; }
  void set_state(State s) {
    key_ = s.key;
    counter_ = s.counter;
  }

 private:
  static uint64_t finalize(uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  static uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
      h ^= static_cast<uint8_t>(c);
      h *= 0x100000001b3ull;
    }
    return h;
  }

  uint64_t key_ = 0;
  uint64_t counter_ = 0;
};

}  // namespace tdrm
