#ifndef TDRM_ENV_HIDDEN_ORDER_HPP_
#define TDRM_ENV_HIDDEN_ORDER_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tdrm/core/common.hpp"
#include "tdrm/core/rng.hpp"

namespace tdrm {

// Gridworld where balls must be collected in a hidden random order. Entering
// the next ball in the order pays +3 the first time in a reward cycle;
// entering any other ball silently restores the map while the agent, the
// order, and the already-paid set stay as they are. Completing the whole
// order starts a fresh reward cycle.

enum class Heading : int { kNorth = 0, kEast = 1, kSouth = 2, kWest = 3 };

enum EnvAction : int {
  kActionNull = -1,  // reset frame only, never passed to step()
  kActionTurnLeft = 0,
  kActionTurnRight = 1,
  kActionForward = 2,
};
inline constexpr int kNumEnvActions = 3;

struct Rgb {
  uint8_t r, g, b;
  bool operator==(const Rgb& o) const { return r == o.r && g == o.g && b == o.b; }
};

inline constexpr Rgb kFloorColor{192, 192, 192};
inline constexpr Rgb kWallColor{60, 60, 60};
inline constexpr Rgb kAgentColor{255, 255, 255};
inline constexpr std::array<Rgb, 6> kBallPalette{{
    {255, 0, 0}, {0, 255, 0}, {0, 0, 255}, {255, 255, 0}, {255, 0, 255}, {0, 255, 255}}};

struct GridConfig {
  int grid_size = 8;
  int n_balls = 4;
  int min_pair_distance = 2;  // Manhattan, between ball cells
  int max_steps = 100;        // observation slots per episode, incl. the reset frame
  int view_cells = 5;         // odd window width, agent on the near edge
  int render_size = 64;       // square output in pixels
  int sprite_px = 0;          // 0 derives a size that fits every cell
  bool strict_visit_penalty = false;  // pay once per ball per cycle even across resets

  int ball_sprite_px() const {
    if (sprite_px > 0) return sprite_px;
    int p = static_cast<int>(std::lround(0.6 * render_size / view_cells));
    return std::max(1, p);
  }
  int min_cell_px() const { return render_size / view_cells; }

  void validate() const {
    TDRM_CHECK(grid_size >= 2, "grid_size must be at least 2");
    TDRM_CHECK(n_balls >= 1 && n_balls <= static_cast<int>(kBallPalette.size()),
               "n_balls must fit the color palette");
    TDRM_CHECK(n_balls <= grid_size * grid_size, "more balls than cells");
    TDRM_CHECK(min_pair_distance >= 0, "min_pair_distance must be non-negative");
    TDRM_CHECK(max_steps >= 2, "max_steps must allow at least one action");
    TDRM_CHECK(view_cells >= 1 && view_cells % 2 == 1, "view_cells must be odd");
    TDRM_CHECK(render_size >= view_cells, "render_size must give each cell a pixel");
    TDRM_CHECK(ball_sprite_px() <= min_cell_px(), "ball sprite larger than a cell");
  }

  uint64_t hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](uint64_t v) {
      h ^= v;
      h *= 0x100000001b3ull;
    };
    mix(static_cast<uint64_t>(grid_size));
    mix(static_cast<uint64_t>(n_balls));
    mix(static_cast<uint64_t>(min_pair_distance));
    mix(static_cast<uint64_t>(max_steps));
    mix(static_cast<uint64_t>(view_cells));
    mix(static_cast<uint64_t>(render_size));
    mix(static_cast<uint64_t>(ball_sprite_px()));
    mix(strict_visit_penalty ? 1u : 0u);
    return h;
  }
};

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell& o) const { return row == o.row && col == o.col; }
};

inline int manhattan(const Cell& a, const Cell& b) {
  return std::abs(a.row - b.row) + std::abs(a.col - b.col);
}

struct EnvState {
  Cell agent_pos;
  Heading agent_dir = Heading::kNorth;
  std::vector<Cell> ball_home;      // fixed per episode
  std::vector<uint8_t> ball_present;
  std::vector<int> hidden_order;    // permutation of ball indices
  int progress = 0;                 // index into hidden_order of the next ball
  std::vector<uint8_t> rewarded;    // balls already paid this reward cycle
  int step_count = 0;               // observation slots emitted so far
  RngStream::State rng;
};

struct Observation {
  int size = 0;
  std::vector<uint8_t> rgb;  // size*size*3, row-major HWC

  std::vector<float> to_float01() const {
    std::vector<float> out(rgb.size());
    for (size_t i = 0; i < rgb.size(); ++i) out[i] = static_cast<float>(rgb[i]) / 255.0f;
    return out;
  }
};

struct StepInfo {
  int collected = -1;       // ball index entered this step, if any
  bool correct = false;     // collected ball matched the hidden order
  bool map_reset = false;   // wrong ball restored the map
  bool full_reset = false;  // whole order completed, new reward cycle
  int progress = 0;         // after the step
};

struct StepResult {
  Observation obs;
  float reward = 0.0f;
  bool done = false;
  StepInfo info;
};

class HiddenOrderEnv {
 public:
  explicit HiddenOrderEnv(GridConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const GridConfig& config() const { return cfg_; }
  const EnvState& state() const { return state_; }
  bool done() const { return done_; }

  Observation reset(uint64_t seed) {
    RngStream rng(seed);
    place_balls(rng);
    draw_order(rng);
    place_agent(rng);
    state_.progress = 0;
    state_.rewarded.assign(static_cast<size_t>(cfg_.n_balls), 0);
    state_.step_count = 1;  // the reset frame is the first observation slot
    state_.rng = rng.state();
    done_ = false;
    return render_obs(state_);
  }

  StepResult step(int action) {
    TDRM_CHECK(!done_, "step called on a finished episode");
    TDRM_CHECK(action >= 0 && action < kNumEnvActions, "unknown action");
    StepResult res;
    bool entered = false;
    Cell prev = state_.agent_pos;
    if (action == kActionTurnLeft) {
      state_.agent_dir = rotate(state_.agent_dir, -1);
    } else if (action == kActionTurnRight) {
      state_.agent_dir = rotate(state_.agent_dir, +1);
    } else {
      Cell next = forward_cell(state_.agent_pos, state_.agent_dir);
      if (in_grid(next)) {
        state_.agent_pos = next;
        entered = !(next == prev);
      }
    }
    if (entered) {
      int b = present_ball_at(state_.agent_pos);
      if (b >= 0) res.reward = collect(b, &res.info);
    }
    state_.step_count += 1;
    done_ = state_.step_count == cfg_.max_steps;
    res.done = done_;
    res.info.progress = state_.progress;
    res.obs = render_obs(state_);
    return res;
  }

  // Renders the egocentric window. Pure in the state argument so recorded
  // states can be re-rendered without touching the live episode.
  Observation render_obs(const EnvState& s) const {
    Observation obs;
    obs.size = cfg_.render_size;
    obs.rgb.assign(static_cast<size_t>(cfg_.render_size) * cfg_.render_size * 3, 0);
    paint(s, &obs.rgb, nullptr);
    return obs;
  }

  // 1 exactly on pixels that show a ball sprite in render_obs(s).
  std::vector<uint8_t> foreground_mask(const EnvState& s) const {
    std::vector<uint8_t> mask(static_cast<size_t>(cfg_.render_size) * cfg_.render_size, 0);
    paint(s, nullptr, &mask);
    return mask;
  }

 private:
  static Heading rotate(Heading h, int delta) {
    return static_cast<Heading>(((static_cast<int>(h) + delta) % 4 + 4) % 4);
  }

  static Cell forward_cell(Cell c, Heading h) {
    switch (h) {
      case Heading::kNorth: return {c.row - 1, c.col};
      case Heading::kEast: return {c.row, c.col + 1};
      case Heading::kSouth: return {c.row + 1, c.col};
      case Heading::kWest: return {c.row, c.col - 1};
    }
    return c;
  }

  bool in_grid(const Cell& c) const {
    return c.row >= 0 && c.row < cfg_.grid_size && c.col >= 0 && c.col < cfg_.grid_size;
  }

  int present_ball_at(const Cell& c) const {
    for (int b = 0; b < cfg_.n_balls; ++b) {
      if (state_.ball_present[static_cast<size_t>(b)] && state_.ball_home[static_cast<size_t>(b)] == c) {
        return b;
      }
    }
    return -1;
  }

  float collect(int b, StepInfo* info) {
    info->collected = b;
    if (b == state_.hidden_order[static_cast<size_t>(state_.progress)]) {
      info->correct = true;
      float reward = state_.rewarded[static_cast<size_t>(b)] ? 0.0f : 3.0f;
      state_.rewarded[static_cast<size_t>(b)] = 1;
      state_.ball_present[static_cast<size_t>(b)] = 0;
      state_.progress += 1;
      if (state_.progress == cfg_.n_balls) {
        info->full_reset = true;
        restore_balls();
        state_.progress = 0;
        state_.rewarded.assign(static_cast<size_t>(cfg_.n_balls), 0);
      }
      return reward;
    }
    info->map_reset = true;
    if (cfg_.strict_visit_penalty) state_.rewarded[static_cast<size_t>(b)] = 1;
    restore_balls();
    state_.progress = 0;
    return 0.0f;
  }

  void restore_balls() {
    std::fill(state_.ball_present.begin(), state_.ball_present.end(), uint8_t{1});
  }

  void place_balls(RngStream& rng) {
    const int cells = cfg_.grid_size * cfg_.grid_size;
    for (int attempt = 0; attempt < 10000; ++attempt) {
      std::vector<Cell> homes;
      homes.reserve(static_cast<size_t>(cfg_.n_balls));
      for (int b = 0; b < cfg_.n_balls; ++b) {
        int idx = static_cast<int>(rng.uniform_int(cells));
        homes.push_back({idx / cfg_.grid_size, idx % cfg_.grid_size});
      }
      bool ok = true;
      for (size_t i = 0; i < homes.size() && ok; ++i) {
        for (size_t j = i + 1; j < homes.size() && ok; ++j) {
          // Distance 0 (a shared cell) is rejected no matter the threshold.
          if (manhattan(homes[i], homes[j]) < std::max(1, cfg_.min_pair_distance)) ok = false;
        }
      }
      if (ok) {
        state_.ball_home = std::move(homes);
        state_.ball_present.assign(static_cast<size_t>(cfg_.n_balls), 1);
        return;
      }
    }
    contract_fail("no ball layout satisfied min_pair_distance after 10000 attempts");
  }

  void draw_order(RngStream& rng) {
    state_.hidden_order.resize(static_cast<size_t>(cfg_.n_balls));
    for (int i = 0; i < cfg_.n_balls; ++i) state_.hidden_order[static_cast<size_t>(i)] = i;
    for (int i = cfg_.n_balls - 1; i > 0; --i) {
      int j = static_cast<int>(rng.uniform_int(i + 1));
      std::swap(state_.hidden_order[static_cast<size_t>(i)], state_.hidden_order[static_cast<size_t>(j)]);
    }
  }

  void place_agent(RngStream& rng) {
    std::vector<Cell> free;
    for (int r = 0; r < cfg_.grid_size; ++r) {
      for (int c = 0; c < cfg_.grid_size; ++c) {
        Cell cell{r, c};
        bool taken = false;
        for (const Cell& h : state_.ball_home) {
          if (h == cell) taken = true;
        }
        if (!taken) free.push_back(cell);
      }
    }
    TDRM_CHECK(!free.empty(), "no free cell for the agent");
    state_.agent_pos = free[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(free.size())))];
    state_.agent_dir = static_cast<Heading>(rng.uniform_int(4));
  }

  // View cell (vr, vc) -> world cell. vr = view_cells-1 is the agent's own
  // row, vc = view_cells/2 its column; vr = 0 lies furthest ahead.
  Cell view_to_world(const EnvState& s, int vr, int vc) const {
    const int ahead = cfg_.view_cells - 1 - vr;
    const int right = vc - cfg_.view_cells / 2;
    switch (s.agent_dir) {
      case Heading::kNorth: return {s.agent_pos.row - ahead, s.agent_pos.col + right};
      case Heading::kEast: return {s.agent_pos.row + right, s.agent_pos.col + ahead};
      case Heading::kSouth: return {s.agent_pos.row + ahead, s.agent_pos.col - right};
      case Heading::kWest: return {s.agent_pos.row - right, s.agent_pos.col - ahead};
    }
    return s.agent_pos;
  }

  void paint(const EnvState& s, std::vector<uint8_t>* rgb, std::vector<uint8_t>* mask) const {
    const int S = cfg_.render_size;
    const int V = cfg_.view_cells;
    const int ball_px = cfg_.ball_sprite_px();
    const int agent_px = std::max(1, ball_px / 2);
    auto fill = [&](int r0, int r1, int c0, int c1, Rgb color, uint8_t m) {
      for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) {
          if (rgb) {
            size_t at = (static_cast<size_t>(r) * S + c) * 3;
            (*rgb)[at] = color.r;
            (*rgb)[at + 1] = color.g;
            (*rgb)[at + 2] = color.b;
          }
          if (mask) (*mask)[static_cast<size_t>(r) * S + c] = m;
        }
      }
    };
    for (int vr = 0; vr < V; ++vr) {
      for (int vc = 0; vc < V; ++vc) {
        const int r0 = vr * S / V, r1 = (vr + 1) * S / V;
        const int c0 = vc * S / V, c1 = (vc + 1) * S / V;
        Cell w = view_to_world(s, vr, vc);
        if (!in_grid(w)) {
          fill(r0, r1, c0, c1, kWallColor, 0);
          continue;
        }
        fill(r0, r1, c0, c1, kFloorColor, 0);
        int b = -1;
        for (int i = 0; i < cfg_.n_balls; ++i) {
          if (s.ball_present[static_cast<size_t>(i)] && s.ball_home[static_cast<size_t>(i)] == w) b = i;
        }
        if (b >= 0) {
          int sr = r0 + (r1 - r0 - ball_px) / 2, sc = c0 + (c1 - c0 - ball_px) / 2;
          fill(sr, sr + ball_px, sc, sc + ball_px, kBallPalette[static_cast<size_t>(b)], 1);
        }
        if (s.agent_pos == w) {
          int sr = r0 + (r1 - r0 - agent_px) / 2, sc = c0 + (c1 - c0 - agent_px) / 2;
          fill(sr, sr + agent_px, sc, sc + agent_px, kAgentColor, 0);
        }
      }
    }
  }

  GridConfig cfg_;
  EnvState state_;
  bool done_ = true;
};

}  // namespace tdrm

#endif  // TDRM_ENV_HIDDEN_ORDER_HPP_
