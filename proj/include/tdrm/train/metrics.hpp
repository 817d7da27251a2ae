#ifndef TDRM_TRAIN_METRICS_HPP_
#define TDRM_TRAIN_METRICS_HPP_

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "tdrm/core/common.hpp"

namespace tdrm {

inline constexpr const char* kMetricsHeader =
    "step,phase,loss_total,loss_image,loss_reward,loss_discount,kl,"
    "actor_loss,critic_loss,policy_entropy,episode_return,episodes,wallclock_s";

// One row of the training log. Numeric fields that do not apply to the row's
// phase stay NaN and serialize as empty cells.
struct MetricsRow {
  int64_t step = 0;
  std::string phase;
  double loss_total = std::numeric_limits<double>::quiet_NaN();
  double loss_image = std::numeric_limits<double>::quiet_NaN();
  double loss_reward = std::numeric_limits<double>::quiet_NaN();
  double loss_discount = std::numeric_limits<double>::quiet_NaN();
  double kl = std::numeric_limits<double>::quiet_NaN();
  double actor_loss = std::numeric_limits<double>::quiet_NaN();
  double critic_loss = std::numeric_limits<double>::quiet_NaN();
  double policy_entropy = std::numeric_limits<double>::quiet_NaN();
  double episode_return = std::numeric_limits<double>::quiet_NaN();
  int64_t episodes = 0;
  double wallclock_s = 0.0;
};

namespace detail {

inline std::string metrics_cell(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_metrics_cell(const std::string& s) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::stod(s);
}

}  // namespace detail

inline std::string format_metrics_row(const MetricsRow& r) {
  std::ostringstream o;
  o << r.step << ',' << r.phase << ',' << detail::metrics_cell(r.loss_total) << ','
    << detail::metrics_cell(r.loss_image) << ',' << detail::metrics_cell(r.loss_reward) << ','
    << detail::metrics_cell(r.loss_discount) << ',' << detail::metrics_cell(r.kl) << ','
    << detail::metrics_cell(r.actor_loss) << ',' << detail::metrics_cell(r.critic_loss) << ','
    << detail::metrics_cell(r.policy_entropy) << ','
    << detail::metrics_cell(r.episode_return) << ',' << r.episodes << ','
    << detail::metrics_cell(r.wallclock_s);
  return o.str();
}

// Append-only CSV log. A fresh or empty file gets the header; reopening an
// existing log continues after its last row.
class MetricsLog {
 public:
  explicit MetricsLog(const std::string& path) : path_(path) {
    bool need_header = true;
    {
      std::ifstream probe(path);
      if (probe.good()) {
        std::string first;
        if (std::getline(probe, first) && !first.empty()) need_header = false;
      }
    }
    out_.open(path, std::ios::app);
    TDRM_CHECK(out_.good(), "cannot open metrics log for append: " + path);
    if (need_header) out_ << kMetricsHeader << '\n';
    out_.flush();
  }

  const std::string& path() const { return path_; }

  void append(const MetricsRow& r) {
    TDRM_CHECK(r.step >= last_step_, "metrics steps must be monotone");
    last_step_ = r.step;
    out_ << format_metrics_row(r) << '\n';
    out_.flush();
    TDRM_CHECK(out_.good(), "metrics log write failed: " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
  int64_t last_step_ = 0;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  TDRM_CHECK(in.good(), "cannot open metrics log: " + path);
  std::string line;
  TDRM_CHECK(std::getline(in, line), "metrics log is empty: " + path);
  TDRM_CHECK(line == kMetricsHeader, "metrics log has an unexpected header: " + path);
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells = split_csv_line(line);
    TDRM_CHECK(cells.size() == 13, "metrics row has the wrong cell count: " + line);
    MetricsRow r;
    r.step = std::stoll(cells[0]);
    r.phase = cells[1];
    r.loss_total = detail::parse_metrics_cell(cells[2]);
    r.loss_image = detail::parse_metrics_cell(cells[3]);
    r.loss_reward = detail::parse_metrics_cell(cells[4]);
    r.loss_discount = detail::parse_metrics_cell(cells[5]);
    r.kl = detail::parse_metrics_cell(cells[6]);
    r.actor_loss = detail::parse_metrics_cell(cells[7]);
    r.critic_loss = detail::parse_metrics_cell(cells[8]);
    r.policy_entropy = detail::parse_metrics_cell(cells[9]);
    r.episode_return = detail::parse_metrics_cell(cells[10]);
    r.episodes = std::stoll(cells[11]);
    r.wallclock_s = detail::parse_metrics_cell(cells[12]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// Row-by-row equality over every column except wallclock_s, which depends on
// the machine, not the run. NaNs compare equal to NaNs.
inline bool metrics_equal_excluding_wallclock(const std::vector<MetricsRow>& a,
                                              const std::vector<MetricsRow>& b) {
  auto cell_eq = [](double x, double y) {
    if (std::isnan(x) && std::isnan(y)) return true;
    return x == y;
  };
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    const MetricsRow &p = a[i], &q = b[i];
    if (p.step != q.step || p.phase != q.phase || p.episodes != q.episodes) return false;
    if (!cell_eq(p.loss_total, q.loss_total) || !cell_eq(p.loss_image, q.loss_image) ||
        !cell_eq(p.loss_reward, q.loss_reward) || !cell_eq(p.loss_discount, q.loss_discount) ||
        !cell_eq(p.kl, q.kl) || !cell_eq(p.actor_loss, q.actor_loss) ||
        !cell_eq(p.critic_loss, q.critic_loss) ||
        !cell_eq(p.policy_entropy, q.policy_entropy) ||
        !cell_eq(p.episode_return, q.episode_return)) {
      return false;
    }
  }
  return true;
}

}  // namespace tdrm

#endif  // TDRM_TRAIN_METRICS_HPP_
