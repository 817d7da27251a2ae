#ifndef TDRM_EVAL_REPORT_HPP_
#define TDRM_EVAL_REPORT_HPP_

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tdrm/core/common.hpp"
#include "tdrm/eval/evaluate.hpp"
#include "tdrm/train/metrics.hpp"

namespace tdrm {

// Full evaluation result: one generation row per context length, an optional
// agent block, and provenance identifying what was evaluated.
struct EvalReport {
  std::vector<GenerationEval> generation;
  bool has_agent = false;
  AgentEval agent;
  uint64_t checkpoint_hash = 0;
  uint64_t seed = 0;
};

// MSE columns carry their scale in the name: per-image mean squared error on
// 0..255 pixel values.
inline constexpr const char* kReportHeader =
    "kind,context,overall_mse_255sq,foreground_mse_255sq,zero_reward_acc_pct,"
    "nonzero_reward_acc_pct,mean_return,stderr_return,success_pct,episodes,"
    "skipped,checkpoint_hash,seed";

// FNV-1a over a file's bytes; used to fingerprint the evaluated checkpoint.
inline uint64_t hash_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  TDRM_CHECK(f.good(), "cannot open " + path);
  uint64_t h = 1469598103934665603ull;
  char buf[4096];
  while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
    for (std::streamsize i = 0; i < f.gcount(); ++i) {
      h ^= static_cast<uint8_t>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!f) break;
  }
  return h;
}

inline void write_report_csv(const EvalReport& rep, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  TDRM_CHECK(f.good(), "cannot open " + path + " for writing");
  f << kReportHeader << "\n";
  auto cell = [](double v) { return detail::metrics_cell(v); };
  for (const GenerationEval& g : rep.generation) {
    f << "generation," << g.context << "," << cell(g.overall_mse) << ","
      << cell(g.foreground_mse) << "," << cell(g.zero_acc) << "," << cell(g.nonzero_acc)
      << ",,,," << g.episodes_used << "," << g.episodes_skipped << ","
      << rep.checkpoint_hash << "," << rep.seed << "\n";
  }
  if (rep.has_agent) {
    f << "agent,,,,,," << cell(rep.agent.mean_return) << "," << cell(rep.agent.stderr_return)
      << "," << cell(rep.agent.success_pct) << "," << rep.agent.n_episodes << ",,"
      << rep.checkpoint_hash << "," << rep.seed << "\n";
  }
  TDRM_CHECK(f.good(), "failed writing " + path);
}

namespace detail {

inline void check_pct(double v, const std::string& what) {
  TDRM_CHECK(std::isnan(v) || (v >= 0.0 && v <= 100.0), what + " outside [0,100]");
}

inline int64_t parse_count(const std::string& s, const std::string& what) {
  TDRM_CHECK(!s.empty(), what + " cell is empty");
  return static_cast<int64_t>(std::stoll(s));
}

}  // namespace detail

// Parses and validates a report written by write_report_csv.
inline EvalReport read_report_csv(const std::string& path) {
  std::ifstream f(path);
  TDRM_CHECK(f.good(), "cannot open " + path);
  std::string line;
  TDRM_CHECK(std::getline(f, line) && line == kReportHeader,
             "unrecognized report header in " + path);
  EvalReport rep;
  bool have_provenance = false;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells = split_csv_line(line);
    TDRM_CHECK(cells.size() == 13, "report row has the wrong number of cells");
    const uint64_t hash = std::stoull(cells[11]);
    const uint64_t seed = std::stoull(cells[12]);
    if (have_provenance) {
      TDRM_CHECK(hash == rep.checkpoint_hash && seed == rep.seed,
                 "report rows disagree on provenance");
    } else {
      rep.checkpoint_hash = hash;
      rep.seed = seed;
      have_provenance = true;
    }
    if (cells[0] == "generation") {
      GenerationEval g;
      g.context = detail::parse_count(cells[1], "context");
      g.overall_mse = detail::parse_metrics_cell(cells[2]);
      g.foreground_mse = detail::parse_metrics_cell(cells[3]);
      g.zero_acc = detail::parse_metrics_cell(cells[4]);
      g.nonzero_acc = detail::parse_metrics_cell(cells[5]);
      g.episodes_used = detail::parse_count(cells[9], "episodes");
      g.episodes_skipped = detail::parse_count(cells[10], "skipped");
      TDRM_CHECK(std::isnan(g.overall_mse) || g.overall_mse >= 0.0, "negative MSE");
      TDRM_CHECK(std::isnan(g.foreground_mse) || g.foreground_mse >= 0.0, "negative MSE");
      detail::check_pct(g.zero_acc, "zero-reward accuracy");
      detail::check_pct(g.nonzero_acc, "nonzero-reward accuracy");
      rep.generation.push_back(g);
    } else if (cells[0] == "agent") {
      TDRM_CHECK(!rep.has_agent, "duplicate agent row");
      rep.has_agent = true;
      rep.agent.mean_return = detail::parse_metrics_cell(cells[6]);
      rep.agent.stderr_return = detail::parse_metrics_cell(cells[7]);
      rep.agent.success_pct = detail::parse_metrics_cell(cells[8]);
      rep.agent.n_episodes = detail::parse_count(cells[9], "episodes");
      detail::check_pct(rep.agent.success_pct, "success ratio");
    } else {
      throw ContractError("unknown report row kind: " + cells[0]);
    }
  }
  return rep;
}

// Human-readable digest of a report; absent values print as N/A.
inline std::string report_summary_text(const EvalReport& rep) {
  auto num = [](double v, int prec = 2) {
    if (std::isnan(v)) return std::string("N/A");
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(prec);
    os << v;
    return os.str();
  };
  auto pct = [&](double v) { return std::isnan(v) ? std::string("N/A") : num(v) + "%"; };
  std::ostringstream os;
  os << "open-loop evaluation (per-image MSE on the 0-255 pixel scale, predictions "
        "quantized to bytes)\n";
  os << "checkpoint hash " << std::hex << rep.checkpoint_hash << std::dec << ", seed "
     << rep.seed << "\n";
  for (const GenerationEval& g : rep.generation) {
    os << "context " << g.context << ": overall MSE " << num(g.overall_mse)
       << ", foreground MSE " << num(g.foreground_mse) << ", zero-reward acc "
       << pct(g.zero_acc) << ", nonzero-reward acc " << pct(g.nonzero_acc) << " ("
       << g.episodes_used << " episodes, " << g.episodes_skipped << " skipped)\n";
  }
  if (rep.has_agent) {
    os << "agent: mean return " << num(rep.agent.mean_return) << " +/- "
       << num(rep.agent.stderr_return) << ", success " << pct(rep.agent.success_pct)
       << " over " << rep.agent.n_episodes << " episodes\n";
  }
  return os.str();
}

}  // namespace tdrm

#endif  // TDRM_EVAL_REPORT_HPP_
