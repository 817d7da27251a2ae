// Command-line front end.
//
//   tdrm train --config <file> --seed <u64> --logdir <dir> [--model tssm|rssm] [--steps N]
//   tdrm eval --checkpoint <file> --episodes N --out <dir>
//   tdrm gen-report --checkpoint <file> [--contexts 60,70,80] --out <dir>
//
// train runs the full collect/update schedule and writes metrics plus
// checkpoints under the log directory. eval scores the checkpointed agent on
// fresh episodes. gen-report scores open-loop frame and reward prediction on
// the replay episodes stored in the checkpoint and renders rollout strips.
// Any contract violation exits nonzero.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "tdrm/eval/evaluate.hpp"
#include "tdrm/eval/png.hpp"
#include "tdrm/eval/report.hpp"
#include "tdrm/train/checkpoint.hpp"
#include "tdrm/train/config.hpp"
#include "tdrm/train/trainer.hpp"

namespace {

constexpr const char* kUsage =
    "usage:\n"
    "  tdrm train --config <file> --seed <u64> --logdir <dir> [--model tssm|rssm] [--steps N]\n"
    "  tdrm eval --checkpoint <file> --episodes N --out <dir>\n"
    "  tdrm gen-report --checkpoint <file> [--contexts 60,70,80] --out <dir>\n";

using Flags = std::map<std::string, std::string>;

Flags parse_flags(int argc, char** argv, int start) {
  Flags out;
  for (int i = start; i < argc; ++i) {
    std::string a = argv[i];
    if (a.rfind("--", 0) != 0) throw tdrm::ContractError("unexpected argument: " + a);
    if (i + 1 >= argc) throw tdrm::ContractError("missing value for " + a);
    out[a.substr(2)] = argv[++i];
  }
  return out;
}

std::string need(const Flags& f, const std::string& key) {
  auto it = f.find(key);
  if (it == f.end()) throw tdrm::ContractError("missing required flag --" + key);
  return it->second;
}

void reject_unknown(const Flags& f, const std::vector<std::string>& known) {
  for (const auto& [k, v] : f) {
    bool ok = false;
    for (const std::string& known_key : known) ok = ok || k == known_key;
    if (!ok) throw tdrm::ContractError("unknown flag --" + k);
  }
}

int cmd_train(const Flags& f) {
  reject_unknown(f, {"config", "seed", "logdir", "model", "steps"});
  tdrm::RunConfig cfg = tdrm::load_config_file(need(f, "config"));
  cfg.seed = std::stoull(need(f, "seed"));
  cfg.logdir = need(f, "logdir");
  if (f.count("model")) tdrm::apply_config_kv(cfg, "model_kind", f.at("model"));
  if (f.count("steps")) cfg.schedule.total_env_steps = std::stoll(f.at("steps"));
  tdrm::Trainer<double> trainer(cfg);
  trainer.run();
  std::printf("trained %s for %lld env steps (%lld episodes); artifacts in %s\n",
              tdrm::model_kind_name(cfg.model_kind).c_str(),
              static_cast<long long>(trainer.env_steps()),
              static_cast<long long>(trainer.episodes()), cfg.logdir.c_str());
  return 0;
}

// Rebuilds a trainer from the configuration embedded in a checkpoint.
std::unique_ptr<tdrm::Trainer<double>> trainer_from_checkpoint(const std::string& path) {
  tdrm::CheckpointFile f = tdrm::CheckpointFile::load(path);
  TDRM_CHECK(f.has("__meta.config"), "checkpoint has no embedded configuration");
  tdrm::RunConfig cfg;
  tdrm::parse_config_text(cfg, f.str("__meta.config"));
  auto trainer = std::make_unique<tdrm::Trainer<double>>(cfg);
  trainer->load(path);
  return trainer;
}

int cmd_eval(const Flags& f) {
  reject_unknown(f, {"checkpoint", "episodes", "out"});
  const std::string ckpt = need(f, "checkpoint");
  const int64_t episodes = std::stoll(need(f, "episodes"));
  const std::string out = need(f, "out");
  auto trainer = trainer_from_checkpoint(ckpt);
  std::filesystem::create_directories(out);

  tdrm::EvalReport rep;
  rep.has_agent = true;
  rep.agent = tdrm::evaluate_agent(trainer->world_model(), trainer->agent(),
                                   trainer->config().env, episodes,
                                   trainer->config().seed);
  rep.checkpoint_hash = tdrm::hash_file_bytes(ckpt);
  rep.seed = trainer->config().seed;
  tdrm::write_report_csv(rep, out + "/report.csv");
  const std::string summary = tdrm::report_summary_text(rep);
  std::ofstream(out + "/summary.txt") << summary;
  std::fputs(summary.c_str(), stdout);
  return 0;
}

std::vector<int64_t> parse_contexts(const std::string& csv) {
  std::vector<int64_t> out;
  std::string cur;
  for (char ch : csv + ",") {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(std::stoll(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  TDRM_CHECK(!out.empty(), "no context lengths given");
  for (int64_t c : out) TDRM_CHECK(c >= 1, "context lengths must be positive");
  return out;
}

int cmd_gen_report(const Flags& f) {
  reject_unknown(f, {"checkpoint", "contexts", "out"});
  const std::string ckpt = need(f, "checkpoint");
  const std::string out = need(f, "out");
  const std::vector<int64_t> contexts =
      parse_contexts(f.count("contexts") ? f.at("contexts") : "60,70,80");
  auto trainer = trainer_from_checkpoint(ckpt);
  std::filesystem::create_directories(out);

  std::vector<const tdrm::Episode*> eps;
  for (size_t i = 0; i < trainer->store().size(); ++i) eps.push_back(&trainer->store().episode(i));
  TDRM_CHECK(!eps.empty(), "checkpoint contains no replay episodes to evaluate on");

  tdrm::WorldModelGenerator<double> gen(&trainer->world_model(), trainer->config().seed);
  tdrm::EvalReport rep;
  rep.checkpoint_hash = tdrm::hash_file_bytes(ckpt);
  rep.seed = trainer->config().seed;
  for (int64_t c : contexts) {
    rep.generation.push_back(
        tdrm::evaluate_generation<double>(gen, eps, trainer->config().env, c));
    for (const tdrm::Episode* ep : eps) {
      if (ep->length() > c) {
        tdrm::RgbImage strip = tdrm::generation_strip(*ep, gen.generate(*ep, c), c);
        tdrm::write_png(out + "/strip_c" + std::to_string(c) + ".png", strip);
        break;
      }
    }
  }
  tdrm::write_report_csv(rep, out + "/report.csv");
  const std::string summary = tdrm::report_summary_text(rep);
  std::ofstream(out + "/summary.txt") << summary;
  std::fputs(summary.c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fputs(kUsage, stderr);
    return 2;
  }
  const std::string cmd = argv[1];
  try {
    const Flags flags = parse_flags(argc, argv, 2);
    if (cmd == "train") return cmd_train(flags);
    if (cmd == "eval") return cmd_eval(flags);
    if (cmd == "gen-report") return cmd_gen_report(flags);
    std::fputs(kUsage, stderr);
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "tdrm %s: %s\n", cmd.c_str(), e.what());
    return 1;
  }
}
