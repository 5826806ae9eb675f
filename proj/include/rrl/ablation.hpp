#pragma once

// Reward-mode ablation: every (task, mode, seed) cell of the configured ladder
// is trained, checkpointed and evaluated; results are aggregated into a
// mode-by-task table of mean +- sd success rates.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "rrl/run_config.hpp"
#include "rrl/stats.hpp"
#include "rrl/trainer.hpp"

namespace rrl::ablation {

namespace fs = std::filesystem;
using trainer::RewardMode;

inline constexpr RewardMode kModes[] = {RewardMode::er, RewardMode::er_lar, RewardMode::er_ar2, RewardMode::er_ar4};

struct CellResult {
  std::string task;
  RewardMode mode = RewardMode::er;
  std::uint64_t seed = 0;
  bool ok = false;
  double success_rate = std::nan("");
  double mean_return = std::nan("");
  double train_success_rate = std::nan("");  // last training iteration
  fs::path checkpoint;
  std::string message;
};

struct Summary {
  double mean = std::nan("");
  double sd = std::nan("");
  int n = 0;
  bool failed = false;
};

struct AblationResult {
  std::vector<std::string> tasks;  // ladder order
  std::vector<CellResult> cells;

  bool any_failed() const {
    for (const auto& c : cells)
      if (!c.ok) return true;
    return false;
  }

  Summary summary(const std::string& task, RewardMode mode) const {
    Summary s;
    std::vector<double> rates;
    for (const auto& c : cells) {
      if (c.task != task || c.mode != mode) continue;
      if (!c.ok) s.failed = true;
      else rates.push_back(c.success_rate);
    }
    s.n = static_cast<int>(rates.size());
    if (!rates.empty()) s.mean = stats::mean(rates);
    if (rates.size() > 1) s.sd = stats::stddev(rates);
    return s;
  }
};

using CellCallback = std::function<void(const CellResult&)>;

inline std::string cell_name(const std::string& task, RewardMode mode, std::uint64_t seed) {
  std::string m = trainer::to_string(mode);
  for (auto& ch : m)
    if (ch == '+') ch = '_';
  return task + "_" + m + "_s" + std::to_string(seed);
}

inline CellResult run_cell(const config::RunConfig& c, const config::LadderCell& lc, RewardMode mode,
                           std::uint64_t seed, const fs::path& out_dir) {
  CellResult r;
  r.task = lc.task;
  r.mode = mode;
  r.seed = seed;
  try {
    const craftworld::CraftWorld world(config::env_config(c, lc.horizon));
    const craftworld::TaskTarget target{lc.task, c.task_count};
    world.validate_target(target);
    auto cfg = c.train;
    cfg.reward_mode = mode;
    cfg.seed = seed;
    cfg.iterations = lc.iterations;
    if (lc.rollout_steps > 0) cfg.rollout_steps = lc.rollout_steps;
    const auto model = config::make_model(c, world);
    auto judge = config::make_referee(c, world, mode);
    auto result = trainer::train(world, target, model, model.initial_parameters(seed), judge.get(), cfg);
    const std::string name = cell_name(lc.task, mode, seed);
    r.checkpoint = out_dir / "checkpoints" / (name + ".ckpt");
    model.save(r.checkpoint, result.params);
    std::ofstream(out_dir / "metrics" / (name + ".csv")) << [&] {
      std::ostringstream ss;
      trainer::write_metrics_csv(ss, result.metrics);
      return ss.str();
    }();
    if (!result.metrics.empty()) r.train_success_rate = result.metrics.back().success_rate;
    const auto mode_act = c.eval_mode == "sample" ? policy::ActMode::sample : policy::ActMode::greedy;
    const auto rep = trainer::evaluate_policy(world, target, model, result.params, std::max(1, c.eval_episodes),
                                              mix_seed(c.eval_seed, seed), mode_act);
    r.success_rate = rep.success_rate;
    r.mean_return = rep.mean_return;
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.message = e.what();
  }
  return r;
}

// Seeds: explicit list when non-empty, else the ladder cell's, else run.seeds.
inline AblationResult run_ablation(const config::RunConfig& c, const std::vector<std::uint64_t>& seeds,
                                   const fs::path& out_dir, const CellCallback& on_cell = {}) {
  if (c.ladder.empty()) throw ConfigError("run.ladder: ablation needs at least one task");
  fs::create_directories(out_dir / "checkpoints");
  fs::create_directories(out_dir / "metrics");
  AblationResult res;
  for (const auto& lc : c.ladder) {
    const auto& use = !seeds.empty() ? seeds : !lc.seeds.empty() ? lc.seeds : c.seeds;
    if (use.size() < 2) throw ConfigError("ablation needs at least 2 seeds (task " + lc.task + ")");
    res.tasks.push_back(lc.task);
    for (auto mode : kModes)
      for (auto seed : use) {
        res.cells.push_back(run_cell(c, lc, mode, seed, out_dir));
        if (on_cell) on_cell(res.cells.back());
      }
  }
  return res;
}

inline std::string format_cell(const Summary& s) {
  if (s.failed) return "FAILED";
  if (s.n == 0) return "-";
  char buf[64];
  if (s.n > 1) std::snprintf(buf, sizeof buf, "%.2f ± %.2f", s.mean, s.sd);
  else std::snprintf(buf, sizeof buf, "%.2f", s.mean);
  return buf;
}

inline void write_markdown(std::ostream& out, const AblationResult& r) {
  out << "| Reward |";
  for (const auto& t : r.tasks) out << ' ' << t << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < r.tasks.size(); ++i) out << "---|";
  out << '\n';
  for (auto mode : kModes) {
    out << "| " << trainer::to_string(mode) << " |";
    for (const auto& t : r.tasks) out << ' ' << format_cell(r.summary(t, mode)) << " |";
    out << '\n';
  }
}

// Same shape as the Markdown table; mean and sd in separate columns.
inline void write_summary_csv(std::ostream& out, const AblationResult& r) {
  out << "reward_mode";
  for (const auto& t : r.tasks) out << ',' << t << "_mean," << t << "_sd";
  out << '\n';
  for (auto mode : kModes) {
    out << trainer::to_string(mode);
    for (const auto& t : r.tasks) {
      const auto s = r.summary(t, mode);
      if (s.failed) {
        out << ",FAILED,FAILED";
        continue;
      }
      char buf[64];
      std::snprintf(buf, sizeof buf, ",%.6g,%.6g", s.mean, s.sd);
      out << buf;
    }
    out << '\n';
  }
}

inline void write_cells_csv(std::ostream& out, const AblationResult& r) {
  out << "task,reward_mode,seed,status,success_rate,mean_return,train_success_rate\n";
  for (const auto& c : r.cells) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.6g,%.6g,%.6g", c.success_rate, c.mean_return, c.train_success_rate);
    out << c.task << ',' << trainer::to_string(c.mode) << ',' << c.seed << ',' << (c.ok ? "ok" : "FAILED") << ','
        << buf << '\n';
  }
}

}  // namespace rrl::ablation
