// rrl: train / eval / ablate / analyze.
// Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rrl/ablation.hpp"
#include "rrl/analysis.hpp"
#include "rrl/planning.hpp"
#include "rrl/run_config.hpp"
#include "rrl/trainer.hpp"

namespace fs = std::filesystem;
using namespace rrl;

namespace {

constexpr int kOk = 0, kRuntime = 1, kUsage = 2;

struct TrainArgs {
  fs::path config;
  std::vector<std::string> sets;
  std::string reward_mode;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string run_id;
};

struct EvalArgs {
  fs::path checkpoint;
  fs::path config;
  fs::path recipe;
  std::string task;
  int count = 1;
  int episodes = 30;
  std::string mode = "greedy";
  std::uint64_t seed = 0;
  fs::path out;
};

struct AblateArgs {
  fs::path config;
  std::vector<std::string> sets;
  std::vector<std::uint64_t> seeds;
  fs::path out;
};

struct AnalyzeArgs {
  double gamma = 0.99;
  double lam = 0.95;
  double R = 1.0;
  double eps = 0.01;
  int max_offset = 200;
  fs::path out = "vanishment.csv";
  fs::path plot;
  bool empirical = false;
  fs::path recipe;
  std::string task = "wooden_pickaxe";
  int horizon = 0;
  int episodes = 400;
  int critic_epochs = 200;
  std::string referee = "none";
  std::uint64_t seed = 0;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string csv_row(const trainer::IterationMetrics& m) {
  std::ostringstream ss;
  trainer::write_metrics_row(ss, m);
  return ss.str();
}

int cmd_train(const TrainArgs& a) {
  auto overrides = a.sets;
  if (!a.reward_mode.empty()) overrides.push_back("train.reward_mode=\"" + a.reward_mode + "\"");
  if (a.seed) overrides.push_back("train.seed=" + std::to_string(*a.seed));
  if (!a.out.empty()) overrides.push_back("run.output_dir=\"" + a.out + "\"");
  if (!a.run_id.empty()) overrides.push_back("run.run_id=\"" + a.run_id + "\"");

  config::RunConfig cfg;
  std::optional<craftworld::CraftWorld> world;
  try {
    cfg = config::load_run_config(a.config, overrides);
    world.emplace(config::env_config(cfg));
    if (cfg.task.empty()) throw ConfigError("env.task: is required");
    world->validate_target(cfg.target());
    craftworld::check_horizon(*world, cfg.target());
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  }

  const auto target = cfg.target();
  const auto model = config::make_model(cfg, *world);
  std::unique_ptr<referee::Referee> judge;
  config::RunDir dir;
  try {
    judge = config::make_referee(cfg, *world, cfg.train.reward_mode);
    dir = config::create_run_dir(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  }

  config::RunRecord rec;
  rec.run_id = dir.id;
  rec.version = config::build_version();
  rec.started = config::timestamp_utc("%Y-%m-%dT%H:%M:%SZ");
  rec.task = cfg.task;
  rec.reward_mode = trainer::to_string(cfg.train.reward_mode);
  rec.seed = cfg.train.seed;
  rec.save(dir.record());
  std::cerr << "run " << dir.id << " -> " << dir.root.string() << '\n';

  std::ofstream metrics(dir.metrics());
  metrics << trainer::kMetricsHeader << '\n' << std::flush;
  auto on_iter = [&](const trainer::IterationMetrics& m, const approx::ParameterSet& params) {
    metrics << csv_row(m) << std::flush;
    rec.iterations_completed = m.iteration;
    if (cfg.checkpoint_every > 0 && (m.iteration) % cfg.checkpoint_every == 0)
      model.save(dir.checkpoint(m.iteration), params);
    std::cerr << "iter " << m.iteration << "/" << cfg.train.iterations << "  success "
              << fmt("%.3f", m.success_rate) << "  return " << fmt("%.3f", m.mean_return) << "  entropy "
              << fmt("%.3f", m.entropy) << '\n';
  };

  try {
    auto result = trainer::train(*world, target, model, model.initial_parameters(cfg.train.seed), judge.get(),
                                 cfg.train, on_iter);
    model.save(dir.final_checkpoint(), result.params);
    rec.final_checkpoint = fs::relative(dir.final_checkpoint(), dir.root).generic_string();
    if (cfg.eval_episodes > 0) {
      const auto mode = cfg.eval_mode == "sample" ? policy::ActMode::sample : policy::ActMode::greedy;
      const auto rep = trainer::evaluate_policy(*world, target, model, result.params, cfg.eval_episodes,
                                                cfg.eval_seed, mode);
      rec.message = "eval " + cfg.eval_mode + " success_rate " + fmt("%.4f", rep.success_rate) + " over " +
                    std::to_string(rep.episodes) + " episodes";
      std::cout << rec.message << '\n';
    }
    rec.status = "completed";
  } catch (const TrainingDiverged& e) {
    std::ofstream(dir.root / "divergence_dump.txt") << e.dump();
    rec.status = "diverged";
    rec.message = e.what();
    rec.finished = config::timestamp_utc("%Y-%m-%dT%H:%M:%SZ");
    rec.save(dir.record());
    std::cerr << "training diverged: " << e.what() << " (dump in " << (dir.root / "divergence_dump.txt").string()
              << ")\n";
    return kRuntime;
  } catch (const std::exception& e) {
    rec.status = "failed";
    rec.message = e.what();
    rec.finished = config::timestamp_utc("%Y-%m-%dT%H:%M:%SZ");
    rec.save(dir.record());
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  rec.finished = config::timestamp_utc("%Y-%m-%dT%H:%M:%SZ");
  rec.save(dir.record());
  std::cout << dir.root.string() << '\n';
  return kOk;
}

// Run directory of a checkpoint stored as runs/<id>/checkpoints/<file>.
std::optional<fs::path> run_config_of(const fs::path& checkpoint) {
  const auto parent = fs::absolute(checkpoint).parent_path();
  if (parent.filename() != "checkpoints") return std::nullopt;
  const auto cfg = parent.parent_path() / "config.toml";
  if (!fs::exists(cfg)) return std::nullopt;
  return cfg;
}

int cmd_eval(const EvalArgs& a) {
  if (a.episodes < 1) {
    std::cerr << "usage error: --episodes must be >= 1\n";
    return kUsage;
  }
  if (a.mode != "greedy" && a.mode != "sample") {
    std::cerr << "usage error: --mode must be greedy or sample\n";
    return kUsage;
  }
  std::optional<policy::ActorCritic> model;
  approx::ParameterSet params;
  std::optional<craftworld::CraftWorld> world;
  craftworld::TaskTarget target{a.task, a.count};
  fs::path out = a.out;
  try {
    if (!fs::exists(a.checkpoint)) throw ConfigError("checkpoint not found: " + a.checkpoint.string());
    auto loaded = policy::ActorCritic::load(a.checkpoint);
    model.emplace(std::move(loaded.first));
    params = std::move(loaded.second);

    std::optional<fs::path> cfg_path;
    if (!a.config.empty()) cfg_path = a.config;
    else if (a.recipe.empty()) cfg_path = run_config_of(a.checkpoint);
    if (cfg_path) {
      const auto cfg = config::load_run_config(*cfg_path);
      world.emplace(config::env_config(cfg));
      if (target.item.empty()) target = cfg.target();
      if (out.empty() && !a.config.empty()) out = "traces";
      if (out.empty()) out = cfg_path->parent_path() / "traces";
    } else {
      const fs::path recipe = a.recipe.empty() ? fs::path(RRL_DATA_DIR) / "recipe_book.toml" : a.recipe;
      world.emplace(craftworld::load_env_config(recipe));
      if (out.empty()) out = "traces";
    }
    if (target.item.empty()) throw ConfigError("--task is required");
    world->validate_target(target);
    if (model->observation_size() != world->observation_size() || model->skills() != world->skill_ids())
      throw ConfigError("checkpoint does not match the environment: observation size " +
                        std::to_string(model->observation_size()) + " vs " +
                        std::to_string(world->observation_size()) + ", skills " +
                        std::to_string(model->num_skills()) + " vs " + std::to_string(world->skill_ids().size()));
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  }

  const auto mode = a.mode == "sample" ? policy::ActMode::sample : policy::ActMode::greedy;
  const auto rep = trainer::evaluate_policy(*world, target, *model, params, a.episodes, a.seed, mode, true);
  fs::create_directories(out);
  for (std::size_t e = 0; e < rep.traces.size(); ++e) {
    char name[32];
    std::snprintf(name, sizeof name, "episode_%03zu.csv", e);
    std::ofstream f(out / name);
    craftworld::write_trace_csv(f, rep.traces[e]);
  }
  {
    std::ofstream csv(out / "eval.csv");
    csv << "task,count,mode,episodes,successes,success_rate,ci_low,ci_high,mean_return,mean_length\n";
    csv << target.item << ',' << target.count << ',' << a.mode << ',' << rep.episodes << ',' << rep.successes << ','
        << fmt("%.6g", rep.success_rate) << ',' << fmt("%.6g", rep.ci.low) << ',' << fmt("%.6g", rep.ci.high) << ','
        << fmt("%.6g", rep.mean_return) << ',' << fmt("%.6g", rep.mean_length) << '\n';
    std::ofstream md(out / "eval.md");
    md << "| task | mode | episodes | success rate | 95% CI | mean return | mean length |\n"
       << "|---|---|---|---|---|---|---|\n"
       << "| " << target.item << " | " << a.mode << " | " << rep.episodes << " | " << fmt("%.3f", rep.success_rate)
       << " | [" << fmt("%.3f", rep.ci.low) << ", " << fmt("%.3f", rep.ci.high) << "] | "
       << fmt("%.3f", rep.mean_return) << " | " << fmt("%.1f", rep.mean_length) << " |\n";
  }
  std::cout << "task " << target.item << "  episodes " << rep.episodes << "  success_rate "
            << fmt("%.4f", rep.success_rate) << "  wilson95 [" << fmt("%.4f", rep.ci.low) << ", "
            << fmt("%.4f", rep.ci.high) << "]  mean_return " << fmt("%.4f", rep.mean_return) << "  traces "
            << out.string() << '\n';
  return kOk;
}

int cmd_ablate(const AblateArgs& a) {
  config::RunConfig cfg;
  try {
    cfg = config::load_run_config(a.config, a.sets);
    const auto& seeds = a.seeds.empty() ? cfg.seeds : a.seeds;
    for (const auto& lc : cfg.ladder) {
      const auto& use = !a.seeds.empty() ? a.seeds : !lc.seeds.empty() ? lc.seeds : seeds;
      if (use.size() < 2) throw UsageError("ablation needs at least 2 seeds (task " + lc.task + ")");
      const craftworld::CraftWorld world(config::env_config(cfg, lc.horizon));
      world.validate_target({lc.task, cfg.task_count});
      craftworld::check_horizon(world, {lc.task, cfg.task_count});
    }
    if (cfg.ladder.empty()) throw ConfigError("run.ladder: ablation needs at least one task");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  }
  const fs::path out = a.out.empty() ? cfg.output_dir / ("ablation-" + config::timestamp_utc()) : a.out;
  fs::create_directories(out);
  fs::copy_file(cfg.recipe_book, out / "recipe_book.toml", fs::copy_options::overwrite_existing);
  std::ofstream(out / "config.toml") << config::to_toml_text(config::to_document(cfg, "recipe_book.toml"));

  const auto res = ablation::run_ablation(cfg, a.seeds, out, [](const ablation::CellResult& c) {
    std::cerr << c.task << "  " << trainer::to_string(c.mode) << "  seed " << c.seed << "  "
              << (c.ok ? "success " + fmt("%.3f", c.success_rate) : "FAILED: " + c.message) << '\n';
  });
  {
    std::ofstream md(out / "ablation.md");
    ablation::write_markdown(md, res);
    std::ofstream csv(out / "ablation.csv");
    ablation::write_summary_csv(csv, res);
    std::ofstream cells(out / "ablation_cells.csv");
    ablation::write_cells_csv(cells, res);
  }
  ablation::write_markdown(std::cout, res);
  std::cout << out.string() << '\n';
  return res.any_failed() ? kRuntime : kOk;
}

int cmd_analyze(const AnalyzeArgs& a) {
  analysis::VanishmentProfile closed;
  try {
    closed = analysis::closed_form_profile(a.gamma, a.lam, a.R, a.max_offset, a.eps);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  }
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  {
    std::ofstream csv(a.out);
    analysis::write_series_csv(csv, closed.horizon_offsets, closed.gae_values);
  }
  std::vector<analysis::PlotSeries> series{
      {"closed form (gamma*lambda)^k R", closed.horizon_offsets, closed.gae_values, "#1f77b4"}};
  std::cout << "offset 0: " << fmt("%.10g", closed.gae_values.front()) << "  offset " << a.max_offset << ": "
            << fmt("%.10g", closed.gae_values.back()) << "  -> " << a.out.string() << '\n';

  if (a.empirical) {
    try {
      const fs::path recipe = a.recipe.empty() ? fs::path(RRL_DATA_DIR) / "recipe_book.toml" : a.recipe;
      auto env = craftworld::load_env_config(recipe);
      if (a.horizon > 0) env.horizon = a.horizon;
      const craftworld::CraftWorld world(env);
      const craftworld::TaskTarget target{a.task, 1};
      world.validate_target(target);
      analysis::EmpiricalConfig ec;
      ec.episodes = a.episodes;
      ec.critic_epochs = a.critic_epochs;
      ec.gamma = a.gamma;
      ec.lam = a.lam;
      ec.seed = a.seed;
      std::unique_ptr<referee::Referee> judge;
      if (a.referee == "oracle") judge = std::make_unique<referee::OracleReferee>(world);
      else if (a.referee != "none") throw ConfigError("--referee must be none or oracle");
      const auto emp = analysis::empirical_vanishment(world, target, ec, judge.get());
      if (emp.empty()) {
        std::cerr << "no successful episode in " << emp.episodes << " random rollouts; empirical profile empty\n";
        return kRuntime;
      }
      auto emp_path = a.out;
      emp_path.replace_filename(a.out.stem().string() + "_empirical.csv");
      std::ofstream csv(emp_path);
      analysis::write_series_csv(csv, emp.profile.horizon_offsets, emp.profile.gae_values);
      series.push_back({"empirical (" + a.task + ", referee " + a.referee + ")", emp.profile.horizon_offsets,
                        emp.profile.gae_values, "#d62728"});
      std::cout << "empirical: " << emp.successes << "/" << emp.episodes << " successful episodes, spearman "
                << fmt("%.3f", analysis::decay_rank_correlation(emp, 5)) << "  -> " << emp_path.string() << '\n';
    } catch (const ConfigError& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return kUsage;
    }
  }
  if (!a.plot.empty()) {
    analysis::write_decay_svg(a.plot, series, "GAE magnitude vs distance to reward");
    std::cout << "plot -> " << a.plot.string() << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"referee-reward PPO toolkit"};
  app.set_version_flag("--version", config::build_version());
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a policy from a config file");
  train->add_option("--config", ta.config, "run config (TOML)")->required();
  train->add_option("--set", ta.sets, "dotted override, e.g. train.iterations=50")->take_all();
  train->add_option("--reward-mode", ta.reward_mode, "ER, ER+LAR, ER+AR2 or ER+AR4");
  train->add_option("--seed", ta.seed, "train.seed");
  train->add_option("--out", ta.out, "run.output_dir");
  train->add_option("--run-id", ta.run_id, "run.run_id");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", ea.checkpoint)->required();
  eval->add_option("--config", ea.config, "run config for the environment");
  eval->add_option("--recipe", ea.recipe, "recipe book when no run config is available");
  eval->add_option("--task", ea.task);
  eval->add_option("--count", ea.count)->capture_default_str();
  eval->add_option("--episodes", ea.episodes)->capture_default_str();
  eval->add_option("--mode", ea.mode, "greedy or sample")->capture_default_str();
  eval->add_option("--seed", ea.seed)->capture_default_str();
  eval->add_option("--out", ea.out, "trace directory");

  AblateArgs aa;
  auto* ablate = app.add_subcommand("ablate", "reward-mode ablation over the configured task ladder");
  ablate->add_option("--config", aa.config)->required();
  ablate->add_option("--seeds", aa.seeds, "seed list, e.g. 1,2,3")->delimiter(',');
  ablate->add_option("--set", aa.sets)->take_all();
  ablate->add_option("--out", aa.out);

  AnalyzeArgs na;
  auto* analyze = app.add_subcommand("analyze", "reward-vanishment profile");
  analyze->add_option("--gamma", na.gamma)->capture_default_str();
  analyze->add_option("--lam", na.lam)->capture_default_str();
  analyze->add_option("--R", na.R)->capture_default_str();
  analyze->add_option("--eps", na.eps, "per-step penalty of the synthetic trajectory")->capture_default_str();
  analyze->add_option("--max-offset", na.max_offset)->capture_default_str();
  analyze->add_option("--out", na.out)->capture_default_str();
  analyze->add_option("--plot", na.plot, "SVG output");
  analyze->add_flag("--empirical", na.empirical, "also fit a critic on random rollouts");
  analyze->add_option("--recipe", na.recipe);
  analyze->add_option("--task", na.task)->capture_default_str();
  analyze->add_option("--horizon", na.horizon);
  analyze->add_option("--episodes", na.episodes)->capture_default_str();
  analyze->add_option("--critic-epochs", na.critic_epochs)->capture_default_str();
  analyze->add_option("--referee", na.referee, "none or oracle")->capture_default_str();
  analyze->add_option("--seed", na.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ea);
    if (*ablate) return cmd_ablate(aa);
    if (*analyze) return cmd_analyze(na);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
