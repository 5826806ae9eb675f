#pragma once

// Run configuration: one TOML document with [env], [train], [referee] and
// [run] sections. Command-line flags are dotted-path overrides applied to the
// document before it is read, and the fully resolved document is what a run
// stores as its snapshot.

#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rrl/policy.hpp"
#include "rrl/recipe_io.hpp"
#include "rrl/referee.hpp"
#include "rrl/referee_llm.hpp"
#include "rrl/trainer.hpp"

namespace rrl::config {

namespace fs = std::filesystem;

// One task column of an ablation.
struct LadderCell {
  std::string task;
  int iterations = 0;
  int rollout_steps = 0;             // 0: use train.rollout_steps
  std::optional<int> horizon;         // replaces env.horizon for this task
  std::vector<std::uint64_t> seeds;  // empty: use run.seeds
};

struct RunConfig {
  // [env]
  fs::path recipe_book;  // absolute after loading
  std::string task;
  int task_count = 1;
  std::optional<int> horizon;
  std::optional<double> step_penalty;
  std::optional<double> terminal_reward;

  // [train]
  trainer::TrainConfig train;
  policy::PolicyConfig policy;

  // [referee]
  std::string backend = "oracle";  // ER+AR4 judge: oracle or llm
  referee::RewardScale scale;
  double flip_prob = 0.5;
  bool cache = true;
  referee::EndpointConfig endpoint;
  fs::path prompt_file;  // empty: built-in template

  // [run]
  fs::path output_dir = "runs";
  std::string run_id;  // empty: timestamp + seed
  int checkpoint_every = 0;
  int eval_episodes = 30;
  std::string eval_mode = "greedy";
  std::uint64_t eval_seed = 12345;
  std::vector<std::uint64_t> seeds;
  std::vector<LadderCell> ladder;

  craftworld::TaskTarget target() const { return {task, task_count}; }
};

namespace detail {

[[noreturn]] inline void fail(const std::string& where, const std::string& what) {
  throw ConfigError(where + ": " + what);
}

inline void check_keys(const toml::table& t, const std::string& where, std::initializer_list<std::string_view> known) {
  for (const auto& [k, v] : t) {
    bool ok = false;
    for (auto n : known) ok = ok || k.str() == n;
    if (!ok) fail(where.empty() ? std::string(k.str()) : where + "." + std::string(k.str()), "unknown key");
  }
}

inline const toml::table* section(const toml::table& doc, std::string_view name) {
  const auto* node = doc.get(name);
  if (!node) return nullptr;
  if (!node->is_table()) fail(std::string(name), "expected a table");
  return node->as_table();
}

template <class T>
std::optional<T> read(const toml::table* t, const std::string& where, std::string_view key) {
  if (!t) return std::nullopt;
  const auto* node = t->get(key);
  if (!node) return std::nullopt;
  const std::string path = where + "." + std::string(key);
  if constexpr (std::is_same_v<T, bool>) {
    if (auto v = node->value_exact<bool>()) return *v;
    fail(path, "expected true or false");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (auto v = node->value_exact<std::string>()) return *v;
    fail(path, "expected a string");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (auto v = node->value<double>()) return *v;
    fail(path, "expected a number");
  } else {
    if (auto v = node->value_exact<std::int64_t>()) return static_cast<T>(*v);
    fail(path, "expected an integer");
  }
}

template <class T>
void assign(T& out, const toml::table* t, const std::string& where, std::string_view key) {
  if (auto v = read<T>(t, where, key)) out = *v;
}

inline std::vector<std::int64_t> read_ints(const toml::table* t, const std::string& where, std::string_view key) {
  std::vector<std::int64_t> out;
  if (!t || !t->get(key)) return out;
  const auto* arr = t->get(key)->as_array();
  const std::string path = where + "." + std::string(key);
  if (!arr) fail(path, "expected an array of integers");
  for (const auto& n : *arr) {
    auto v = n.value_exact<std::int64_t>();
    if (!v) fail(path, "expected an array of integers");
    out.push_back(*v);
  }
  return out;
}

inline std::vector<std::uint64_t> to_seeds(const std::vector<std::int64_t>& xs, const std::string& where) {
  std::vector<std::uint64_t> out;
  for (auto x : xs) {
    if (x < 0) fail(where, "seeds must be non-negative");
    out.push_back(static_cast<std::uint64_t>(x));
  }
  return out;
}

inline fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return fs::weakly_canonical(base / p);
}

}  // namespace detail

// Splits "a.b.c=value"; the value is read as a TOML literal, falling back to a
// bare string (so --set train.reward_mode=ER+AR4 works unquoted).
inline void apply_override(toml::table& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' must look like key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  toml::table parsed;
  try {
    parsed = toml::parse("v = " + text);
  } catch (const toml::parse_error&) {
    parsed = toml::table{{"v", text}};
  }
  toml::table* cur = &doc;
  std::size_t start = 0;
  for (auto dot = path.find('.'); dot != std::string::npos; dot = path.find('.', start)) {
    const std::string key = path.substr(start, dot - start);
    auto* next = cur->get(key);
    if (!next) next = cur->insert_or_assign(key, toml::table{}).first->second.as_table();
    if (!next->is_table()) throw ConfigError("override '" + path + "': '" + key + "' is not a section");
    cur = next->as_table();
    start = dot + 1;
  }
  const std::string leaf = path.substr(start);
  if (leaf.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
  parsed.get("v")->visit([&](auto&& node) { cur->insert_or_assign(leaf, node); });
}

// Relative paths inside the document are taken relative to base_dir.
inline RunConfig parse_run_config(const toml::table& doc, const fs::path& base_dir) {
  using namespace detail;
  check_keys(doc, "", {"env", "train", "referee", "run"});
  RunConfig c;

  const auto* env = section(doc, "env");
  if (!env) fail("env", "section is required");
  check_keys(*env, "env", {"recipe_book", "task", "count", "horizon", "step_penalty", "terminal_reward"});
  const auto book = read<std::string>(env, "env", "recipe_book");
  if (!book) fail("env.recipe_book", "is required");
  c.recipe_book = resolve(base_dir, *book);
  if (!fs::exists(c.recipe_book)) fail("env.recipe_book", "file not found: " + c.recipe_book.string());
  c.task = read<std::string>(env, "env", "task").value_or("");
  assign(c.task_count, env, "env", "count");
  if (c.task_count < 1) fail("env.count", "must be >= 1");
  c.horizon = read<int>(env, "env", "horizon");
  c.step_penalty = read<double>(env, "env", "step_penalty");
  c.terminal_reward = read<double>(env, "env", "terminal_reward");

  const auto* tr = section(doc, "train");
  if (tr)
    check_keys(*tr, "train",
               {"reward_mode", "iterations", "rollout_steps", "num_envs", "update_epochs", "minibatch_size", "gamma",
                "lam", "clip_eps", "value_coef", "entropy_coef", "max_grad_norm", "normalize_advantages", "anneal_lr",
                "bootstrap_truncation", "optimizer", "lr", "adam_beta1", "adam_beta2", "adam_eps", "seed", "hidden", "skill_token_dim",
                "embedding_dim", "similarity", "cosine_scale", "count_scale", "head_gain", "critic_gain"});
  auto& t = c.train;
  if (auto m = read<std::string>(tr, "train", "reward_mode")) {
    try {
      t.reward_mode = trainer::parse_reward_mode(*m);
    } catch (const ConfigError& e) {
      fail("train.reward_mode", e.what());
    }
  }
  assign(t.iterations, tr, "train", "iterations");
  assign(t.rollout_steps, tr, "train", "rollout_steps");
  assign(t.num_envs, tr, "train", "num_envs");
  assign(t.update_epochs, tr, "train", "update_epochs");
  assign(t.minibatch_size, tr, "train", "minibatch_size");
  assign(t.gamma, tr, "train", "gamma");
  assign(t.lam, tr, "train", "lam");
  assign(t.clip_eps, tr, "train", "clip_eps");
  assign(t.value_coef, tr, "train", "value_coef");
  assign(t.entropy_coef, tr, "train", "entropy_coef");
  assign(t.max_grad_norm, tr, "train", "max_grad_norm");
  assign(t.normalize_advantages, tr, "train", "normalize_advantages");
  assign(t.anneal_lr, tr, "train", "anneal_lr");
  assign(t.bootstrap_truncation, tr, "train", "bootstrap_truncation");
  if (auto o = read<std::string>(tr, "train", "optimizer")) {
    if (*o == "adam") t.optimizer.kind = approx::OptimizerConfig::Kind::adam;
    else if (*o == "sgd") t.optimizer.kind = approx::OptimizerConfig::Kind::sgd;
    else fail("train.optimizer", "expected adam or sgd");
  }
  assign(t.optimizer.lr, tr, "train", "lr");
  assign(t.optimizer.beta1, tr, "train", "adam_beta1");
  assign(t.optimizer.beta2, tr, "train", "adam_beta2");
  assign(t.optimizer.eps, tr, "train", "adam_eps");
  if (auto s = read<std::int64_t>(tr, "train", "seed")) {
    if (*s < 0) fail("train.seed", "must be non-negative");
    t.seed = static_cast<std::uint64_t>(*s);
  }
  auto& p = c.policy;
  if (tr && tr->get("hidden")) {
    p.hidden.clear();
    for (auto h : read_ints(tr, "train", "hidden")) {
      if (h < 1) fail("train.hidden", "layer widths must be >= 1");
      p.hidden.push_back(static_cast<std::size_t>(h));
    }
    if (p.hidden.empty()) fail("train.hidden", "needs at least one layer");
  }
  if (auto v = read<std::int64_t>(tr, "train", "skill_token_dim")) {
    if (*v < 0) fail("train.skill_token_dim", "must be >= 0");
    p.skill_token_dim = static_cast<std::size_t>(*v);
  }
  if (auto v = read<std::int64_t>(tr, "train", "embedding_dim")) {
    if (*v < 1) fail("train.embedding_dim", "must be >= 1");
    p.embedding_dim = static_cast<std::size_t>(*v);
  }
  if (auto s = read<std::string>(tr, "train", "similarity")) {
    try {
      p.similarity = policy::parse_similarity(*s);
    } catch (const std::exception& e) {
      fail("train.similarity", e.what());
    }
  }
  assign(p.cosine_scale, tr, "train", "cosine_scale");
  assign(p.count_scale, tr, "train", "count_scale");
  assign(p.head_gain, tr, "train", "head_gain");
  assign(p.critic_gain, tr, "train", "critic_gain");
  try {
    t.validate();
  } catch (const ConfigError& e) {
    fail("train", e.what());
  }

  const auto* rf = section(doc, "referee");
  if (rf)
    check_keys(*rf, "referee",
               {"backend", "r_a", "r_b", "r_c", "r_d", "flip_prob", "cache", "url", "model", "api_key_env",
                "timeout_s", "max_attempts", "backoff_initial_s", "backoff_multiplier", "backoff_max_s",
                "max_in_flight", "prompt_file"});
  assign(c.backend, rf, "referee", "backend");
  if (c.backend != "oracle" && c.backend != "llm") fail("referee.backend", "expected oracle or llm");
  assign(c.scale.a, rf, "referee", "r_a");
  assign(c.scale.b, rf, "referee", "r_b");
  assign(c.scale.c, rf, "referee", "r_c");
  assign(c.scale.d, rf, "referee", "r_d");
  try {
    c.scale.validate();
  } catch (const ConfigError& e) {
    fail("referee", e.what());
  }
  assign(c.flip_prob, rf, "referee", "flip_prob");
  if (!(c.flip_prob >= 0.0 && c.flip_prob <= 1.0)) fail("referee.flip_prob", "must be in [0, 1]");
  assign(c.cache, rf, "referee", "cache");
  auto& ep = c.endpoint;
  assign(ep.url, rf, "referee", "url");
  assign(ep.model, rf, "referee", "model");
  assign(ep.api_key_env, rf, "referee", "api_key_env");
  assign(ep.timeout_s, rf, "referee", "timeout_s");
  assign(ep.max_attempts, rf, "referee", "max_attempts");
  assign(ep.backoff_initial_s, rf, "referee", "backoff_initial_s");
  assign(ep.backoff_multiplier, rf, "referee", "backoff_multiplier");
  assign(ep.backoff_max_s, rf, "referee", "backoff_max_s");
  assign(ep.max_in_flight, rf, "referee", "max_in_flight");
  if (ep.max_attempts < 1) fail("referee.max_attempts", "must be >= 1");
  if (ep.max_in_flight < 1) fail("referee.max_in_flight", "must be >= 1");
  if (!(ep.timeout_s > 0)) fail("referee.timeout_s", "must be > 0");
  if (auto pf = read<std::string>(rf, "referee", "prompt_file")) c.prompt_file = resolve(base_dir, *pf);
  if (c.backend == "llm" && ep.url.empty()) fail("referee.url", "is required for the llm backend");

  const auto* run = section(doc, "run");
  if (run)
    check_keys(*run, "run",
               {"output_dir", "run_id", "checkpoint_every", "eval_episodes", "eval_mode", "eval_seed", "seeds",
                "ladder"});
  if (auto o = read<std::string>(run, "run", "output_dir")) c.output_dir = *o;
  assign(c.run_id, run, "run", "run_id");
  assign(c.checkpoint_every, run, "run", "checkpoint_every");
  if (c.checkpoint_every < 0) fail("run.checkpoint_every", "must be >= 0");
  assign(c.eval_episodes, run, "run", "eval_episodes");
  if (c.eval_episodes < 0) fail("run.eval_episodes", "must be >= 0");
  assign(c.eval_mode, run, "run", "eval_mode");
  if (c.eval_mode != "greedy" && c.eval_mode != "sample") fail("run.eval_mode", "expected greedy or sample");
  if (auto s = read<std::int64_t>(run, "run", "eval_seed")) {
    if (*s < 0) fail("run.eval_seed", "must be non-negative");
    c.eval_seed = static_cast<std::uint64_t>(*s);
  }
  c.seeds = to_seeds(read_ints(run, "run", "seeds"), "run.seeds");
  if (run && run->get("ladder")) {
    const auto* arr = run->get("ladder")->as_array();
    if (!arr) fail("run.ladder", "expected an array of tables");
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const std::string where = "run.ladder[" + std::to_string(i) + "]";
      const auto* cell = (*arr)[i].as_table();
      if (!cell) fail(where, "expected a table");
      check_keys(*cell, where, {"task", "iterations", "rollout_steps", "horizon", "seeds"});
      LadderCell lc;
      const auto task = read<std::string>(cell, where, "task");
      if (!task) fail(where + ".task", "is required");
      lc.task = *task;
      lc.iterations = read<int>(cell, where, "iterations").value_or(t.iterations);
      if (lc.iterations < 1) fail(where + ".iterations", "must be >= 1");
      assign(lc.rollout_steps, cell, where, "rollout_steps");
      if (lc.rollout_steps < 0) fail(where + ".rollout_steps", "must be >= 0");
      lc.horizon = read<int>(cell, where, "horizon");
      lc.seeds = to_seeds(read_ints(cell, where, "seeds"), where + ".seeds");
      c.ladder.push_back(std::move(lc));
    }
  }
  return c;
}

inline toml::table load_document(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  try {
    return toml::parse_file(path.string());
  } catch (const toml::parse_error& e) {
    std::ostringstream ss;
    ss << path.string() << ":" << e.source().begin.line << ": " << e.description();
    throw ConfigError(ss.str());
  }
}

inline RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides = {}) {
  auto doc = load_document(path);
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_run_config(doc, fs::absolute(path).parent_path());
}

// Fully resolved document; every field is written, defaults included.
inline toml::table to_document(const RunConfig& c, const fs::path& recipe_book_as) {
  toml::table env{{"recipe_book", recipe_book_as.generic_string()}, {"task", c.task}, {"count", c.task_count}};
  if (c.horizon) env.insert("horizon", *c.horizon);
  if (c.step_penalty) env.insert("step_penalty", *c.step_penalty);
  if (c.terminal_reward) env.insert("terminal_reward", *c.terminal_reward);

  const auto& t = c.train;
  const auto& p = c.policy;
  toml::array hidden;
  for (auto h : p.hidden) hidden.push_back(static_cast<std::int64_t>(h));
  toml::table train{
      {"reward_mode", trainer::to_string(t.reward_mode)},
      {"iterations", t.iterations},
      {"rollout_steps", t.rollout_steps},
      {"num_envs", t.num_envs},
      {"update_epochs", t.update_epochs},
      {"minibatch_size", t.minibatch_size},
      {"gamma", t.gamma},
      {"lam", t.lam},
      {"clip_eps", t.clip_eps},
      {"value_coef", t.value_coef},
      {"entropy_coef", t.entropy_coef},
      {"max_grad_norm", t.max_grad_norm},
      {"normalize_advantages", t.normalize_advantages},
      {"anneal_lr", t.anneal_lr},
      {"bootstrap_truncation", t.bootstrap_truncation},
      {"optimizer", t.optimizer.kind == approx::OptimizerConfig::Kind::adam ? "adam" : "sgd"},
      {"lr", t.optimizer.lr},
      {"adam_beta1", t.optimizer.beta1},
      {"adam_beta2", t.optimizer.beta2},
      {"adam_eps", t.optimizer.eps},
      {"seed", static_cast<std::int64_t>(t.seed)},
      {"hidden", hidden},
      {"skill_token_dim", static_cast<std::int64_t>(p.skill_token_dim)},
      {"embedding_dim", static_cast<std::int64_t>(p.embedding_dim)},
      {"similarity", policy::to_string(p.similarity)},
      {"cosine_scale", p.cosine_scale},
      {"count_scale", p.count_scale},
      {"head_gain", p.head_gain},
      {"critic_gain", p.critic_gain},
  };

  const auto& ep = c.endpoint;
  toml::table ref{
      {"backend", c.backend},
      {"r_a", c.scale.a},
      {"r_b", c.scale.b},
      {"r_c", c.scale.c},
      {"r_d", c.scale.d},
      {"flip_prob", c.flip_prob},
      {"cache", c.cache},
      {"url", ep.url},
      {"model", ep.model},
      {"api_key_env", ep.api_key_env},
      {"timeout_s", ep.timeout_s},
      {"max_attempts", ep.max_attempts},
      {"backoff_initial_s", ep.backoff_initial_s},
      {"backoff_multiplier", ep.backoff_multiplier},
      {"backoff_max_s", ep.backoff_max_s},
      {"max_in_flight", ep.max_in_flight},
  };
  if (!c.prompt_file.empty()) ref.insert("prompt_file", c.prompt_file.generic_string());

  toml::array seeds;
  for (auto s : c.seeds) seeds.push_back(static_cast<std::int64_t>(s));
  toml::table run{
      {"output_dir", c.output_dir.generic_string()},
      {"checkpoint_every", c.checkpoint_every},
      {"eval_episodes", c.eval_episodes},
      {"eval_mode", c.eval_mode},
      {"eval_seed", static_cast<std::int64_t>(c.eval_seed)},
      {"seeds", seeds},
  };
  if (!c.run_id.empty()) run.insert("run_id", c.run_id);
  if (!c.ladder.empty()) {
    toml::array ladder;
    for (const auto& lc : c.ladder) {
      toml::table cell{{"task", lc.task}, {"iterations", lc.iterations}, {"rollout_steps", lc.rollout_steps}};
      if (lc.horizon) cell.insert("horizon", *lc.horizon);
      if (!lc.seeds.empty()) {
        toml::array s;
        for (auto x : lc.seeds) s.push_back(static_cast<std::int64_t>(x));
        cell.insert("seeds", s);
      }
      ladder.push_back(cell);
    }
    run.insert("ladder", ladder);
  }
  return toml::table{{"env", env}, {"train", train}, {"referee", ref}, {"run", run}};
}

inline std::string to_toml_text(const toml::table& doc) {
  std::ostringstream ss;
  ss << doc << '\n';
  return ss.str();
}

// Environment for the configured recipe book with the [env] overrides applied.
inline craftworld::EnvConfig env_config(const RunConfig& c, std::optional<int> horizon = std::nullopt) {
  auto env = craftworld::load_env_config(c.recipe_book);
  if (c.horizon) env.horizon = *c.horizon;
  if (horizon) env.horizon = *horizon;
  if (c.step_penalty) env.step_penalty = *c.step_penalty;
  if (c.terminal_reward) env.terminal_reward = *c.terminal_reward;
  return env;
}

// Judge for the reward mode; null in ER mode.
inline std::unique_ptr<referee::Referee> make_referee(const RunConfig& c, const craftworld::CraftWorld& world,
                                                      trainer::RewardMode mode) {
  std::unique_ptr<referee::Referee> judge;
  switch (mode) {
    case trainer::RewardMode::er: return nullptr;
    case trainer::RewardMode::er_lar: judge = std::make_unique<referee::NoisyReferee>(world, c.flip_prob, c.scale); break;
    case trainer::RewardMode::er_ar2: judge = std::make_unique<referee::BinaryReferee>(world, c.scale); break;
    case trainer::RewardMode::er_ar4:
      if (c.backend == "llm") {
        auto ep = c.endpoint;
        if (!c.prompt_file.empty()) ep.prompt_template = referee::load_prompt_template(c.prompt_file);
        judge = std::make_unique<referee::LlmReferee>(ep, c.scale);
      } else {
        judge = std::make_unique<referee::OracleReferee>(world, c.scale);
      }
      break;
  }
  // The noisy judge draws from its rng, so memoizing it would change its output.
  if (c.cache && mode != trainer::RewardMode::er_lar)
    judge = std::make_unique<referee::CachingReferee>(std::move(judge));
  return judge;
}


inline policy::ActorCritic make_model(const RunConfig& c, const craftworld::CraftWorld& world) {
  return policy::ActorCritic(c.policy, world.observation_size(), world.skill_ids());
}

inline std::string build_version() {
#ifdef RRL_GIT_DESCRIBE
  return RRL_GIT_DESCRIBE;
#else
  return "unknown";
#endif
}

// runs/<id>/ layout.
struct RunDir {
  fs::path root;
  std::string id;

  fs::path config() const { return root / "config.toml"; }
  fs::path recipe_book() const { return root / "recipe_book.toml"; }
  fs::path metrics() const { return root / "metrics.csv"; }
  fs::path record() const { return root / "record.toml"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path traces() const { return root / "traces"; }
  fs::path checkpoint(int iteration) const {
    char name[32];
    std::snprintf(name, sizeof name, "iter_%06d.ckpt", iteration);
    return checkpoints() / name;
  }
  fs::path final_checkpoint() const { return checkpoints() / "final.ckpt"; }
};

inline std::string timestamp_utc(const char* fmt = "%Y%m%dT%H%M%SZ") {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[64];
  std::strftime(buf, sizeof buf, fmt, &tm);
  return buf;
}

// Creates runs/<id>/ and writes the config snapshot plus a copy of the recipe
// book, so the directory alone is enough to reproduce or evaluate the run.
inline RunDir create_run_dir(const RunConfig& c) {
  std::string id = c.run_id;
  if (id.empty()) id = timestamp_utc() + "-s" + std::to_string(c.train.seed);
  RunDir dir{c.output_dir / id, id};
  if (c.run_id.empty())
    for (int k = 1; fs::exists(dir.root); ++k) dir = RunDir{c.output_dir / (id + "-" + std::to_string(k)), id + "-" + std::to_string(k)};
  else if (fs::exists(dir.root) && !fs::is_empty(dir.root))
    throw ConfigError("run directory " + dir.root.string() + " already exists");
  fs::create_directories(dir.checkpoints());
  fs::create_directories(dir.traces());
  fs::copy_file(c.recipe_book, dir.recipe_book(), fs::copy_options::overwrite_existing);
  RunConfig snap = c;
  snap.run_id.clear();  // the id lives in record.toml; a re-run gets a fresh one
  std::ofstream(dir.config()) << to_toml_text(to_document(snap, "recipe_book.toml"));
  return dir;
}

struct RunRecord {
  std::string run_id;
  std::string version;
  std::string started;
  std::string finished;
  std::string status = "running";  // running, completed, diverged, failed
  std::string task;
  std::string reward_mode;
  std::uint64_t seed = 0;
  int iterations_completed = 0;
  std::string final_checkpoint;  // relative to the run directory
  std::string message;

  toml::table to_table() const {
    return toml::table{{"run_id", run_id},
                       {"version", version},
                       {"started", started},
                       {"finished", finished},
                       {"status", status},
                       {"task", task},
                       {"reward_mode", reward_mode},
                       {"seed", static_cast<std::int64_t>(seed)},
                       {"iterations_completed", iterations_completed},
                       {"final_checkpoint", final_checkpoint},
                       {"message", message}};
  }

  void save(const fs::path& path) const { std::ofstream(path) << to_table() << '\n'; }

  static RunRecord load(const fs::path& path) {
    const auto doc = load_document(path);
    RunRecord r;
    auto str = [&](const char* k) { return doc[k].value_or(std::string{}); };
    r.run_id = str("run_id");
    r.version = str("version");
    r.started = str("started");
    r.finished = str("finished");
    r.status = str("status");
    r.task = str("task");
    r.reward_mode = str("reward_mode");
    r.seed = static_cast<std::uint64_t>(doc["seed"].value_or(std::int64_t{0}));
    r.iterations_completed = doc["iterations_completed"].value_or(0);
    r.final_checkpoint = str("final_checkpoint");
    r.message = str("message");
    return r;
  }
};

}  // namespace rrl::config
