#pragma once

// PPO with an optional per-step referee bonus added to the environment reward.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rrl/approx.hpp"
#include "rrl/common.hpp"
#include "rrl/craftworld.hpp"
#include "rrl/policy.hpp"
#include "rrl/referee.hpp"
#include "rrl/stats.hpp"

namespace rrl::trainer {

using approx::GradientBuffer;
using approx::ParameterSet;
using craftworld::CraftWorld;
using craftworld::TaskTarget;
using craftworld::WorldState;
using policy::ActorCritic;

enum class RewardMode { er, er_lar, er_ar2, er_ar4 };

inline std::string to_string(RewardMode m) {
  switch (m) {
    case RewardMode::er: return "ER";
    case RewardMode::er_lar: return "ER+LAR";
    case RewardMode::er_ar2: return "ER+AR2";
    case RewardMode::er_ar4: return "ER+AR4";
  }
  return "?";
}

inline RewardMode parse_reward_mode(const std::string& s) {
  for (auto m : {RewardMode::er, RewardMode::er_lar, RewardMode::er_ar2, RewardMode::er_ar4})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown reward mode '" + s + "' (expected ER, ER+LAR, ER+AR2 or ER+AR4)");
}

struct TrainConfig {
  RewardMode reward_mode = RewardMode::er;
  int iterations = 100;
  int rollout_steps = 2048;  // per iteration, summed over envs
  int num_envs = 8;
  int update_epochs = 4;
  int minibatch_size = 64;
  double gamma = 0.99;
  double lam = 0.95;
  double clip_eps = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double max_grad_norm = 0.5;  // <= 0 disables clipping
  bool normalize_advantages = true;
  bool anneal_lr = false;
  bool bootstrap_truncation = true;  // false: a horizon cut ends the return like a terminal state
  approx::OptimizerConfig optimizer{};
  std::uint64_t seed = 0;

  void validate() const {
    if (iterations < 1) throw ConfigError("iterations must be >= 1");
    if (num_envs < 1) throw ConfigError("num_envs must be >= 1");
    if (rollout_steps < num_envs || rollout_steps % num_envs != 0)
      throw ConfigError("rollout_steps must be a positive multiple of num_envs");
    if (update_epochs < 1) throw ConfigError("update_epochs must be >= 1");
    if (minibatch_size < 1) throw ConfigError("minibatch_size must be >= 1");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in (0, 1]");
    if (!(lam >= 0.0 && lam <= 1.0)) throw ConfigError("lam must be in [0, 1]");
    if (!(clip_eps > 0.0)) throw ConfigError("clip_eps must be > 0");
    if (!(optimizer.lr > 0.0)) throw ConfigError("learning rate must be > 0");
  }
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;  // advantages + values, the critic targets
};

// values has one more entry than rewards: the bootstrap value after the last
// step (ignored when that step is terminal).
inline GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                             std::span<const char> dones, double gamma, double lam) {
  const std::size_t n = rewards.size();
  if (values.size() != n + 1 || dones.size() != n)
    throw UsageError("compute_gae: need |values| = |rewards| + 1 and |dones| = |rewards|");
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double live = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * values[t + 1] * live - values[t];
    next = delta + gamma * lam * live * next;
    out.advantages[t] = next;
    out.returns[t] = next + values[t];
  }
  return out;
}

// Mean squared one-step TD error: (r_t + gamma V(s_{t+1}) - V(s_t))^2.
inline double critic_loss(std::span<const double> values, std::span<const double> rewards,
                          std::span<const double> next_values, double gamma) {
  if (values.size() != rewards.size() || values.size() != next_values.size() || values.empty())
    throw UsageError("critic_loss: series must be non-empty and equally long");
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double e = rewards[i] + gamma * next_values[i] - values[i];
    s += e * e;
  }
  return s / static_cast<double>(values.size());
}

inline double critic_loss(std::span<const double> values, std::span<const double> targets) {
  if (values.size() != targets.size() || values.empty())
    throw UsageError("critic_loss: series must be non-empty and equally long");
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) s += (values[i] - targets[i]) * (values[i] - targets[i]);
  return s / static_cast<double>(values.size());
}

// Negated clipped surrogate, averaged; lower is better.
inline double clipped_actor_loss(std::span<const double> log_probs, std::span<const double> old_log_probs,
                                 std::span<const double> advantages, double clip_eps) {
  if (log_probs.size() != old_log_probs.size() || log_probs.size() != advantages.size() || log_probs.empty())
    throw UsageError("clipped_actor_loss: series must be non-empty and equally long");
  double s = 0.0;
  for (std::size_t i = 0; i < log_probs.size(); ++i) {
    const double ratio = std::exp(log_probs[i] - old_log_probs[i]);
    const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    s += std::min(ratio * advantages[i], clipped * advantages[i]);
  }
  return -s / static_cast<double>(log_probs.size());
}

struct Transition {
  WorldState state;
  std::vector<double> features;
  std::size_t action = 0;
  WorldState next_state;
  double env_reward = 0.0;
  double aux_reward = 0.0;
  double log_prob = 0.0;
  double value = 0.0;
  bool done = false;      // episode ended here
  bool terminal = false;  // no bootstrap past this step: target reached, or a horizon cut when bootstrap_truncation is off
  double truncation_value = 0.0;  // V(next_state) when done && !terminal
  bool referee_fallback = false;

  double reward() const { return env_reward + aux_reward; }
};

// Worker-major transitions; each worker's segment is contiguous.
struct RolloutBuffer {
  std::vector<Transition> transitions;
  std::vector<std::size_t> segment_begin;
  std::vector<double> bootstrap_values;  // V(s) after each segment's last step
  std::vector<double> advantages;
  std::vector<double> returns;

  std::size_t size() const noexcept { return transitions.size(); }
};

// GAE per episode piece: terminal ends contribute 0, horizon cuts and the
// rollout window end bootstrap with the critic.
inline void compute_advantages(RolloutBuffer& buf, double gamma, double lam) {
  buf.advantages.assign(buf.size(), 0.0);
  buf.returns.assign(buf.size(), 0.0);
  std::vector<double> r, v;
  std::vector<char> d;
  auto flush = [&](std::size_t begin, double tail) {
    v.push_back(tail);
    d.assign(r.size(), 0);
    const auto g = compute_gae(r, v, d, gamma, lam);
    std::copy(g.advantages.begin(), g.advantages.end(), buf.advantages.begin() + static_cast<std::ptrdiff_t>(begin));
    std::copy(g.returns.begin(), g.returns.end(), buf.returns.begin() + static_cast<std::ptrdiff_t>(begin));
    r.clear();
    v.clear();
  };
  for (std::size_t s = 0; s < buf.segment_begin.size(); ++s) {
    const std::size_t b = buf.segment_begin[s];
    const std::size_t e = s + 1 < buf.segment_begin.size() ? buf.segment_begin[s + 1] : buf.size();
    std::size_t piece = b;
    for (std::size_t i = b; i < e; ++i) {
      const auto& tr = buf.transitions[i];
      r.push_back(tr.reward());
      v.push_back(tr.value);
      if (tr.done) {
        flush(piece, tr.terminal ? 0.0 : tr.truncation_value);
        piece = i + 1;
      }
    }
    if (piece < e) flush(piece, buf.bootstrap_values[s]);
  }
}

struct Sample {
  std::span<const double> features;
  std::size_t action = 0;
  double old_log_prob = 0.0;
  double advantage = 0.0;
  double value_target = 0.0;
};

struct LossParts {
  double total = 0.0;
  double actor = 0.0;
  double critic = 0.0;  // mean squared error, before value_coef
  double entropy = 0.0;
};

// actor + value_coef * critic - entropy_coef * entropy over one minibatch.
// Gradients are accumulated into grads when given.
inline LossParts ppo_loss(const ActorCritic& model, const ParameterSet& params, std::span<const Sample> batch,
                          const TrainConfig& cfg, GradientBuffer* grads = nullptr) {
  if (batch.empty()) throw UsageError("ppo_loss on an empty minibatch");
  const double n = static_cast<double>(batch.size());
  std::vector<double> adv(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) adv[i] = batch[i].advantage;
  if (cfg.normalize_advantages && batch.size() > 1) {
    const double m = stats::mean(adv), sd = stats::stddev(adv);
    for (double& a : adv) a = (a - m) / (sd + 1e-8);
  }
  LossParts parts;
  ActorCritic::Cache cache;
  std::vector<double> dlogits(model.num_skills());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sample& s = batch[i];
    const auto out = model.forward(params, s.features, grads ? &cache : nullptr);
    const double lp = out.log_probs.at(s.action);
    const double ratio = std::exp(lp - s.old_log_prob);
    const double clipped = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    const double unclipped_obj = ratio * adv[i], clipped_obj = clipped * adv[i];
    parts.actor -= std::min(unclipped_obj, clipped_obj) / n;
    const double h = policy::categorical_entropy(out.log_probs);
    parts.entropy += h / n;
    const double err = out.value - s.value_target;
    parts.critic += err * err / n;
    if (!grads) continue;
    // d actor / d log pi(a): the unclipped branch carries the gradient
    const double dlp = unclipped_obj <= clipped_obj ? -ratio * adv[i] / n : 0.0;
    for (std::size_t k = 0; k < dlogits.size(); ++k) {
      const double p = std::exp(out.log_probs[k]);
      double g = dlp * ((k == s.action ? 1.0 : 0.0) - p);
      g += cfg.entropy_coef * p * (out.log_probs[k] + h) / n;
      dlogits[k] = g;
    }
    model.backward(params, cache, dlogits, cfg.value_coef * 2.0 * err / n, *grads);
  }
  parts.total = parts.actor + cfg.value_coef * parts.critic - cfg.entropy_coef * parts.entropy;
  return parts;
}

struct IterationMetrics {
  int iteration = 0;
  long long env_steps = 0;
  double mean_return = std::nan("");  // environment return of episodes finished this iteration
  double success_rate = std::nan("");
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double entropy = 0.0;
  double mean_abs_advantage = 0.0;
  long long referee_query_count = 0;
  long long referee_fallbacks = 0;
  int episodes = 0;
};

inline constexpr std::string_view kMetricsHeader =
    "iteration,env_steps,mean_return,success_rate,actor_loss,critic_loss,entropy,mean_abs_advantage,"
    "referee_query_count";

inline void write_metrics_row(std::ostream& out, const IterationMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d,%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%lld\n", m.iteration, m.env_steps,
                m.mean_return, m.success_rate, m.actor_loss, m.critic_loss, m.entropy, m.mean_abs_advantage,
                m.referee_query_count);
  out << buf;
}

inline void write_metrics_csv(std::ostream& out, std::span<const IterationMetrics> rows) {
  out << kMetricsHeader << '\n';
  for (const auto& m : rows) write_metrics_row(out, m);
}

struct TrainResult {
  ParameterSet params;
  std::vector<IterationMetrics> metrics;
};

using IterationCallback = std::function<void(const IterationMetrics&, const ParameterSet&)>;

namespace detail {

struct Worker {
  Rng env_rng;
  Rng policy_rng;
  WorldState state;
  std::optional<std::size_t> last_action;
  double episode_return = 0.0;
};

inline std::string dump_minibatch(int iteration, int epoch, std::span<const Sample> batch, const LossParts& p) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "iteration=" << iteration << " epoch=" << epoch << " actor=" << p.actor << " critic=" << p.critic
     << " entropy=" << p.entropy << '\n';
  ss << "action,old_log_prob,advantage,value_target\n";
  for (const auto& s : batch)
    ss << s.action << ',' << s.old_log_prob << ',' << s.advantage << ',' << s.value_target << '\n';
  return ss.str();
}

}  // namespace detail

// referee may be null only in ER mode; in ER mode it is never consulted.
inline TrainResult train(const CraftWorld& world, const TaskTarget& target, const ActorCritic& model,
                         ParameterSet params, referee::Referee* judge, const TrainConfig& cfg,
                         const IterationCallback& on_iteration = {}) {
  cfg.validate();
  world.validate_target(target);
  if (model.skills() != world.skill_ids()) throw ConfigError("policy skills do not match the recipe book");
  if (model.observation_size() != world.observation_size())
    throw ConfigError("policy observation size does not match the environment");
  const bool use_referee = cfg.reward_mode != RewardMode::er;
  if (use_referee && !judge) throw ConfigError(to_string(cfg.reward_mode) + " needs a referee");

  std::vector<detail::Worker> workers;
  for (int w = 0; w < cfg.num_envs; ++w) {
    detail::Worker wk{Rng(mix_seed(cfg.seed, 1000 + w)), Rng(mix_seed(cfg.seed, 2000 + w)), {}, {}, 0.0};
    wk.state = world.reset(target, wk.env_rng());
    workers.push_back(std::move(wk));
  }
  Rng referee_rng(mix_seed(cfg.seed, 3000));
  Rng shuffle_rng(mix_seed(cfg.seed, 4000));
  approx::Optimizer optimizer(cfg.optimizer, model.layout());
  GradientBuffer grads(model.layout());

  TrainResult result;
  long long env_steps = 0;
  const int steps_per_env = cfg.rollout_steps / cfg.num_envs;

  for (int it = 1; it <= cfg.iterations; ++it) {
    if (cfg.anneal_lr)
      optimizer.set_lr(cfg.optimizer.lr * (1.0 - static_cast<double>(it - 1) / cfg.iterations));
    IterationMetrics m;
    m.iteration = it;
    RolloutBuffer buf;
    std::vector<double> finished_returns;
    int finished_successes = 0;

    for (auto& wk : workers) {
      buf.segment_begin.push_back(buf.size());
      for (int t = 0; t < steps_per_env; ++t) {
        Transition tr;
        tr.state = wk.state;
        tr.features = model.encode(world.observe(wk.state, target, wk.last_action));
        const auto act = model.act(params, tr.features, wk.policy_rng, policy::ActMode::sample);
        tr.action = act.action;
        tr.log_prob = act.log_prob;
        tr.value = act.value;
        const auto step = world.step(wk.state, act.action, target, wk.env_rng);
        tr.next_state = step.state;
        tr.env_reward = step.reward;
        tr.done = step.done;
        const bool success = step.done && world.satisfied(step.state, target);
        tr.terminal = success || (step.done && !cfg.bootstrap_truncation);
        if (step.done && !tr.terminal)
          tr.truncation_value =
              model.forward(params, model.encode(world.observe(step.state, target, act.action))).value;
        wk.episode_return += step.reward;
        wk.last_action = act.action;
        if (step.done) {
          finished_returns.push_back(wk.episode_return);
          if (success) ++finished_successes;
          wk.episode_return = 0.0;
          wk.last_action.reset();
          wk.state = world.reset(target, wk.env_rng());
        } else {
          wk.state = step.state;
        }
        buf.transitions.push_back(std::move(tr));
      }
      buf.bootstrap_values.push_back(
          model.forward(params, model.encode(world.observe(wk.state, target, wk.last_action))).value);
    }
    env_steps += static_cast<long long>(buf.size());

    if (use_referee) {
      std::vector<referee::RefereeQuery> queries;
      queries.reserve(buf.size());
      for (const auto& tr : buf.transitions)
        queries.push_back({target, tr.state, world.skill(tr.action).id, tr.next_state});
      const auto verdicts = judge->judge_batch(queries, referee_rng);
      for (std::size_t i = 0; i < verdicts.size(); ++i) {
        buf.transitions[i].aux_reward = verdicts[i].reward;
        buf.transitions[i].referee_fallback = verdicts[i].fallback;
        m.referee_fallbacks += verdicts[i].fallback;
      }
      m.referee_query_count = static_cast<long long>(queries.size());
    }

    compute_advantages(buf, cfg.gamma, cfg.lam);
    double abs_adv = 0.0;
    for (double a : buf.advantages) abs_adv += std::abs(a);
    m.mean_abs_advantage = abs_adv / static_cast<double>(buf.size());

    std::vector<Sample> samples(buf.size());
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const auto& tr = buf.transitions[i];
      samples[i] = {tr.features, tr.action, tr.log_prob, buf.advantages[i], buf.returns[i]};
    }
    std::vector<std::size_t> order(buf.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<Sample> batch;
    int updates = 0;
    for (int epoch = 0; epoch < cfg.update_epochs; ++epoch) {
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.minibatch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.minibatch_size));
        batch.clear();
        for (std::size_t k = start; k < end; ++k) batch.push_back(samples[order[k]]);
        grads.zero();
        const LossParts parts = ppo_loss(model, params, batch, cfg, &grads);
        const double gnorm = grads.norm();
        if (!std::isfinite(parts.total) || !std::isfinite(gnorm))
          throw TrainingDiverged("non-finite loss or gradient at iteration " + std::to_string(it),
                                 detail::dump_minibatch(it, epoch, batch, parts));
        if (cfg.max_grad_norm > 0.0 && gnorm > cfg.max_grad_norm) grads.scale(cfg.max_grad_norm / gnorm);
        optimizer.step(params, grads);
        m.actor_loss += parts.actor;
        m.critic_loss += parts.critic;
        m.entropy += parts.entropy;
        ++updates;
      }
    }
    m.actor_loss /= updates;
    m.critic_loss /= updates;
    m.entropy /= updates;
    m.env_steps = env_steps;
    m.episodes = static_cast<int>(finished_returns.size());
    if (!finished_returns.empty()) {
      m.mean_return = stats::mean(finished_returns);
      m.success_rate = static_cast<double>(finished_successes) / static_cast<double>(finished_returns.size());
    }
    result.metrics.push_back(m);
    if (on_iteration) on_iteration(m, params);
  }
  result.params = std::move(params);
  return result;
}

struct EvalReport {
  int episodes = 0;
  int successes = 0;
  double success_rate = 0.0;
  stats::Interval ci;
  double mean_return = 0.0;
  double mean_length = 0.0;
  std::vector<std::vector<craftworld::TraceRow>> traces;  // filled when requested
};

// Fresh episodes with the given action rule; episode e uses seeds derived from (seed, e).
inline EvalReport evaluate_policy(const CraftWorld& world, const TaskTarget& target, const ActorCritic& model,
                                  const ParameterSet& params, int episodes, std::uint64_t seed,
                                  policy::ActMode mode = policy::ActMode::greedy, bool keep_traces = false) {
  if (episodes < 1) throw UsageError("evaluation needs at least one episode");
  EvalReport rep;
  rep.episodes = episodes;
  double total_return = 0.0, total_length = 0.0;
  for (int e = 0; e < episodes; ++e) {
    Rng env_rng(mix_seed(seed, 2 * static_cast<std::uint64_t>(e)));
    Rng policy_rng(mix_seed(seed, 2 * static_cast<std::uint64_t>(e) + 1));
    WorldState s = world.reset(target, env_rng());
    std::optional<std::size_t> last;
    std::vector<craftworld::TraceRow> trace;
    double ret = 0.0;
    while (!s.done) {
      const auto act = model.act(params, world.observe(s, target, last), policy_rng, mode);
      const auto step = world.step(s, act.action, target, env_rng);
      ret += step.reward;
      if (keep_traces)
        trace.push_back({s.steps_elapsed, world.skill(act.action).id, step.reward,
                         craftworld::inventory_diff(s.inventory, step.state.inventory)});
      last = act.action;
      s = step.state;
    }
    if (world.satisfied(s, target)) ++rep.successes;
    total_return += ret;
    total_length += s.steps_elapsed;
    if (keep_traces) rep.traces.push_back(std::move(trace));
  }
  rep.success_rate = static_cast<double>(rep.successes) / episodes;
  rep.ci = stats::wilson_interval(rep.successes, episodes);
  rep.mean_return = total_return / episodes;
  rep.mean_length = total_length / episodes;
  return rep;
}

}  // namespace rrl::trainer
