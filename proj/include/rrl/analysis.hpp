#pragma once

// Advantage decay under a sparse terminal reward: the closed form for a
// converged critic, its cross-check against compute_gae, and a measured
// profile from a critic fitted to random-policy rollouts.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rrl/approx.hpp"
#include "rrl/craftworld.hpp"
#include "rrl/referee.hpp"
#include "rrl/stats.hpp"
#include "rrl/trainer.hpp"

namespace rrl::analysis {

using craftworld::CraftWorld;
using craftworld::TaskTarget;
using craftworld::WorldState;

// -eps on every step, R - eps on the last one.
inline std::vector<double> sparse_reward_trajectory(int T, double eps, double R) {
  if (T < 1) throw UsageError("sparse_reward_trajectory needs T >= 1");
  std::vector<double> r(static_cast<std::size_t>(T), -eps);
  r.back() = R - eps;
  return r;
}

inline double converged_critic_gae(int T, int t, double gamma, double lam, double R) {
  if (t < 0 || t >= T) throw UsageError("converged_critic_gae needs 0 <= t < T");
  return std::pow(gamma * lam, T - 1 - t) * R;
}

// Rewards, values and done flags whose TD errors are zero everywhere except
// R on the final step: V_{T-1} = -eps, V_k = gamma V_{k+1} - eps, V_T = 0.
struct TdProfile {
  std::vector<double> rewards;
  std::vector<double> values;  // T + 1 entries
  std::vector<char> dones;
};

inline TdProfile converged_td_profile(int T, double gamma, double eps, double R) {
  TdProfile p;
  p.rewards = sparse_reward_trajectory(T, eps, R);
  p.values.assign(static_cast<std::size_t>(T) + 1, 0.0);
  p.values[static_cast<std::size_t>(T) - 1] = -eps;
  for (int k = T - 2; k >= 0; --k)
    p.values[static_cast<std::size_t>(k)] = gamma * p.values[static_cast<std::size_t>(k) + 1] - eps;
  p.dones.assign(static_cast<std::size_t>(T), 0);
  p.dones.back() = 1;
  return p;
}

struct VanishmentProfile {
  std::vector<int> horizon_offsets;  // T - 1 - t
  std::vector<double> gae_values;
  std::vector<double> closed_form;
};

// Offsets 0..max_offset, GAE taken from compute_gae on the converged profile.
inline VanishmentProfile closed_form_profile(double gamma, double lam, double R, int max_offset, double eps = 0.01) {
  if (!(gamma * lam > 0.0 && gamma * lam < 1.0)) throw ConfigError("gamma * lam must lie in (0, 1)");
  if (max_offset < 0) throw UsageError("max_offset must be >= 0");
  const int T = max_offset + 1;
  const auto p = converged_td_profile(T, gamma, eps, R);
  const auto gae = trainer::compute_gae(p.rewards, p.values, p.dones, gamma, lam);
  VanishmentProfile out;
  for (int k = 0; k <= max_offset; ++k) {
    out.horizon_offsets.push_back(k);
    out.gae_values.push_back(gae.advantages[static_cast<std::size_t>(T - 1 - k)]);
    out.closed_form.push_back(converged_critic_gae(T, T - 1 - k, gamma, lam, R));
  }
  return out;
}

struct EmpiricalConfig {
  int episodes = 400;  // behavior-policy episodes used to fit the critic
  double gamma = 0.99;
  double lam = 0.95;
  int critic_epochs = 200;
  int minibatch_size = 256;
  double lr = 1e-3;
  std::vector<std::size_t> hidden{64, 64};
  double count_scale = 0.25;
  std::uint64_t seed = 0;
};

struct EmpiricalProfile {
  VanishmentProfile profile;           // gae_values = mean |A_t| per offset
  std::vector<int> samples_per_offset;
  int episodes = 0;
  int successes = 0;
  double final_critic_loss = 0.0;

  bool empty() const { return profile.horizon_offsets.empty(); }
};

namespace detail {

struct Step {
  std::vector<double> x;
  double reward = 0.0;
  bool done = false;
  bool terminal = false;
  std::size_t next = 0;  // index of the successor input in the inputs table
};

}  // namespace detail

// Uniform-random behavior policy; only a critic is trained, by semi-gradient
// TD(0) on (V(s) - (r + gamma V(s')))^2 with the target held fixed per epoch.
// Referee rewards, when a judge is given, are added to the environment reward.
inline EmpiricalProfile empirical_vanishment(const CraftWorld& world, const TaskTarget& target,
                                             const EmpiricalConfig& cfg, referee::Referee* judge = nullptr) {
  if (cfg.episodes < 1 || cfg.critic_epochs < 0 || cfg.minibatch_size < 1)
    throw ConfigError("empirical_vanishment: episodes and minibatch_size must be >= 1");
  world.validate_target(target);
  Rng rng(mix_seed(cfg.seed, 1));
  Rng judge_rng(mix_seed(cfg.seed, 2));
  auto encode = [&](const WorldState& s, std::optional<std::size_t> last) {
    const auto obs = world.observe(s, target, last);
    std::vector<double> x = obs.target_onehot;
    for (double c : obs.inventory_vec) x.push_back(c * cfg.count_scale);
    for (double c : obs.nearby_vec) x.push_back(c * cfg.count_scale);
    x.insert(x.end(), obs.last_action_onehot.begin(), obs.last_action_onehot.end());
    return x;
  };

  std::vector<std::vector<double>> inputs;  // every visited state, successors included
  std::vector<detail::Step> steps;
  std::vector<std::pair<std::size_t, std::size_t>> episodes;  // [begin, end) in steps
  std::vector<char> succeeded;
  for (int e = 0; e < cfg.episodes; ++e) {
    WorldState s = world.reset(target, rng());
    std::optional<std::size_t> last;
    const std::size_t begin = steps.size();
    std::vector<referee::RefereeQuery> queries;
    inputs.push_back(encode(s, last));
    while (!s.done) {
      const std::size_t a = uniform_index(rng, world.num_skills());
      const auto res = world.step(s, a, target, rng);
      detail::Step st;
      st.x = inputs.back();
      st.reward = res.reward;
      st.done = res.done;
      st.terminal = res.done && world.satisfied(res.state, target);
      if (judge) queries.push_back({target, s, world.skill(a).id, res.state});
      last = a;
      s = res.state;
      inputs.push_back(encode(s, last));
      st.next = inputs.size() - 1;
      steps.push_back(std::move(st));
    }
    if (judge) {
      const auto verdicts = judge->judge_batch(queries, judge_rng);
      for (std::size_t i = 0; i < verdicts.size(); ++i) steps[begin + i].reward += verdicts[i].reward;
    }
    episodes.emplace_back(begin, steps.size());
    succeeded.push_back(world.satisfied(s, target));
  }

  std::vector<std::size_t> dims{inputs.front().size()};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(1);
  approx::Mlp critic("critic", dims);
  approx::Layout layout;
  critic.declare(layout);
  approx::ParameterSet params(layout);
  critic.initialize(params, std::sqrt(2.0), 1.0, rng);
  approx::OptimizerConfig oc;
  oc.lr = cfg.lr;
  approx::Optimizer opt(oc, layout);
  approx::GradientBuffer grads(layout);
  auto value = [&](const std::vector<double>& x) { return critic.forward(params, x).output[0]; };

  std::vector<std::size_t> order(steps.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> next_values(steps.size());
  approx::Mlp::Cache cache;
  double last_loss = 0.0;
  for (int epoch = 0; epoch < cfg.critic_epochs; ++epoch) {
    for (std::size_t i = 0; i < steps.size(); ++i)
      next_values[i] = steps[i].terminal ? 0.0 : value(inputs[steps[i].next]);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    double loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.minibatch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.minibatch_size));
      const double n = static_cast<double>(end - start);
      grads.zero();
      for (std::size_t k = start; k < end; ++k) {
        const auto& st = steps[order[k]];
        const double v = critic.forward(params, st.x, &cache)[0];
        const double err = v - (st.reward + cfg.gamma * next_values[order[k]]);
        loss += err * err;
        const double g = 2.0 * err / n;
        critic.backward(params, cache, std::span<const double>(&g, 1), grads);
      }
      opt.step(params, grads);
    }
    last_loss = loss / static_cast<double>(steps.size());
  }

  EmpiricalProfile out;
  out.episodes = cfg.episodes;
  out.final_critic_loss = last_loss;
  std::map<int, std::pair<double, int>> by_offset;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    if (!succeeded[e]) continue;
    ++out.successes;
    const auto [b, end] = episodes[e];
    std::vector<double> r, v;
    std::vector<char> d;
    for (std::size_t i = b; i < end; ++i) {
      r.push_back(steps[i].reward);
      v.push_back(value(steps[i].x));
      d.push_back(steps[i].terminal);
    }
    v.push_back(0.0);
    const auto gae = trainer::compute_gae(r, v, d, cfg.gamma, cfg.lam);
    const int T = static_cast<int>(r.size());
    for (int t = 0; t < T; ++t) {
      auto& slot = by_offset[T - 1 - t];
      slot.first += std::abs(gae.advantages[static_cast<std::size_t>(t)]);
      ++slot.second;
    }
  }
  const double R = world.config().terminal_reward;
  for (const auto& [offset, acc] : by_offset) {
    out.profile.horizon_offsets.push_back(offset);
    out.profile.gae_values.push_back(acc.first / acc.second);
    out.profile.closed_form.push_back(std::pow(cfg.gamma * cfg.lam, offset) * R);
    out.samples_per_offset.push_back(acc.second);
  }
  return out;
}

// Rank correlation between offset and measured |A_t|, restricted to offsets
// backed by at least min_samples episodes.
inline double decay_rank_correlation(const EmpiricalProfile& p, int min_samples = 1) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < p.profile.horizon_offsets.size(); ++i) {
    if (p.samples_per_offset[i] < min_samples) continue;
    x.push_back(p.profile.horizon_offsets[i]);
    y.push_back(p.profile.gae_values[i]);
  }
  if (x.size() < 2) return std::nan("");
  return stats::spearman(x, y);
}

// Mean of the measured series over offsets >= from.
inline double mean_beyond(const VanishmentProfile& p, int from) {
  double s = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < p.horizon_offsets.size(); ++i)
    if (p.horizon_offsets[i] >= from) {
      s += p.gae_values[i];
      ++n;
    }
  return n ? s / n : std::nan("");
}

inline void write_series_csv(std::ostream& out, std::span<const int> offsets, std::span<const double> values) {
  if (offsets.size() != values.size()) throw UsageError("series length mismatch");
  out << "offset,A_t\n";
  char buf[64];
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%d,%.17g\n", offsets[i], values[i]);
    out << buf;
  }
}

struct PlotSeries {
  std::string label;
  std::vector<int> offsets;
  std::vector<double> values;
  std::string colour = "#1f77b4";
};

// Log-scale decay plot as a standalone SVG.
inline void write_decay_svg(const std::filesystem::path& path, std::span<const PlotSeries> series,
                            const std::string& title = "advantage vs offset") {
  const double W = 640, H = 400, L = 70, Rm = 20, Tm = 40, B = 50;
  int max_x = 1;
  double lo = 1e300, hi = -1e300;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      max_x = std::max(max_x, s.offsets[i]);
      if (s.values[i] > 0) {
        lo = std::min(lo, std::log10(s.values[i]));
        hi = std::max(hi, std::log10(s.values[i]));
      }
    }
  if (lo > hi) lo = -1, hi = 0;
  lo = std::floor(lo), hi = std::ceil(hi);
  if (hi <= lo) hi = lo + 1;
  auto px = [&](double x) { return L + (W - L - Rm) * x / max_x; };
  auto py = [&](double v) { return Tm + (H - Tm - B) * (hi - std::log10(v)) / (hi - lo); };
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[256];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\">" << title
      << "</text>\n";
  for (int e = static_cast<int>(lo); e <= static_cast<int>(hi); ++e) {
    const double y = py(std::pow(10.0, e));
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"#ddd\"/><text x=\"%g\" y=\"%g\" "
                  "font-size=\"11\" text-anchor=\"end\" font-family=\"sans-serif\">1e%d</text>\n",
                  L, y, W - Rm, y, L - 6, y + 4, e);
    out << buf;
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">offset "
                "T-1-t (0..%d)</text>\n",
                (L + W - Rm) / 2, H - 15, max_x);
  out << buf;
  double legend_y = Tm + 10;
  for (const auto& s : series) {
    out << "<polyline fill=\"none\" stroke=\"" << s.colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.values.size(); ++i)
      if (s.values[i] > 0) {
        std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(s.offsets[i]), py(s.values[i]));
        out << buf;
      }
    out << "\"/>\n";
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%g\" y=\"%g\" fill=\"%s\" font-size=\"12\" font-family=\"sans-serif\">%s</text>\n",
                  W - Rm - 200, legend_y, s.colour.c_str(), s.label.c_str());
    out << buf;
    legend_y += 16;
  }
  out << "</svg>\n";
}

}  // namespace rrl::analysis
