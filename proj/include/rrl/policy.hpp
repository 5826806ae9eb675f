#pragma once

// Actor-critic over the crafting observation. A trainable skill token is
// appended to the observation, a shared tanh body transforms it, and its
// output feeds two heads: the action head emits a query vector that is matched
// against a learned per-skill embedding table (logit_i = similarity(h, e_i)),
// the critic head emits the state value.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rrl/approx.hpp"
#include "rrl/common.hpp"
#include "rrl/craftworld.hpp"

namespace rrl::policy {

using approx::GradientBuffer;
using approx::Layout;
using approx::ParameterSet;
using craftworld::Observation;
using craftworld::SkillId;

enum class Similarity { dot, cosine };
enum class ActMode { sample, greedy };

inline std::string to_string(Similarity s) { return s == Similarity::dot ? "dot" : "cosine"; }
inline Similarity parse_similarity(const std::string& s) {
  if (s == "dot") return Similarity::dot;
  if (s == "cosine") return Similarity::cosine;
  throw ConfigError("unknown similarity '" + s + "' (expected dot or cosine)");
}

struct PolicyConfig {
  std::vector<std::size_t> hidden{128, 128};
  std::size_t skill_token_dim = 8;
  std::size_t embedding_dim = 32;
  Similarity similarity = Similarity::dot;
  double cosine_scale = 5.0;  // logit range under cosine matching
  double count_scale = 0.25;  // inventory / nearby counts are multiplied by this
  double hidden_gain = std::sqrt(2.0);
  double head_gain = 0.01;  // action head
  double critic_gain = 1.0;
};

struct PolicyOutput {
  std::vector<double> action_logits;  // one per skill, in skill order
  double value = 0.0;
  std::vector<double> log_probs;      // log softmax of the logits, same order
};

struct ActResult {
  std::size_t action = 0;
  SkillId skill;
  double log_prob = 0.0;
  double value = 0.0;
};

struct EvalResult {
  std::vector<double> log_probs;
  std::vector<double> values;
  std::vector<double> entropies;
};

inline std::vector<double> log_softmax(std::span<const double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - peak);
  const double log_z = peak + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_z;
  return out;
}

inline double categorical_entropy(std::span<const double> log_probs) {
  double h = 0.0;
  for (double lp : log_probs) h -= std::exp(lp) * lp;
  return h;
}

// Lowest index wins ties; skills are kept in lexicographic id order.
inline std::size_t argmax(std::span<const double> xs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (xs[i] > xs[best]) best = i;
  return best;
}

class ActorCritic {
 public:
  struct Cache {
    approx::Mlp::Cache body, action_head, critic_head;
    std::vector<double> query;  // action head output h
    PolicyOutput out;
  };

  ActorCritic(PolicyConfig config, std::size_t observation_size, std::vector<SkillId> skills)
      : config_(std::move(config)), observation_size_(observation_size), skills_(std::move(skills)) {
    if (skills_.empty()) throw ConfigError("policy needs at least one skill");
    if (!std::is_sorted(skills_.begin(), skills_.end()))
      throw ConfigError("policy skills must be in lexicographic order");
    if (config_.hidden.empty()) throw ConfigError("policy needs at least one hidden layer");
    std::vector<std::size_t> dims{observation_size_ + config_.skill_token_dim};
    dims.insert(dims.end(), config_.hidden.begin(), config_.hidden.end());
    body_ = approx::Mlp("body", dims, approx::Activation::tanh, approx::Activation::tanh);
    const std::size_t features = config_.hidden.back();
    action_head_ = approx::Mlp("action_head", {features, config_.embedding_dim});
    critic_head_ = approx::Mlp("critic_head", {features, 1});
    body_.declare(layout_);
    if (config_.skill_token_dim) layout_.add("skill_token", {config_.skill_token_dim});
    action_head_.declare(layout_);
    critic_head_.declare(layout_);
    layout_.add("skill_embeddings", {skills_.size(), config_.embedding_dim});
  }

  const PolicyConfig& config() const noexcept { return config_; }
  const Layout& layout() const noexcept { return layout_; }
  const std::vector<SkillId>& skills() const noexcept { return skills_; }
  std::size_t num_skills() const noexcept { return skills_.size(); }
  std::size_t observation_size() const noexcept { return observation_size_; }

  std::size_t skill_index(const SkillId& id) const {
    auto it = std::lower_bound(skills_.begin(), skills_.end(), id);
    if (it == skills_.end() || *it != id) throw UsageError("unknown action '" + id + "'");
    return static_cast<std::size_t>(it - skills_.begin());
  }

  ParameterSet initial_parameters(std::uint64_t seed) const {
    ParameterSet params(layout_);
    Rng rng(seed);
    body_.initialize(params, config_.hidden_gain, config_.hidden_gain, rng);
    action_head_.initialize(params, config_.head_gain, config_.head_gain, rng);
    critic_head_.initialize(params, config_.critic_gain, config_.critic_gain, rng);
    if (config_.skill_token_dim)
      for (double& v : params.mutable_block("skill_token")) v = 0.5 * standard_normal(rng);
    const double scale = 1.0 / std::sqrt(static_cast<double>(config_.embedding_dim));
    for (double& v : params.mutable_block("skill_embeddings")) v = scale * standard_normal(rng);
    return params;
  }

  // Network input for an observation: one-hot parts as is, counts scaled.
  std::vector<double> encode(const Observation& obs) const {
    if (obs.size() != observation_size_)
      throw UsageError("observation has " + std::to_string(obs.size()) + " entries, policy expects " +
                       std::to_string(observation_size_));
    std::vector<double> x;
    x.reserve(observation_size_);
    x.insert(x.end(), obs.target_onehot.begin(), obs.target_onehot.end());
    for (double c : obs.inventory_vec) x.push_back(c * config_.count_scale);
    for (double c : obs.nearby_vec) x.push_back(c * config_.count_scale);
    x.insert(x.end(), obs.last_action_onehot.begin(), obs.last_action_onehot.end());
    return x;
  }

  PolicyOutput forward(const ParameterSet& params, std::span<const double> features,
                       Cache* cache = nullptr) const {
    if (features.size() != observation_size_)
      throw UsageError("policy input has " + std::to_string(features.size()) + " entries, expected " +
                       std::to_string(observation_size_));
    std::vector<double> input(features.begin(), features.end());
    if (config_.skill_token_dim) {
      const auto token = params.block("skill_token");
      input.insert(input.end(), token.begin(), token.end());
    }
    Cache local;
    Cache& c = cache ? *cache : local;
    const auto z = body_.forward(params, input, &c.body);
    c.query = action_head_.forward(params, z, &c.action_head);
    const auto value = critic_head_.forward(params, z, &c.critic_head);

    const auto table = params.block("skill_embeddings");
    const std::size_t d = config_.embedding_dim;
    PolicyOutput out;
    out.action_logits.resize(skills_.size());
    const double h_norm = norm(c.query);
    for (std::size_t i = 0; i < skills_.size(); ++i) {
      const auto e = table.subspan(i * d, d);
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += c.query[k] * e[k];
      if (config_.similarity == Similarity::dot) {
        out.action_logits[i] = dot;
      } else {
        const double denom = std::max(h_norm * norm(e), kTiny);
        out.action_logits[i] = config_.cosine_scale * dot / denom;
      }
    }
    out.value = value[0];
    out.log_probs = log_softmax(out.action_logits);
    c.out = out;
    return out;
  }

  PolicyOutput forward(const ParameterSet& params, const Observation& obs) const {
    return forward(params, encode(obs));
  }

  ActResult act(const ParameterSet& params, std::span<const double> features, Rng& rng,
                ActMode mode) const {
    const PolicyOutput out = forward(params, features);
    ActResult r;
    if (mode == ActMode::greedy) {
      r.action = argmax(out.action_logits);
    } else {
      const double u = uniform01(rng);
      double cum = 0.0;
      r.action = skills_.size() - 1;
      for (std::size_t i = 0; i < skills_.size(); ++i) {
        cum += std::exp(out.log_probs[i]);
        if (u < cum) {
          r.action = i;
          break;
        }
      }
    }
    r.skill = skills_[r.action];
    r.log_prob = out.log_probs[r.action];
    r.value = out.value;
    return r;
  }

  ActResult act(const ParameterSet& params, const Observation& obs, Rng& rng, ActMode mode) const {
    return act(params, encode(obs), rng, mode);
  }

  EvalResult evaluate(const ParameterSet& params, std::span<const Observation> observations,
                      std::span<const SkillId> actions) const {
    if (observations.size() != actions.size()) throw UsageError("evaluate: batch sizes differ");
    EvalResult r;
    for (std::size_t i = 0; i < observations.size(); ++i) {
      const std::size_t a = skill_index(actions[i]);
      const PolicyOutput out = forward(params, encode(observations[i]));
      r.log_probs.push_back(out.log_probs[a]);
      r.values.push_back(out.value);
      r.entropies.push_back(categorical_entropy(out.log_probs));
    }
    return r;
  }

  // Accumulates the parameter gradient of (logits . logit_grad + value * value_grad).
  void backward(const ParameterSet& params, const Cache& cache, std::span<const double> logit_grad,
                double value_grad, GradientBuffer& grads) const {
    if (logit_grad.size() != skills_.size()) throw UsageError("logit gradient has wrong size");
    const std::size_t d = config_.embedding_dim;
    const auto table = params.block("skill_embeddings");
    const std::size_t table_offset = layout_.block("skill_embeddings").offset;
    auto g = grads.values();
    std::vector<double> dquery(d, 0.0);
    const auto& h = cache.query;
    if (config_.similarity == Similarity::dot) {
      for (std::size_t i = 0; i < skills_.size(); ++i) {
        const double gi = logit_grad[i];
        if (gi == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) {
          dquery[k] += gi * table[i * d + k];
          g[table_offset + i * d + k] += gi * h[k];
        }
      }
    } else {
      const double h_norm = std::max(norm(h), kTiny);
      for (std::size_t i = 0; i < skills_.size(); ++i) {
        const double gi = logit_grad[i] * config_.cosine_scale;
        if (gi == 0.0) continue;
        const auto e = table.subspan(i * d, d);
        const double e_norm = std::max(norm(e), kTiny);
        const double cos = cache.out.action_logits[i] / config_.cosine_scale;
        for (std::size_t k = 0; k < d; ++k) {
          const double u = h[k] / h_norm, v = e[k] / e_norm;
          dquery[k] += gi * (v - cos * u) / h_norm;
          g[table_offset + i * d + k] += gi * (u - cos * v) / e_norm;
        }
      }
    }
    auto dz = action_head_.backward(params, cache.action_head, dquery, grads);
    const double dv[1] = {value_grad};
    const auto dz_critic = critic_head_.backward(params, cache.critic_head, dv, grads);
    for (std::size_t k = 0; k < dz.size(); ++k) dz[k] += dz_critic[k];
    const auto dinput = body_.backward(params, cache.body, dz, grads);
    if (config_.skill_token_dim) {
      const std::size_t token_offset = layout_.block("skill_token").offset;
      for (std::size_t k = 0; k < config_.skill_token_dim; ++k)
        g[token_offset + k] += dinput[observation_size_ + k];
    }
  }

  std::map<std::string, std::string> metadata() const {
    std::map<std::string, std::string> m;
    std::string skills, hidden;
    for (const auto& s : skills_) skills += (skills.empty() ? "" : ",") + s;
    for (auto h : config_.hidden) hidden += (hidden.empty() ? "" : ",") + std::to_string(h);
    m["skills"] = skills;
    m["hidden"] = hidden;
    m["observation_size"] = std::to_string(observation_size_);
    m["skill_token_dim"] = std::to_string(config_.skill_token_dim);
    m["embedding_dim"] = std::to_string(config_.embedding_dim);
    m["similarity"] = to_string(config_.similarity);
    m["cosine_scale"] = exact(config_.cosine_scale);
    m["count_scale"] = exact(config_.count_scale);
    return m;
  }

  void save(const std::filesystem::path& path, const ParameterSet& params) const {
    if (!(params.layout() == layout_)) throw UsageError("parameters do not belong to this policy");
    approx::save_checkpoint_file(path, params, "policy", metadata());
  }

  static std::pair<ActorCritic, ParameterSet> load(const std::filesystem::path& path) {
    auto ckpt = approx::load_checkpoint_file(path);
    if (ckpt.kind != "policy") throw ConfigError(path.string() + " is not a policy checkpoint");
    auto get = [&](const std::string& k) {
      auto it = ckpt.extra.find(k);
      if (it == ckpt.extra.end()) throw ConfigError("policy checkpoint lacks '" + k + "'");
      return it->second;
    };
    PolicyConfig cfg;
    cfg.hidden.clear();
    for (const auto& h : split(get("hidden"))) cfg.hidden.push_back(std::stoul(h));
    cfg.skill_token_dim = std::stoul(get("skill_token_dim"));
    cfg.embedding_dim = std::stoul(get("embedding_dim"));
    cfg.similarity = parse_similarity(get("similarity"));
    cfg.cosine_scale = std::stod(get("cosine_scale"));
    cfg.count_scale = std::stod(get("count_scale"));
    ActorCritic model(cfg, std::stoul(get("observation_size")), split(get("skills")));
    if (!(model.layout() == ckpt.params.layout()))
      throw ConfigError("policy checkpoint layout does not match its metadata");
    ParameterSet params(model.layout(), std::vector<double>(ckpt.params.values().begin(),
                                                            ckpt.params.values().end()));
    return {std::move(model), std::move(params)};
  }

 private:
  static constexpr double kTiny = 1e-12;

  static double norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  }

  static std::string exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }

  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
      const auto comma = s.find(',', start);
      out.push_back(s.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return out;
  }

  PolicyConfig config_;
  std::size_t observation_size_;
  std::vector<SkillId> skills_;
  Layout layout_;
  approx::Mlp body_, action_head_, critic_head_;
};

}  // namespace rrl::policy
