#pragma once

// Auxiliary-reward referees. Each transition is classified as
//   A: correct action, positive outcome     B: correct action, no positive outcome
//   C: incorrect action, no negative outcome D: incorrect action, negative outcome
// and mapped to the configured scalar, with r_a > r_b > 0 > r_c > r_d.

#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rrl/common.hpp"
#include "rrl/craftworld.hpp"
#include "rrl/planning.hpp"

namespace rrl::referee {

using craftworld::CraftWorld;
using craftworld::Planner;
using craftworld::SkillId;
using craftworld::TaskTarget;
using craftworld::WorldState;

enum class Category { A, B, C, D };

inline char to_char(Category c) { return "ABCD"[static_cast<int>(c)]; }

struct RewardScale {
  double a = 0.5;
  double b = 0.1;
  double c = -0.1;
  double d = -0.5;

  void validate() const {
    if (!(a > b && b > 0.0 && 0.0 > c && c > d))
      throw ConfigError("referee rewards must satisfy r_a > r_b > 0 > r_c > r_d");
  }

  double reward(Category cat) const {
    switch (cat) {
      case Category::A: return a;
      case Category::B: return b;
      case Category::C: return c;
      case Category::D: return d;
    }
    return 0.0;
  }
};

struct RefereeVerdict {
  Category category = Category::C;
  double reward = 0.0;
  bool fallback = false;  // backend could not produce an answer; category is the default
  std::string note;
};

struct RefereeQuery {
  TaskTarget target;
  WorldState state_before;
  SkillId action;
  WorldState state_after;
};

class Referee {
 public:
  virtual ~Referee() = default;
  virtual std::string name() const = 0;
  virtual RefereeVerdict judge(const RefereeQuery& query, Rng& rng) = 0;

  // Verdicts in query order. Backends with concurrent transport override this.
  virtual std::vector<RefereeVerdict> judge_batch(std::span<const RefereeQuery> queries, Rng& rng) {
    std::vector<RefereeVerdict> out;
    out.reserve(queries.size());
    for (const auto& q : queries) out.push_back(judge(q, rng));
    return out;
  }
};

// Stands in for a strong judge using exact minimal-plan knowledge:
//  correct  <=> the action begins some minimal plan from state_before;
//  positive <=> the plan distance to the target dropped;
//  negative <=> the plan distance grew (a needed item was spent without
//               progress) or the target became unreachable.
// An unreachable target leaves nothing to contradict, so every action is C.
class OracleReferee : public Referee {
 public:
  OracleReferee(const CraftWorld& world, RewardScale scale = {})
      : world_(&world), planner_(world), scale_(scale) {
    scale_.validate();
  }

  std::string name() const override { return "oracle"; }

  Category classify(const RefereeQuery& q) const {
    const auto before = planner_.distance(q.state_before, q.target);
    if (!before) return Category::C;
    const std::size_t a = world_->skill_index(q.action);
    const bool correct = planner_.starts_minimal_plan(q.state_before, q.target, a);
    const auto after = planner_.distance(q.state_after, q.target);
    const bool positive = after && *after < *before;
    const bool negative = !after || *after > *before;
    if (correct) return positive ? Category::A : Category::B;
    return negative ? Category::D : Category::C;
  }

  // Progress test shared with the binary referee.
  bool positive_outcome(const RefereeQuery& q) const {
    const auto before = planner_.distance(q.state_before, q.target);
    const auto after = planner_.distance(q.state_after, q.target);
    return before && after && *after < *before;
  }

  RefereeVerdict judge(const RefereeQuery& q, Rng&) override {
    const Category c = classify(q);
    return {c, scale_.reward(c), false, {}};
  }

  const RewardScale& scale() const noexcept { return scale_; }
  const Planner& planner() const noexcept { return planner_; }

 private:
  const CraftWorld* world_;
  Planner planner_;
  RewardScale scale_;
};

// Two-way judge: A when the outcome is positive, D otherwise. It cannot tell a
// correct action that failed from a wrong one.
class BinaryReferee : public Referee {
 public:
  BinaryReferee(const CraftWorld& world, RewardScale scale = {}) : oracle_(world, scale) {}

  std::string name() const override { return "binary"; }

  RefereeVerdict judge(const RefereeQuery& q, Rng&) override {
    const Category c = oracle_.positive_outcome(q) ? Category::A : Category::D;
    return {c, oracle_.scale().reward(c), false, {}};
  }

 private:
  OracleReferee oracle_;
};

// Weak judge: the oracle verdict, replaced with probability flip_prob by a
// uniformly chosen different category.
class NoisyReferee : public Referee {
 public:
  NoisyReferee(const CraftWorld& world, double flip_prob, RewardScale scale = {})
      : oracle_(world, scale), flip_prob_(flip_prob) {
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ConfigError("flip_prob must be in [0, 1]");
  }

  std::string name() const override { return "noisy"; }

  RefereeVerdict judge(const RefereeQuery& q, Rng& rng) override {
    Category c = oracle_.classify(q);
    if (uniform01(rng) < flip_prob_) {
      const int shift = 1 + static_cast<int>(uniform_index(rng, 3));
      c = static_cast<Category>((static_cast<int>(c) + shift) % 4);
    }
    return {c, oracle_.scale().reward(c), false, {}};
  }

  double flip_prob() const noexcept { return flip_prob_; }

 private:
  OracleReferee oracle_;
  double flip_prob_;
};

// Canonical text of a query; equal strings mean identical judgements for any
// deterministic backend.
inline std::string canonical_key(const RefereeQuery& q) {
  auto counts = [](const craftworld::Counts& c) {
    std::string s;
    for (const auto& [k, v] : c) s += k + '=' + std::to_string(v) + ',';
    return s;
  };
  return q.target.item + '#' + std::to_string(q.target.count) + '|' + counts(q.state_before.inventory) +
         '|' + counts(q.state_before.nearby) + '|' + q.action + '|' + counts(q.state_after.inventory) + '|' +
         counts(q.state_after.nearby);
}

// Memoizes a deterministic backend. Fallback verdicts are not cached so a
// transient outage is retried on the next identical query.
class CachingReferee : public Referee {
 public:
  explicit CachingReferee(std::unique_ptr<Referee> inner) : inner_(std::move(inner)) {}

  std::string name() const override { return inner_->name(); }

  RefereeVerdict judge(const RefereeQuery& q, Rng& rng) override {
    const std::string key = canonical_key(q);
    {
      std::lock_guard lock(mutex_);
      if (auto it = cache_.find(key); it != cache_.end()) {
        ++hits_;
        return it->second;
      }
    }
    RefereeVerdict v = inner_->judge(q, rng);
    if (!v.fallback) {
      std::lock_guard lock(mutex_);
      cache_.emplace(key, v);
    }
    return v;
  }

  std::vector<RefereeVerdict> judge_batch(std::span<const RefereeQuery> queries, Rng& rng) override {
    std::vector<RefereeVerdict> out(queries.size());
    std::vector<RefereeQuery> misses;
    std::vector<std::size_t> miss_index;
    {
      std::lock_guard lock(mutex_);
      for (std::size_t i = 0; i < queries.size(); ++i) {
        if (auto it = cache_.find(canonical_key(queries[i])); it != cache_.end()) {
          out[i] = it->second;
          ++hits_;
        } else {
          misses.push_back(queries[i]);
          miss_index.push_back(i);
        }
      }
    }
    const auto fresh = inner_->judge_batch(misses, rng);
    std::lock_guard lock(mutex_);
    for (std::size_t k = 0; k < fresh.size(); ++k) {
      out[miss_index[k]] = fresh[k];
      if (!fresh[k].fallback) cache_.emplace(canonical_key(misses[k]), fresh[k]);
    }
    return out;
  }

  std::size_t hits() const {
    std::lock_guard lock(mutex_);
    return hits_;
  }

 private:
  std::unique_ptr<Referee> inner_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, RefereeVerdict> cache_;
  std::size_t hits_ = 0;
};

}  // namespace rrl::referee
