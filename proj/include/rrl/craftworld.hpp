#pragma once

// Crafting tech-tree environment: inventory + nearby resources, discrete skills
// with preconditions, consumption, yields and a success probability. Reward is
// the sparse time-penalized signal: -eps per step, plus R on the step where the
// target first becomes satisfied.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "rrl/common.hpp"

namespace rrl::craftworld {

using ItemId = std::string;
using SkillId = std::string;
// Ordered so that iteration, printing and hashing are deterministic.
using Counts = std::map<std::string, int>;

inline int count_of(const Counts& counts, const std::string& key) {
  auto it = counts.find(key);
  return it == counts.end() ? 0 : it->second;
}

// Adds delta to counts[key], dropping the entry when it reaches zero so that
// equal states compare equal.
inline void add_count(Counts& counts, const std::string& key, int delta) {
  const int next = count_of(counts, key) + delta;
  if (next < 0) throw UsageError("negative count for '" + key + "'");
  if (next == 0)
    counts.erase(key);
  else
    counts[key] = next;
}

struct WorldState {
  Counts inventory;
  Counts nearby;
  int steps_elapsed = 0;
  bool done = false;

  bool operator==(const WorldState&) const = default;
};

struct TaskTarget {
  ItemId item;
  int count = 1;

  bool operator==(const TaskTarget&) const = default;
};

struct SkillSpec {
  SkillId id;
  Counts requirements;  // may name nearby resources
  Counts consumes;
  Counts yields;
  double success_prob = 1.0;
};

// Initial nearby count of a resource, uniform over [min, max].
struct SpawnRange {
  std::string resource;
  int min = 0;
  int max = 0;
};

struct EnvConfig {
  int schema_version = 1;
  std::vector<SkillSpec> recipe_book;
  std::vector<SpawnRange> spawn;
  // Targets the observation can encode. Empty means every craftable item.
  std::vector<ItemId> tasks;
  int horizon = 200;
  double step_penalty = 0.01;
  double terminal_reward = 1.0;
  std::uint64_t seed = 0;
};

struct Observation {
  std::vector<double> target_onehot;
  std::vector<double> inventory_vec;
  std::vector<double> nearby_vec;
  std::vector<double> last_action_onehot;

  std::size_t size() const {
    return target_onehot.size() + inventory_vec.size() + nearby_vec.size() +
           last_action_onehot.size();
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(size());
    for (const auto* part : {&target_onehot, &inventory_vec, &nearby_vec, &last_action_onehot})
      out.insert(out.end(), part->begin(), part->end());
    return out;
  }

  bool operator==(const Observation&) const = default;
};

struct StepResult {
  WorldState state;
  double reward = 0.0;
  bool done = false;
  bool preconditions_met = false;
  bool succeeded = false;  // preconditions met and the success draw passed
};

class CraftWorld {
 public:
  explicit CraftWorld(EnvConfig config) : config_(std::move(config)) {
    std::sort(config_.recipe_book.begin(), config_.recipe_book.end(),
              [](const SkillSpec& a, const SkillSpec& b) { return a.id < b.id; });
    index_and_validate();
  }

  const EnvConfig& config() const noexcept { return config_; }
  const std::vector<SkillSpec>& skills() const noexcept { return config_.recipe_book; }
  const std::vector<ItemId>& items() const noexcept { return items_; }
  const std::vector<std::string>& resources() const noexcept { return resources_; }
  const std::vector<ItemId>& tasks() const noexcept { return tasks_; }
  std::size_t num_skills() const noexcept { return config_.recipe_book.size(); }

  std::vector<SkillId> skill_ids() const {
    std::vector<SkillId> ids;
    for (const auto& s : config_.recipe_book) ids.push_back(s.id);
    return ids;
  }

  std::size_t observation_size() const noexcept {
    return tasks_.size() + items_.size() + resources_.size() + num_skills();
  }

  bool is_resource(const std::string& key) const { return resource_index_.count(key) != 0; }

  std::size_t skill_index(const SkillId& id) const {
    auto it = skill_index_.find(id);
    if (it == skill_index_.end()) throw ConfigError("unknown skill '" + id + "'");
    return it->second;
  }

  const SkillSpec& skill(std::size_t index) const {
    if (index >= num_skills()) throw ConfigError("skill index out of range");
    return config_.recipe_book[index];
  }

  std::optional<std::size_t> producer_of(const ItemId& item) const {
    auto it = producer_.find(item);
    if (it == producer_.end()) return std::nullopt;
    return it->second;
  }

  void validate_target(const TaskTarget& target) const {
    if (target.count < 1) throw ConfigError("target count must be >= 1");
    if (item_index_.count(target.item) == 0 || !producer_of(target.item))
      throw ConfigError("target '" + target.item + "' is not producible by the recipe book");
  }

  bool satisfied(const WorldState& state, const TaskTarget& target) const {
    return count_of(state.inventory, target.item) >= target.count;
  }

  bool preconditions_met(const WorldState& state, std::size_t skill_idx) const {
    for (const auto& [key, need] : skill(skill_idx).requirements) {
      const int have = is_resource(key) ? count_of(state.nearby, key) : count_of(state.inventory, key);
      if (have < need) return false;
    }
    return true;
  }

  // Deducts consumes and adds yields. Caller checks preconditions.
  WorldState apply_success(const WorldState& state, std::size_t skill_idx) const {
    WorldState next = state;
    const SkillSpec& s = skill(skill_idx);
    for (const auto& [key, n] : s.consumes)
      add_count(is_resource(key) ? next.nearby : next.inventory, key, -n);
    for (const auto& [key, n] : s.yields) add_count(next.inventory, key, n);
    return next;
  }

  WorldState reset(const TaskTarget& target, std::uint64_t seed) const {
    validate_target(target);
    Rng rng(seed);
    WorldState state;
    for (const auto& range : config_.spawn) {
      const int n = uniform_int(rng, range.min, range.max);
      if (n > 0) state.nearby[range.resource] = n;
    }
    return state;
  }

  StepResult step(const WorldState& state, const SkillId& skill_id, const TaskTarget& target,
                  Rng& rng) const {
    return step(state, skill_index(skill_id), target, rng);
  }

  StepResult step(const WorldState& state, std::size_t skill_idx, const TaskTarget& target,
                  Rng& rng) const {
    if (state.done) throw UsageError("step called on a finished episode");
    if (skill_idx >= num_skills()) throw ConfigError("skill index out of range");
    StepResult result;
    result.state = state;
    result.preconditions_met = preconditions_met(state, skill_idx);
    if (result.preconditions_met) {
      result.succeeded = uniform01(rng) < skill(skill_idx).success_prob;
      if (result.succeeded) result.state = apply_success(state, skill_idx);
    }
    result.state.steps_elapsed = state.steps_elapsed + 1;
    result.reward = -config_.step_penalty;
    const bool now = satisfied(result.state, target);
    if (now && !satisfied(state, target)) result.reward += config_.terminal_reward;
    result.state.done = now || result.state.steps_elapsed >= config_.horizon;
    result.done = result.state.done;
    return result;
  }

  Observation observe(const WorldState& state, const TaskTarget& target,
                      std::optional<std::size_t> last_action = std::nullopt) const {
    Observation obs;
    obs.target_onehot.assign(tasks_.size(), 0.0);
    if (auto it = task_index_.find(target.item); it != task_index_.end())
      obs.target_onehot[it->second] = 1.0;
    obs.inventory_vec.assign(items_.size(), 0.0);
    for (const auto& [item, n] : state.inventory)
      if (auto it = item_index_.find(item); it != item_index_.end())
        obs.inventory_vec[it->second] = n;
    obs.nearby_vec.assign(resources_.size(), 0.0);
    for (const auto& [res, n] : state.nearby)
      if (auto it = resource_index_.find(res); it != resource_index_.end())
        obs.nearby_vec[it->second] = n;
    obs.last_action_onehot.assign(num_skills(), 0.0);
    if (last_action) obs.last_action_onehot.at(*last_action) = 1.0;
    return obs;
  }

  Observation observe(const WorldState& state, const TaskTarget& target,
                      const SkillId& last_action) const {
    return observe(state, target, skill_index(last_action));
  }

  std::size_t item_index(const ItemId& item) const {
    auto it = item_index_.find(item);
    if (it == item_index_.end()) throw ConfigError("unknown item '" + item + "'");
    return it->second;
  }

 private:
  void index_and_validate() {
    const auto& c = config_;
    if (c.schema_version != 1)
      throw ConfigError("unsupported recipe schema_version " + std::to_string(c.schema_version));
    if (c.recipe_book.empty()) throw ConfigError("recipe book is empty");
    if (c.horizon < 1) throw ConfigError("horizon must be >= 1");
    if (c.step_penalty < 0.0) throw ConfigError("step_penalty must be >= 0");
    if (!(c.terminal_reward > 0.0)) throw ConfigError("terminal_reward must be > 0");
    if (!(c.step_penalty < c.terminal_reward))
      throw ConfigError("step_penalty must be smaller than terminal_reward");

    std::set<std::string> resources;
    for (const auto& r : c.spawn) {
      if (r.min < 0 || r.max < r.min)
        throw ConfigError("spawn range for '" + r.resource + "' must satisfy 0 <= min <= max");
      if (!resources.insert(r.resource).second)
        throw ConfigError("duplicate spawn entry '" + r.resource + "'");
    }
    resources_.assign(resources.begin(), resources.end());
    for (std::size_t i = 0; i < resources_.size(); ++i) resource_index_[resources_[i]] = i;

    std::set<std::string> items;
    for (std::size_t i = 0; i < c.recipe_book.size(); ++i) {
      const SkillSpec& s = c.recipe_book[i];
      if (s.id.empty()) throw ConfigError("skill with empty id");
      if (!skill_index_.emplace(s.id, i).second) throw ConfigError("duplicate skill '" + s.id + "'");
      if (!(s.success_prob > 0.0 && s.success_prob <= 1.0))
        throw ConfigError("skill '" + s.id + "': success_prob must be in (0, 1]");
      if (s.yields.empty()) throw ConfigError("skill '" + s.id + "': yields must be non-empty");
      for (const auto* m : {&s.requirements, &s.consumes, &s.yields})
        for (const auto& [key, n] : *m)
          if (n <= 0) throw ConfigError("skill '" + s.id + "': counts must be positive ('" + key + "')");
      for (const auto& [key, n] : s.consumes)
        if (count_of(s.requirements, key) < n)
          throw ConfigError("skill '" + s.id + "': consumes '" + key + "' beyond its requirement");
      for (const auto& [key, n] : s.yields) {
        if (resources.count(key)) throw ConfigError("skill '" + s.id + "' yields resource '" + key + "'");
        items.insert(key);
      }
      for (const auto& [key, n] : s.requirements)
        if (!resources.count(key)) items.insert(key);
    }
    items_.assign(items.begin(), items.end());
    for (std::size_t i = 0; i < items_.size(); ++i) item_index_[items_[i]] = i;

    for (std::size_t i = 0; i < c.recipe_book.size(); ++i)
      for (const auto& [item, n] : c.recipe_book[i].yields)
        if (!producer_.count(item)) producer_[item] = i;

    check_acyclic();

    if (c.tasks.empty()) {
      std::set<std::string> t;
      for (const auto& s : c.recipe_book)
        for (const auto& [item, n] : s.yields) t.insert(item);
      tasks_.assign(t.begin(), t.end());
    } else {
      tasks_ = c.tasks;
      std::sort(tasks_.begin(), tasks_.end());
      tasks_.erase(std::unique(tasks_.begin(), tasks_.end()), tasks_.end());
    }
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
      task_index_[tasks_[i]] = i;
      validate_target({tasks_[i], 1});
    }
  }

  // Item dependency graph: an edge from every ingredient (non-resource
  // requirement) of a skill to each of its yields. Must be a DAG.
  void check_acyclic() const {
    std::map<std::string, std::set<std::string>> edges;
    for (const auto& s : config_.recipe_book)
      for (const auto& [need, n] : s.requirements)
        if (!is_resource(need))
          for (const auto& [out, m] : s.yields) edges[need].insert(out);
    std::map<std::string, int> color;
    std::vector<std::pair<std::string, bool>> stack;
    for (const auto& item : items_) {
      if (color[item]) continue;
      stack.push_back({item, false});
      while (!stack.empty()) {
        auto [node, leaving] = stack.back();
        stack.pop_back();
        if (leaving) {
          color[node] = 2;
          continue;
        }
        if (color[node] == 2) continue;
        color[node] = 1;
        stack.push_back({node, true});
        for (const auto& next : edges[node]) {
          if (color[next] == 1) throw ConfigError("recipe graph has a cycle through '" + next + "'");
          if (color[next] == 0) stack.push_back({next, false});
        }
      }
    }
  }

  EnvConfig config_;
  std::vector<ItemId> items_;
  std::vector<std::string> resources_;
  std::vector<ItemId> tasks_;
  std::unordered_map<std::string, std::size_t> skill_index_;
  std::unordered_map<std::string, std::size_t> item_index_;
  std::unordered_map<std::string, std::size_t> resource_index_;
  std::unordered_map<std::string, std::size_t> task_index_;
  std::unordered_map<std::string, std::size_t> producer_;
};

// "log:-1;planks:+4", items in sorted order; empty when nothing changed.
inline std::string inventory_diff(const Counts& before, const Counts& after) {
  std::set<std::string> keys;
  for (const auto& [k, v] : before) keys.insert(k);
  for (const auto& [k, v] : after) keys.insert(k);
  std::ostringstream out;
  bool first = true;
  for (const auto& k : keys) {
    const int d = count_of(after, k) - count_of(before, k);
    if (d == 0) continue;
    if (!first) out << ';';
    first = false;
    out << k << ':' << (d > 0 ? "+" : "") << d;
  }
  return out.str();
}

struct TraceRow {
  int step = 0;
  SkillId skill;
  double reward = 0.0;
  std::string inventory_diff;
};

inline void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows) {
  out << "step,skill,reward,inventory_diff\n";
  for (const auto& r : rows) {
    char reward[32];
    std::snprintf(reward, sizeof reward, "%.10g", r.reward);
    out << r.step << ',' << r.skill << ',' << reward << ',' << r.inventory_diff << '\n';
  }
}

}  // namespace rrl::craftworld
