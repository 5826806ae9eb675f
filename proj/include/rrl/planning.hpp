#pragma once

// Minimal-plan queries over the recipe graph, with every skill treated as
// deterministic (success_prob taken as 1).
//
// Two routes compute the plan distance L(s), the length of the shortest skill
// sequence from s to the target:
//  - breadth-first search over inventory states (general, exponential);
//  - a bill-of-materials count for recipe books where every item has a single
//    producer and every requirement is either fully consumed or held as a
//    tool. There L(s) is the sum over skills of the runs needed to cover the
//    net demand, which is both a lower bound and achievable in topological
//    order.
// An action starts some minimal plan iff it is applicable and
// L(apply(s, a)) == L(s) - 1.

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "rrl/craftworld.hpp"

namespace rrl::craftworld {

namespace detail {

struct VecHash {
  std::size_t operator()(const std::vector<int>& v) const noexcept {
    std::size_t h = 1469598103934665603ULL;
    for (int x : v) {
      h ^= static_cast<std::size_t>(x) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return h;
  }
};

// Items needed, directly or transitively, to produce the target (including it).
inline std::vector<bool> relevant_skills(const CraftWorld& world, const TaskTarget& target) {
  std::set<std::string> needed{target.item};
  std::vector<std::string> frontier{target.item};
  while (!frontier.empty()) {
    const std::string item = frontier.back();
    frontier.pop_back();
    for (const auto& s : world.skills()) {
      if (!s.yields.count(item)) continue;
      for (const auto& [key, n] : s.requirements)
        if (!world.is_resource(key) && needed.insert(key).second) frontier.push_back(key);
    }
  }
  std::vector<bool> relevant(world.num_skills(), false);
  for (std::size_t i = 0; i < world.num_skills(); ++i)
    for (const auto& [item, n] : world.skill(i).yields)
      if (needed.count(item)) relevant[i] = true;
  return relevant;
}

}  // namespace detail

// Exhaustive breadth-first search. Skills are expanded in lexicographic id
// order and the goal is tested on discovery, so the returned plan is the
// lexicographically smallest among the shortest ones.
inline std::optional<std::vector<SkillId>> bfs_shortest_plan(const CraftWorld& world,
                                                             const WorldState& start,
                                                             const TaskTarget& target,
                                                             std::size_t node_limit = 2'000'000) {
  world.validate_target(target);
  if (world.satisfied(start, target)) return std::vector<SkillId>{};

  const auto& items = world.items();
  const auto& resources = world.resources();
  auto encode = [&](const WorldState& s) {
    std::vector<int> key;
    key.reserve(items.size() + resources.size());
    for (const auto& i : items) key.push_back(count_of(s.inventory, i));
    for (const auto& r : resources) key.push_back(count_of(s.nearby, r));
    return key;
  };
  auto decode = [&](const std::vector<int>& key) {
    WorldState s;
    for (std::size_t i = 0; i < items.size(); ++i)
      if (key[i]) s.inventory[items[i]] = key[i];
    for (std::size_t r = 0; r < resources.size(); ++r)
      if (key[items.size() + r]) s.nearby[resources[r]] = key[items.size() + r];
    return s;
  };

  const auto relevant = detail::relevant_skills(world, target);
  struct Parent {
    std::vector<int> from;
    std::size_t skill;
  };
  std::unordered_map<std::vector<int>, Parent, detail::VecHash> parents;
  std::deque<std::vector<int>> queue;
  const auto root = encode(start);
  parents.emplace(root, Parent{{}, SIZE_MAX});
  queue.push_back(root);

  while (!queue.empty()) {
    const std::vector<int> key = queue.front();
    queue.pop_front();
    const WorldState s = decode(key);
    for (std::size_t a = 0; a < world.num_skills(); ++a) {
      if (!relevant[a] || !world.preconditions_met(s, a)) continue;
      const WorldState next = world.apply_success(s, a);
      auto next_key = encode(next);
      if (parents.count(next_key)) continue;
      parents.emplace(next_key, Parent{key, a});
      if (world.satisfied(next, target)) {
        std::vector<SkillId> plan;
        for (auto k = next_key; parents.at(k).skill != SIZE_MAX; k = parents.at(k).from)
          plan.push_back(world.skill(parents.at(k).skill).id);
        return std::vector<SkillId>(plan.rbegin(), plan.rend());
      }
      if (parents.size() > node_limit)
        throw std::runtime_error("plan search exceeded " + std::to_string(node_limit) + " states");
      queue.push_back(std::move(next_key));
    }
  }
  return std::nullopt;
}

class Planner {
 public:
  explicit Planner(const CraftWorld& world, std::size_t bfs_node_limit = 2'000'000)
      : world_(&world), node_limit_(bfs_node_limit) {
    bom_ = build_bill_of_materials();
  }

  bool uses_bill_of_materials() const noexcept { return bom_.has_value(); }

  // Length of the shortest plan, or nullopt when the target is unreachable.
  std::optional<int> distance(const WorldState& state, const TaskTarget& target) const {
    world_->validate_target(target);
    if (bom_) return bom_distance(state, target);
    const std::string key = cache_key(state, target);
    {
      std::lock_guard lock(mutex_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    std::optional<int> d;
    if (auto plan = bfs_shortest_plan(*world_, state, target, node_limit_))
      d = static_cast<int>(plan->size());
    std::lock_guard lock(mutex_);
    cache_.emplace(key, d);
    return d;
  }

  bool starts_minimal_plan(const WorldState& state, const TaskTarget& target,
                           std::size_t skill_idx) const {
    const auto d = distance(state, target);
    if (!d || *d == 0 || !world_->preconditions_met(state, skill_idx)) return false;
    const auto next = distance(world_->apply_success(state, skill_idx), target);
    return next && *next == *d - 1;
  }

  std::vector<std::size_t> first_steps(const WorldState& state, const TaskTarget& target) const {
    std::vector<std::size_t> out;
    for (std::size_t a = 0; a < world_->num_skills(); ++a)
      if (starts_minimal_plan(state, target, a)) out.push_back(a);
    return out;
  }

  // Lexicographically smallest minimal plan, built by descending the distance.
  std::optional<std::vector<SkillId>> shortest_plan(const WorldState& start,
                                                    const TaskTarget& target) const {
    auto d = distance(start, target);
    if (!d) return std::nullopt;
    std::vector<SkillId> plan;
    WorldState s = start;
    while (*d > 0) {
      bool advanced = false;
      for (std::size_t a = 0; a < world_->num_skills() && !advanced; ++a) {
        if (!world_->preconditions_met(s, a)) continue;
        WorldState next = world_->apply_success(s, a);
        auto nd = distance(next, target);
        if (nd && *nd == *d - 1) {
          plan.push_back(world_->skill(a).id);
          s = std::move(next);
          d = nd;
          advanced = true;
        }
      }
      if (!advanced) throw std::logic_error("plan distance is inconsistent");
    }
    return plan;
  }

 private:
  struct Ingredient {
    std::size_t item;
    int count;
    bool consumed;
  };
  struct Producer {
    int yield = 0;
    std::vector<Ingredient> ingredients;
    std::vector<std::pair<std::string, int>> resources;
  };
  struct BillOfMaterials {
    std::vector<std::size_t> order;  // products before their ingredients
    std::vector<std::optional<Producer>> producers;
  };

  std::optional<BillOfMaterials> build_bill_of_materials() const {
    const CraftWorld& w = *world_;
    const std::size_t n = w.items().size();
    BillOfMaterials bom;
    bom.producers.resize(n);
    std::vector<bool> held(n, false), consumed(n, false);
    for (const auto& s : w.skills()) {
      if (s.yields.size() != 1) return std::nullopt;
      const auto& [out, yield] = *s.yields.begin();
      const std::size_t oi = w.item_index(out);
      if (bom.producers[oi]) return std::nullopt;
      Producer p;
      p.yield = yield;
      for (const auto& [key, need] : s.requirements) {
        const int used = count_of(s.consumes, key);
        if (w.is_resource(key)) {
          if (used) return std::nullopt;
          p.resources.emplace_back(key, need);
          continue;
        }
        if (used != 0 && used != need) return std::nullopt;
        const std::size_t ii = w.item_index(key);
        (used ? consumed : held)[ii] = true;
        p.ingredients.push_back({ii, need, used != 0});
      }
      bom.producers[oi] = std::move(p);
    }
    for (std::size_t i = 0; i < n; ++i)
      if (held[i] && consumed[i]) return std::nullopt;

    std::vector<int> indegree(n, 0);
    for (const auto& p : bom.producers)
      if (p)
        for (const auto& ing : p->ingredients) ++indegree[ing.item];
    std::deque<std::size_t> ready;
    for (std::size_t i = 0; i < n; ++i)
      if (indegree[i] == 0) ready.push_back(i);
    while (!ready.empty()) {
      const std::size_t i = ready.front();
      ready.pop_front();
      bom.order.push_back(i);
      if (bom.producers[i])
        for (const auto& ing : bom.producers[i]->ingredients)
          if (--indegree[ing.item] == 0) ready.push_back(ing.item);
    }
    if (bom.order.size() != n) return std::nullopt;
    return bom;
  }

  std::optional<int> bom_distance(const WorldState& state, const TaskTarget& target) const {
    const CraftWorld& w = *world_;
    const auto& items = w.items();
    std::vector<long> demand(items.size(), 0);
    demand[w.item_index(target.item)] = target.count;
    long total = 0;
    for (std::size_t i : bom_->order) {
      const long need = demand[i] - count_of(state.inventory, items[i]);
      if (need <= 0) continue;
      const auto& p = bom_->producers[i];
      if (!p) return std::nullopt;
      const long runs = (need + p->yield - 1) / p->yield;
      total += runs;
      for (const auto& [res, req] : p->resources)
        if (count_of(state.nearby, res) < req) return std::nullopt;
      for (const auto& ing : p->ingredients) {
        if (ing.consumed)
          demand[ing.item] += runs * ing.count;
        else
          demand[ing.item] = std::max<long>(demand[ing.item], ing.count);
      }
    }
    return static_cast<int>(total);
  }

  static std::string cache_key(const WorldState& s, const TaskTarget& t) {
    std::string key = t.item + '#' + std::to_string(t.count) + '|';
    for (const auto& [k, v] : s.inventory) key += k + ':' + std::to_string(v) + ',';
    key += '|';
    for (const auto& [k, v] : s.nearby) key += k + ':' + std::to_string(v) + ',';
    return key;
  }

  const CraftWorld* world_;
  std::size_t node_limit_;
  std::optional<BillOfMaterials> bom_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<std::string, std::optional<int>> cache_;
};

inline std::optional<std::vector<SkillId>> shortest_plan(const CraftWorld& world,
                                                         const WorldState& state,
                                                         const TaskTarget& target) {
  return Planner(world).shortest_plan(state, target);
}

namespace detail {

inline WorldState sparsest_spawn(const CraftWorld& world) {
  WorldState sparse;
  for (const auto& r : world.config().spawn)
    if (r.min > 0) sparse.nearby[r.resource] = r.min;
  return sparse;
}

inline void check_plan_fits(const CraftWorld& world, const Planner& planner, const TaskTarget& target) {
  const auto d = planner.distance(sparsest_spawn(world), target);
  if (d && *d > world.config().horizon)
    throw ConfigError("horizon " + std::to_string(world.config().horizon) + " is shorter than the minimal plan for '" +
                      target.item + "' (" + std::to_string(*d) + " steps)");
}

}  // namespace detail

// The target must be solvable within the horizon from the sparsest spawn.
inline void check_horizon(const CraftWorld& world, const TaskTarget& target) {
  detail::check_plan_fits(world, Planner(world), target);
}

// Same, for every listed task.
inline void check_horizon(const CraftWorld& world) {
  Planner planner(world);
  for (const auto& task : world.tasks()) detail::check_plan_fits(world, planner, {task, 1});
}

}  // namespace rrl::craftworld
