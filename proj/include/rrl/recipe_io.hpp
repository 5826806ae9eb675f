#pragma once

// Recipe book / spawn configuration stored as a TOML document.

#include <filesystem>
#include <string>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "rrl/craftworld.hpp"

namespace rrl::craftworld {

namespace detail {

inline Counts read_counts(const toml::node_view<const toml::node>& node, const std::string& where) {
  Counts out;
  if (!node) return out;
  const auto* table = node.as_table();
  if (!table) throw ConfigError(where + ": expected an inline table of counts");
  for (const auto& [key, value] : *table) {
    const auto n = value.value<std::int64_t>();
    if (!n) throw ConfigError(where + "." + std::string(key.str()) + ": expected an integer");
    out[std::string(key.str())] = static_cast<int>(*n);
  }
  return out;
}

}  // namespace detail

inline EnvConfig parse_env_config(const toml::table& doc, const std::string& origin = "<recipe>") {
  EnvConfig cfg;
  const auto version = doc["schema_version"].value<std::int64_t>();
  if (!version) throw ConfigError(origin + ": missing schema_version");
  cfg.schema_version = static_cast<int>(*version);
  cfg.horizon = static_cast<int>(doc["horizon"].value_or<std::int64_t>(cfg.horizon));
  cfg.step_penalty = doc["step_penalty"].value_or(cfg.step_penalty);
  cfg.terminal_reward = doc["terminal_reward"].value_or(cfg.terminal_reward);
  cfg.seed = static_cast<std::uint64_t>(doc["seed"].value_or<std::int64_t>(0));

  if (const auto* spawn = doc["spawn"].as_array()) {
    for (std::size_t i = 0; i < spawn->size(); ++i) {
      const auto* t = (*spawn)[i].as_table();
      const std::string where = origin + ": spawn[" + std::to_string(i) + "]";
      if (!t) throw ConfigError(where + ": expected a table");
      SpawnRange r;
      const auto name = (*t)["resource"].value<std::string>();
      if (!name) throw ConfigError(where + ": missing resource");
      r.resource = *name;
      r.min = static_cast<int>((*t)["min"].value_or<std::int64_t>(0));
      r.max = static_cast<int>((*t)["max"].value_or<std::int64_t>(r.min));
      cfg.spawn.push_back(r);
    }
  }

  const auto* skills = doc["skill"].as_array();
  if (!skills) throw ConfigError(origin + ": no [[skill]] entries");
  for (std::size_t i = 0; i < skills->size(); ++i) {
    const auto* t = (*skills)[i].as_table();
    const std::string where = origin + ": skill[" + std::to_string(i) + "]";
    if (!t) throw ConfigError(where + ": expected a table");
    SkillSpec s;
    const auto id = (*t)["id"].value<std::string>();
    if (!id) throw ConfigError(where + ": missing id");
    s.id = *id;
    const toml::node_view<const toml::node> view{*t};
    s.requirements = detail::read_counts(view["requires"], where + ".requires");
    s.consumes = detail::read_counts(view["consumes"], where + ".consumes");
    s.yields = detail::read_counts(view["yields"], where + ".yields");
    s.success_prob = (*t)["success_prob"].value_or(1.0);
    cfg.recipe_book.push_back(std::move(s));
  }

  if (const auto* tasks = doc["tasks"].as_array())
    for (const auto& t : *tasks)
      if (auto s = t.value<std::string>()) cfg.tasks.push_back(*s);
  return cfg;
}

inline EnvConfig load_env_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw ConfigError("recipe book not found: " + path.string());
  try {
    return parse_env_config(toml::parse_file(path.string()), path.string());
  } catch (const toml::parse_error& e) {
    throw ConfigError(path.string() + ": " + std::string(e.description()));
  }
}

}  // namespace rrl::craftworld
