#pragma once

// Referee backed by an external chat-completion endpoint. The transition is
// rendered into a fixed prompt, the reply is scanned for the first standalone
// category letter, and transport errors are retried with exponential backoff.
// When no letter can be obtained the verdict falls back to category C and is
// flagged.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "rrl/referee.hpp"

namespace rrl::referee {

inline constexpr std::string_view kDefaultPromptTemplate =
    "[referee prompt v1]\n"
    "Target: {{target}}\n"
    "Executed skill: {{action}}\n"
    "Inventory before: {{inventory_before}}\n"
    "Nearby resources before: {{nearby_before}}\n"
    "Inventory after: {{inventory_after}}\n"
    "Nearby resources after: {{nearby_after}}\n"
    "\n"
    "Grade the executed skill with one letter:\n"
    "A = it is a step toward the target and the step paid off.\n"
    "B = it is a step toward the target but nothing was gained this time.\n"
    "C = it does not lead toward the target, but nothing useful was lost.\n"
    "D = it does not lead toward the target and it wasted something the target needs.\n"
    "Reply with exactly one letter: A, B, C or D.\n";

inline constexpr std::string_view kSystemMessage =
    "You referee single steps of an agent in a crafting game. Answer with one letter.";

struct EndpointConfig {
  std::string url;  // e.g. https://api.example.com/v1/chat/completions
  std::string model = "gpt-4";
  std::string api_key_env = "RRL_REFEREE_API_KEY";
  double timeout_s = 30.0;
  int max_attempts = 3;
  double backoff_initial_s = 0.5;
  double backoff_multiplier = 2.0;
  double backoff_max_s = 8.0;
  int max_in_flight = 4;
  std::string prompt_template{kDefaultPromptTemplate};
};

inline std::string load_prompt_template(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read prompt template " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string describe_counts(const craftworld::Counts& counts) {
  if (counts.empty()) return "(none)";
  std::string out;
  for (const auto& [k, v] : counts) {
    if (!out.empty()) out += ", ";
    out += k + " x" + std::to_string(v);
  }
  return out;
}

inline std::string render_prompt(std::string_view tmpl, const RefereeQuery& q) {
  const std::pair<std::string_view, std::string> fields[] = {
      {"{{target}}", "obtain " + std::to_string(q.target.count) + " " + q.target.item},
      {"{{action}}", q.action},
      {"{{inventory_before}}", describe_counts(q.state_before.inventory)},
      {"{{nearby_before}}", describe_counts(q.state_before.nearby)},
      {"{{inventory_after}}", describe_counts(q.state_after.inventory)},
      {"{{nearby_after}}", describe_counts(q.state_after.nearby)},
  };
  std::string out(tmpl);
  for (const auto& [key, value] : fields) {
    for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + value.size()))
      out.replace(pos, key.size(), value);
  }
  return out;
}

// First uppercase A-D not adjacent to another letter, digit or underscore.
inline std::optional<Category> parse_category(std::string_view reply) {
  auto word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
  for (std::size_t i = 0; i < reply.size(); ++i) {
    const char c = reply[i];
    if (c < 'A' || c > 'D') continue;
    if (i > 0 && word(reply[i - 1])) continue;
    if (i + 1 < reply.size() && word(reply[i + 1])) continue;
    return static_cast<Category>(c - 'A');
  }
  return std::nullopt;
}

struct HttpReply {
  bool transport_ok = false;  // false: connection failure or timeout
  int status = 0;
  std::string body;
  std::string error;
};

// POSTs a JSON body; swappable for tests and alternative transports.
using Transport = std::function<HttpReply(const std::string& body)>;

inline Transport http_transport(const EndpointConfig& cfg, std::string api_key) {
  const auto scheme_end = cfg.url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("referee url must include a scheme: " + cfg.url);
  const auto path_start = cfg.url.find('/', scheme_end + 3);
  const std::string origin = cfg.url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : cfg.url.substr(path_start);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (cfg.url.rfind("https", 0) == 0) throw ConfigError("this build has no TLS support for " + cfg.url);
#endif
  const auto timeout = std::chrono::duration<double>(cfg.timeout_s);
  return [origin, path, timeout, api_key = std::move(api_key)](const std::string& body) {
    httplib::Client client(origin);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    httplib::Headers headers{{"Authorization", "Bearer " + api_key}};
    HttpReply reply;
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      reply.error = httplib::to_string(res.error());
      return reply;
    }
    reply.transport_ok = true;
    reply.status = res->status;
    reply.body = res->body;
    return reply;
  };
}

class LlmReferee : public Referee {
 public:
  using Sleeper = std::function<void(double seconds)>;

  // Reads the credential from the environment variable named in the config.
  explicit LlmReferee(EndpointConfig cfg, RewardScale scale = {})
      : LlmReferee(cfg, scale, http_transport(cfg, read_credential(cfg))) {}

  LlmReferee(EndpointConfig cfg, RewardScale scale, Transport transport)
      : cfg_(std::move(cfg)), scale_(scale), transport_(std::move(transport)) {
    scale_.validate();
    if (cfg_.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
    if (cfg_.max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
    sleep_ = [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
  }

  static std::string read_credential(const EndpointConfig& cfg) {
    const char* key = cfg.api_key_env.empty() ? nullptr : std::getenv(cfg.api_key_env.c_str());
    if (!key || !*key)
      throw ConfigError("referee credential missing: set environment variable '" + cfg.api_key_env + "'");
    return key;
  }

  void set_sleeper(Sleeper s) { sleep_ = std::move(s); }

  std::string name() const override { return "llm"; }

  std::string request_body(const RefereeQuery& q) const {
    nlohmann::json body = {
        {"model", cfg_.model},
        {"temperature", 0},
        {"messages",
         nlohmann::json::array({{{"role", "system"}, {"content", std::string(kSystemMessage)}},
                                {{"role", "user"}, {"content", render_prompt(cfg_.prompt_template, q)}}})}};
    return body.dump();
  }

  RefereeVerdict judge(const RefereeQuery& q, Rng&) override { return judge_one(q); }

  std::vector<RefereeVerdict> judge_batch(std::span<const RefereeQuery> queries, Rng&) override {
    std::vector<RefereeVerdict> out(queries.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < queries.size(); i = next++) out[i] = judge_one(queries[i]);
    };
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg_.max_in_flight), queries.size());
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    return out;
  }

  const EndpointConfig& config() const noexcept { return cfg_; }
  std::size_t requests_sent() const noexcept { return requests_.load(); }

 private:
  RefereeVerdict judge_one(const RefereeQuery& q) {
    const std::string body = request_body(q);
    std::string last_problem;
    double delay = cfg_.backoff_initial_s;
    for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
      if (attempt > 1) {
        sleep_(delay);
        delay = std::min(delay * cfg_.backoff_multiplier, cfg_.backoff_max_s);
      }
      ++requests_;
      const HttpReply reply = transport_(body);
      if (!reply.transport_ok) {
        last_problem = "transport error: " + reply.error;
        continue;
      }
      if (reply.status == 429 || reply.status >= 500) {
        last_problem = "http status " + std::to_string(reply.status);
        continue;
      }
      if (reply.status < 200 || reply.status >= 300) {
        last_problem = "http status " + std::to_string(reply.status);
        break;
      }
      const auto content = extract_content(reply.body);
      if (!content) {
        last_problem = "malformed response body";
        continue;
      }
      if (const auto cat = parse_category(*content)) return {*cat, scale_.reward(*cat), false, {}};
      last_problem = "no category letter in reply";
    }
    return {Category::C, scale_.reward(Category::C), true, "fallback: " + last_problem};
  }

  static std::optional<std::string> extract_content(const std::string& body) {
    const auto json = nlohmann::json::parse(body, nullptr, false);
    if (json.is_discarded()) return std::nullopt;
    try {
      const auto& content = json.at("choices").at(0).at("message").at("content");
      if (!content.is_string()) return std::nullopt;
      return content.get<std::string>();
    } catch (const nlohmann::json::exception&) {
      return std::nullopt;
    }
  }

  EndpointConfig cfg_;
  RewardScale scale_;
  Transport transport_;
  Sleeper sleep_;
  std::atomic<std::size_t> requests_{0};
};

}  // namespace rrl::referee
