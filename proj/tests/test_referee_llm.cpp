#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "rrl/referee_llm.hpp"

using namespace rrl;
using namespace rrl::referee;

namespace {

RefereeQuery sample_query(int i = 0) {
  RefereeQuery q;
  q.target = {"stick", 1};
  q.action = "craft_stick";
  q.state_before.inventory = {{"planks", 2 + i}};
  q.state_before.nearby = {{"tree", 2}};
  q.state_after = q.state_before;
  q.state_after.inventory["stick"] = 4;
  return q;
}

std::string chat_body(const std::string& content) {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

EndpointConfig fast_config() {
  EndpointConfig cfg;
  cfg.url = "http://127.0.0.1:1/v1/chat/completions";
  cfg.max_attempts = 3;
  cfg.backoff_initial_s = 0.0;
  return cfg;
}

// Replays a scripted sequence of replies, repeating the last one.
struct Script {
  std::vector<HttpReply> replies;
  std::size_t calls = 0;
  Transport transport() {
    return [this](const std::string&) { return replies[std::min(calls++, replies.size() - 1)]; };
  }
};

HttpReply ok(const std::string& body) { return {true, 200, body, {}}; }

// Local chat-completion stand-in bound to an ephemeral port.
class MockServer {
 public:
  explicit MockServer(httplib::Server::Handler h) {
    server_.Post("/v1/chat/completions", std::move(h));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

void set_key(const char* value) {
  if (value)
    ::setenv("RRL_TEST_REFEREE_KEY", value, 1);
  else
    ::unsetenv("RRL_TEST_REFEREE_KEY");
}

}  // namespace

struct ReplyCase {
  std::string content;
  std::optional<Category> expected;  // nullopt: fallback to C
};

class ReplyVariants : public ::testing::TestWithParam<ReplyCase> {};

TEST_P(ReplyVariants, ParsedOrFallback) {
  const auto& c = GetParam();
  Script s{{ok(chat_body(c.content))}};
  LlmReferee judge(fast_config(), {}, s.transport());
  judge.set_sleeper([](double) {});
  Rng rng(0);
  const auto v = judge.judge(sample_query(), rng);
  if (c.expected) {
    EXPECT_EQ(v.category, *c.expected) << c.content;
    EXPECT_FALSE(v.fallback);
    EXPECT_EQ(s.calls, 1u);
  } else {
    EXPECT_EQ(v.category, Category::C) << c.content;
    EXPECT_TRUE(v.fallback);
    EXPECT_EQ(v.note.rfind("fallback:", 0), 0u);
    EXPECT_EQ(s.calls, 3u);
  }
  EXPECT_DOUBLE_EQ(v.reward, RewardScale{}.reward(v.category));
}

INSTANTIATE_TEST_SUITE_P(
    Llm, ReplyVariants,
    ::testing::Values(ReplyCase{"A", Category::A}, ReplyCase{"B", Category::B}, ReplyCase{"C", Category::C},
                      ReplyCase{"D", Category::D}, ReplyCase{"  B\n", Category::B},
                      ReplyCase{"Answer: D", Category::D}, ReplyCase{"(A)", Category::A},
                      ReplyCase{"**C**", Category::C}, ReplyCase{"A.", Category::A},
                      ReplyCase{"The grade is B because the log was gathered.", Category::B},
                      ReplyCase{"Grade: C, not D", Category::C}, ReplyCase{"BAD idea? D", Category::D},
                      ReplyCase{"Category A", Category::A}, ReplyCase{"'D'", Category::D},
                      ReplyCase{"A_B then C", Category::C}, ReplyCase{"grade=B", Category::B},
                      ReplyCase{"a", std::nullopt}, ReplyCase{"", std::nullopt}, ReplyCase{"E", std::nullopt},
                      ReplyCase{"ABCD", std::nullopt}, ReplyCase{"I cannot decide.", std::nullopt},
                      ReplyCase{"A1", std::nullopt}, ReplyCase{"Definitely bad", std::nullopt},
                      ReplyCase{"\xC3\x84 \xC3\x96", std::nullopt}));

TEST(LlmReferee, MalformedBodiesFallBack) {
  for (const std::string body : {"not json", "{}", R"({"choices":[]})", R"({"choices":[{"message":{}}]})",
                                 R"({"choices":[{"message":{"content":7}}]})"}) {
    Script s{{ok(body)}};
    LlmReferee judge(fast_config(), {}, s.transport());
    judge.set_sleeper([](double) {});
    Rng rng(0);
    const auto v = judge.judge(sample_query(), rng);
    EXPECT_TRUE(v.fallback) << body;
    EXPECT_EQ(v.category, Category::C);
    EXPECT_NE(v.note.find("malformed"), std::string::npos);
  }
}

TEST(LlmReferee, RetriesTransientFailuresWithBackoff) {
  auto cfg = fast_config();
  cfg.max_attempts = 5;
  cfg.backoff_initial_s = 0.5;
  cfg.backoff_multiplier = 2.0;
  cfg.backoff_max_s = 1.5;
  Script s{{{false, 0, {}, "refused"}, {true, 503, {}, {}}, {true, 429, {}, {}}, ok(chat_body("A"))}};
  LlmReferee judge(cfg, {}, s.transport());
  std::vector<double> sleeps;
  judge.set_sleeper([&](double d) { sleeps.push_back(d); });
  Rng rng(0);
  const auto v = judge.judge(sample_query(), rng);
  EXPECT_EQ(v.category, Category::A);
  EXPECT_FALSE(v.fallback);
  EXPECT_EQ(s.calls, 4u);
  EXPECT_EQ(sleeps, (std::vector<double>{0.5, 1.0, 1.5}));
}

TEST(LlmReferee, ClientErrorIsNotRetried) {
  Script s{{{true, 401, "unauthorized", {}}}};
  LlmReferee judge(fast_config(), {}, s.transport());
  judge.set_sleeper([](double) {});
  Rng rng(0);
  const auto v = judge.judge(sample_query(), rng);
  EXPECT_TRUE(v.fallback);
  EXPECT_EQ(s.calls, 1u);
  EXPECT_NE(v.note.find("401"), std::string::npos);
}

TEST(LlmReferee, RequestCarriesPromptAndModel) {
  std::string seen;
  auto cfg = fast_config();
  cfg.model = "m-test";
  LlmReferee judge(cfg, {}, [&](const std::string& body) {
    seen = body;
    return ok(chat_body("B"));
  });
  Rng rng(0);
  judge.judge(sample_query(), rng);
  const auto json = nlohmann::json::parse(seen);
  EXPECT_EQ(json.at("model"), "m-test");
  EXPECT_EQ(json.at("temperature"), 0);
  const std::string prompt = json.at("messages").at(1).at("content");
  EXPECT_NE(prompt.find("Target: obtain 1 stick"), std::string::npos);
  EXPECT_NE(prompt.find("Executed skill: craft_stick"), std::string::npos);
  EXPECT_NE(prompt.find("Inventory after: planks x2, stick x4"), std::string::npos);
  EXPECT_EQ(prompt.find("{{"), std::string::npos);
}

TEST(LlmReferee, PromptAssetMatchesBuiltIn) {
  const auto text = load_prompt_template(std::filesystem::path(RRL_ASSET_DIR) / "referee_prompt_v1.txt");
  EXPECT_EQ(text, kDefaultPromptTemplate);
  EXPECT_THROW(load_prompt_template("/nonexistent/prompt.txt"), ConfigError);
}

TEST(LlmReferee, MissingCredentialIsConfigError) {
  set_key(nullptr);
  auto cfg = fast_config();
  cfg.api_key_env = "RRL_TEST_REFEREE_KEY";
  EXPECT_THROW(LlmReferee{cfg}, ConfigError);
  set_key("");
  EXPECT_THROW(LlmReferee{cfg}, ConfigError);
  set_key("secret");
  EXPECT_NO_THROW(LlmReferee{cfg});
  cfg.url = "no-scheme";
  EXPECT_THROW(LlmReferee{cfg}, ConfigError);
}

TEST(LlmReferee, HttpRoundTripSendsBearerToken) {
  std::string auth;
  MockServer server([&](const httplib::Request& req, httplib::Response& res) {
    auth = req.get_header_value("Authorization");
    res.set_content(chat_body("D"), "application/json");
  });
  set_key("secret");
  auto cfg = fast_config();
  cfg.url = server.url();
  cfg.api_key_env = "RRL_TEST_REFEREE_KEY";
  LlmReferee judge(cfg);
  Rng rng(0);
  const auto v = judge.judge(sample_query(), rng);
  EXPECT_EQ(v.category, Category::D);
  EXPECT_EQ(auth, "Bearer secret");
}

TEST(LlmReferee, HttpServerErrorThenSuccess) {
  std::atomic<int> hits{0};
  MockServer server([&](const httplib::Request&, httplib::Response& res) {
    if (hits++ == 0) {
      res.status = 500;
      return;
    }
    res.set_content(chat_body("B"), "application/json");
  });
  set_key("secret");
  auto cfg = fast_config();
  cfg.url = server.url();
  cfg.api_key_env = "RRL_TEST_REFEREE_KEY";
  LlmReferee judge(cfg);
  judge.set_sleeper([](double) {});
  Rng rng(0);
  const auto v = judge.judge(sample_query(), rng);
  EXPECT_EQ(v.category, Category::B);
  EXPECT_EQ(hits.load(), 2);
}

TEST(LlmReferee, TimeoutFallsBackToC) {
  MockServer server([](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(600));
    res.set_content(chat_body("A"), "application/json");
  });
  set_key("secret");
  auto cfg = fast_config();
  cfg.url = server.url();
  cfg.api_key_env = "RRL_TEST_REFEREE_KEY";
  cfg.timeout_s = 0.15;
  cfg.max_attempts = 2;
  LlmReferee judge(cfg);
  judge.set_sleeper([](double) {});
  Rng rng(0);
  const auto v = judge.judge(sample_query(), rng);
  EXPECT_EQ(v.category, Category::C);
  EXPECT_TRUE(v.fallback);
  EXPECT_NE(v.note.find("transport error"), std::string::npos);
  EXPECT_EQ(judge.requests_sent(), 2u);
}

TEST(LlmReferee, BatchRespectsInFlightBound) {
  std::atomic<int> in_flight{0}, peak{0};
  MockServer server([&](const httplib::Request&, httplib::Response& res) {
    const int now = ++in_flight;
    for (int p = peak.load(); now > p && !peak.compare_exchange_weak(p, now);) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(40));
    --in_flight;
    res.set_content(chat_body("A"), "application/json");
  });
  set_key("secret");
  auto cfg = fast_config();
  cfg.url = server.url();
  cfg.api_key_env = "RRL_TEST_REFEREE_KEY";
  cfg.max_in_flight = 3;
  LlmReferee judge(cfg);
  std::vector<RefereeQuery> batch;
  for (int i = 0; i < 12; ++i) batch.push_back(sample_query(i));
  Rng rng(0);
  const auto out = judge.judge_batch(batch, rng);
  ASSERT_EQ(out.size(), batch.size());
  for (const auto& v : out) EXPECT_EQ(v.category, Category::A);
  EXPECT_LE(peak.load(), 3);
  EXPECT_GE(peak.load(), 2);
  EXPECT_EQ(judge.requests_sent(), 12u);
}

TEST(LlmReferee, ConfigBoundsChecked) {
  auto cfg = fast_config();
  cfg.max_attempts = 0;
  EXPECT_THROW(LlmReferee(cfg, {}, Script{}.transport()), ConfigError);
  cfg = fast_config();
  cfg.max_in_flight = 0;
  EXPECT_THROW(LlmReferee(cfg, {}, Script{}.transport()), ConfigError);
}
