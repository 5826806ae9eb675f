#include <gtest/gtest.h>

#include <filesystem>

#include "rrl/policy.hpp"
#include "support/test_support.hpp"

using namespace rrl;
using namespace rrl::policy;
using craftworld::CraftWorld;
using craftworld::WorldState;

namespace {

ActorCritic small_policy(Similarity sim = Similarity::dot, std::size_t skills = 3) {
  PolicyConfig cfg;
  cfg.hidden = {8, 8};
  cfg.embedding_dim = 4;
  cfg.skill_token_dim = 2;
  cfg.similarity = sim;
  std::vector<SkillId> ids;
  for (std::size_t i = 0; i < skills; ++i) ids.push_back(std::string(1, static_cast<char>('a' + i)));
  return ActorCritic(cfg, 5, ids);
}

std::vector<double> features(Rng& rng, std::size_t n = 5) {
  std::vector<double> x(n);
  for (double& v : x) v = 2.0 * uniform01(rng) - 1.0;
  return x;
}

// Logits set to e_i . 1 by a constant action-head output of ones.
ParameterSet fixed_logits(const ActorCritic& m, const std::vector<double>& logits) {
  ParameterSet p(m.layout());
  for (double& v : p.mutable_block("action_head.l0.b")) v = 1.0;
  auto e = p.mutable_block("skill_embeddings");
  const std::size_t d = m.config().embedding_dim;
  for (std::size_t i = 0; i < logits.size(); ++i) e[i * d] = logits[i];
  return p;
}

}  // namespace

TEST(Policy, LogitsFiniteAndNormalized) {
  const auto m = small_policy();
  const auto p = m.initial_parameters(1);
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto out = m.forward(p, features(rng));
    double s = 0.0;
    for (std::size_t k = 0; k < out.action_logits.size(); ++k) {
      EXPECT_TRUE(std::isfinite(out.action_logits[k]));
      s += std::exp(out.log_probs[k]);
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Policy, EqualLogitsSampleUniformly) {
  const auto m = small_policy(Similarity::dot, 4);
  const ParameterSet zero(m.layout());
  Rng rng(3);
  std::vector<int> counts(4, 0);
  const int n = 10000;
  const std::vector<double> x(5, 0.3);
  for (int i = 0; i < n; ++i) ++counts[m.act(zero, x, rng, ActMode::sample).action];
  const double p = 0.25, sigma = std::sqrt(n * p * (1 - p));
  for (int c : counts) EXPECT_NEAR(c, n * p, 3 * sigma);
}

TEST(Policy, GreedyIsArgmax) {
  const auto m = small_policy();
  const auto p = fixed_logits(m, {0.1, 2.0, 0.1});
  Rng rng(4);
  const auto out = m.forward(p, std::vector<double>(5, 0.0));
  EXPECT_NEAR(out.action_logits[1], 2.0, 1e-12);
  EXPECT_EQ(m.act(p, std::vector<double>(5, 0.0), rng, ActMode::greedy).action, 1u);
  EXPECT_EQ(argmax(std::vector<double>{0.1, 2.0, 0.1}), 1u);
}

TEST(Policy, LogProbMatchesIndependentSoftmax) {
  const auto m = small_policy(Similarity::cosine);
  const auto p = m.initial_parameters(5);
  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    const auto x = features(rng);
    const auto r = m.act(p, x, rng, ActMode::sample);
    const auto logits = m.forward(p, x).action_logits;
    long double z = 0.0L;
    for (double l : logits) z += std::exp(static_cast<long double>(l));
    const double ref = static_cast<double>(static_cast<long double>(logits[r.action]) - std::log(z));
    EXPECT_NEAR(r.log_prob, ref, 1e-9);
  }
}

TEST(Policy, EvaluateMatchesActAndRatioIsOne) {
  const CraftWorld w(rrl::testing::mini_book());
  PolicyConfig cfg;
  cfg.hidden = {16};
  const ActorCritic m(cfg, w.observation_size(), w.skill_ids());
  const auto p = m.initial_parameters(7);
  Rng rng(8);
  std::vector<Observation> obs;
  std::vector<SkillId> acts;
  std::vector<ActResult> singles;
  WorldState s = w.reset({"axe", 1}, 1);
  for (int i = 0; i < 20; ++i) {
    obs.push_back(w.observe(s, {"axe", 1}));
    singles.push_back(m.act(p, obs.back(), rng, ActMode::sample));
    acts.push_back(singles.back().skill);
    if (w.preconditions_met(s, singles.back().action)) s = w.apply_success(s, singles.back().action);
  }
  const auto ev = m.evaluate(p, obs, acts);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    EXPECT_EQ(std::exp(ev.log_probs[i] - singles[i].log_prob), 1.0);
    EXPECT_EQ(ev.values[i], singles[i].value);
  }
  EXPECT_THROW(m.evaluate(p, obs, std::vector<SkillId>{}), UsageError);
}

TEST(Policy, UniformEntropyIsLogN) {
  const auto m = small_policy(Similarity::dot, 5);
  const ParameterSet zero(m.layout());
  const auto out = m.forward(zero, std::vector<double>(5, 0.1));
  EXPECT_NEAR(categorical_entropy(out.log_probs), std::log(5.0), 1e-12);
}

TEST(Policy, ConstructionErrors) {
  PolicyConfig cfg;
  EXPECT_THROW(ActorCritic(cfg, 3, {}), ConfigError);
  EXPECT_THROW(ActorCritic(cfg, 3, {"b", "a"}), ConfigError);
  cfg.hidden.clear();
  EXPECT_THROW(ActorCritic(cfg, 3, {"a"}), ConfigError);
  EXPECT_THROW(parse_similarity("euclid"), ConfigError);
}

TEST(Policy, ObservationSizeChecked) {
  const auto m = small_policy();
  const auto p = m.initial_parameters(0);
  EXPECT_THROW(m.forward(p, std::vector<double>(4, 0.0)), UsageError);
}

TEST(Policy, BackwardMatchesFiniteDifferences) {
  for (auto sim : {Similarity::dot, Similarity::cosine}) {
    const auto m = small_policy(sim, 4);
    auto p = m.initial_parameters(9);
    Rng rng(10);
    for (double& v : p.mutable_values()) v += 0.3 * (2.0 * uniform01(rng) - 1.0);
    const auto x = features(rng);
    const std::vector<double> lg{0.3, -1.0, 0.5, 0.2};
    const double vg = 0.7;
    auto f = [&](const ParameterSet& q) {
      const auto out = m.forward(q, x);
      double s = vg * out.value;
      for (std::size_t k = 0; k < lg.size(); ++k) s += lg[k] * out.action_logits[k];
      return s;
    };
    ActorCritic::Cache cache;
    m.forward(p, x, &cache);
    GradientBuffer g(m.layout());
    m.backward(p, cache, lg, vg, g);
    for (std::size_t i = 0; i < p.size(); ++i) {
      ParameterSet q = p;
      q.mutable_values()[i] += 1e-6;
      const double up = f(q);
      q.mutable_values()[i] -= 2e-6;
      const double fd = (up - f(q)) / 2e-6;
      EXPECT_LT(rrl::testing::max_rel_error(g.values()[i], fd, 1e-6), 1e-4) << "param " << i;
    }
  }
}

TEST(Policy, CheckpointRoundTrip) {
  const auto m = small_policy(Similarity::cosine);
  const auto p = m.initial_parameters(11);
  const auto path = std::filesystem::temp_directory_path() / "rrl_policy_roundtrip.ckpt";
  m.save(path, p);
  const auto [m2, p2] = ActorCritic::load(path);
  EXPECT_EQ(m2.skills(), m.skills());
  EXPECT_EQ(m2.observation_size(), m.observation_size());
  EXPECT_EQ(m2.config().similarity, Similarity::cosine);
  ASSERT_EQ(p2.size(), p.size());
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p2.values()[i], p.values()[i]);
  Rng rng(12);
  const auto x = features(rng);
  EXPECT_EQ(m2.forward(p2, x).action_logits, m.forward(p, x).action_logits);
  std::filesystem::remove(path);
}

TEST(Policy, LoadRejectsOtherKinds) {
  approx::Layout l;
  l.add("w", {2});
  const auto path = std::filesystem::temp_directory_path() / "rrl_not_policy.ckpt";
  approx::save_checkpoint_file(path, approx::ParameterSet(l), "approx");
  EXPECT_THROW(ActorCritic::load(path), ConfigError);
  std::filesystem::remove(path);
}
