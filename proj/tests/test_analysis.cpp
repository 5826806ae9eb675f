#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rrl/analysis.hpp"
#include "rrl/stats.hpp"
#include "support/test_support.hpp"

using namespace rrl;
using namespace rrl::analysis;

TEST(SparseReward, Examples) {
  EXPECT_EQ(sparse_reward_trajectory(3, 0.01, 1.0), (std::vector<double>{-0.01, -0.01, 0.99}));
  EXPECT_EQ(sparse_reward_trajectory(4, 0.0, 2.0), (std::vector<double>{0, 0, 0, 2.0}));
  for (int T : {1, 7, 200}) EXPECT_EQ(sparse_reward_trajectory(T, 0.01, 1.0).size(), static_cast<std::size_t>(T));
  EXPECT_THROW(sparse_reward_trajectory(0, 0.01, 1.0), UsageError);
}

TEST(ConvergedGae, ClosedFormValues) {
  EXPECT_EQ(converged_critic_gae(10, 9, 0.99, 0.95, 1.0), 1.0);
  EXPECT_NEAR(converged_critic_gae(201, 0, 0.99, 0.95, 1.0), 4.696e-6, 1e-9);
  for (int t = 0; t + 1 < 50; ++t)
    EXPECT_NEAR(converged_critic_gae(50, t, 0.99, 0.95, 1.0) / converged_critic_gae(50, t + 1, 0.99, 0.95, 1.0),
                0.9405, 1e-14);
  EXPECT_THROW(converged_critic_gae(5, 5, 0.99, 0.95, 1.0), UsageError);
}

TEST(ConvergedGae, TdProfileHasSingleNonzeroError) {
  const double gamma = 0.99;
  const auto p = converged_td_profile(30, gamma, 0.01, 1.0);
  for (std::size_t k = 0; k < 30; ++k) {
    const double next = p.dones[k] ? 0.0 : gamma * p.values[k + 1];
    EXPECT_NEAR(p.rewards[k] + next - p.values[k], k == 29 ? 1.0 : 0.0, 1e-15);
  }
}

TEST(ConvergedGae, MatchesComputeGae) {
  const auto prof = closed_form_profile(0.99, 0.95, 1.0, 200);
  ASSERT_EQ(prof.horizon_offsets.size(), 201u);
  for (std::size_t k = 0; k < prof.gae_values.size(); ++k) {
    EXPECT_NEAR(prof.gae_values[k], prof.closed_form[k], 1e-12);
    if (k) {
      EXPECT_LT(prof.closed_form[k], prof.closed_form[k - 1]);
    }
  }
  EXPECT_THROW(closed_form_profile(1.0, 1.0, 1.0, 10), ConfigError);
}

TEST(ConvergedGae, InvariantToStepPenalty) {
  const auto base = closed_form_profile(0.99, 0.95, 1.0, 120, 0.0);
  for (double eps : {0.01, 0.1}) {
    const auto p = closed_form_profile(0.99, 0.95, 1.0, 120, eps);
    EXPECT_EQ(p.closed_form, base.closed_form);
    for (std::size_t k = 0; k < p.gae_values.size(); ++k) EXPECT_NEAR(p.gae_values[k], base.gae_values[k], 1e-12);
  }
}

TEST(Empirical, DecaysAndIsDeterministic) {
  const craftworld::CraftWorld w(rrl::testing::default_config());
  EmpiricalConfig cfg;
  cfg.episodes = 40;
  cfg.critic_epochs = 30;
  cfg.seed = 3;
  const auto a = empirical_vanishment(w, {"stick", 1}, cfg);
  ASSERT_FALSE(a.empty());
  EXPECT_GT(a.successes, 30);
  EXPECT_EQ(a.profile.horizon_offsets.front(), 0);
  EXPECT_GT(a.profile.gae_values.front(), 2.0 * mean_beyond(a.profile, 10));
  const auto b = empirical_vanishment(w, {"stick", 1}, cfg);
  EXPECT_EQ(a.profile.gae_values, b.profile.gae_values);
  EXPECT_EQ(a.final_critic_loss, b.final_critic_loss);
}

TEST(Empirical, RefereeKeepsAdvantagesAlive) {
  const craftworld::CraftWorld w(rrl::testing::default_config());
  EmpiricalConfig cfg;
  cfg.episodes = 40;
  cfg.critic_epochs = 30;
  cfg.seed = 4;
  const craftworld::TaskTarget t{"wooden_pickaxe", 1};
  const auto er = empirical_vanishment(w, t, cfg);
  referee::OracleReferee oracle(w);
  const auto ar = empirical_vanishment(w, t, cfg, &oracle);
  ASSERT_FALSE(er.empty());
  ASSERT_FALSE(ar.empty());
  EXPECT_GT(mean_beyond(ar.profile, 20), 3.0 * mean_beyond(er.profile, 20));
}

TEST(Empirical, NoSuccessGivesEmptyProfile) {
  auto c = rrl::testing::default_config();
  c.horizon = 40;
  const craftworld::CraftWorld w(c);
  EmpiricalConfig cfg;
  cfg.episodes = 5;
  cfg.critic_epochs = 2;
  const auto p = empirical_vanishment(w, {"stone_pickaxe", 1}, cfg);
  EXPECT_TRUE(p.empty());
  EXPECT_EQ(p.successes, 0);
  EXPECT_TRUE(std::isnan(decay_rank_correlation(p)));
}

TEST(Export, SeriesCsvAndSvg) {
  const auto prof = closed_form_profile(0.99, 0.95, 1.0, 3);
  std::ostringstream ss;
  write_series_csv(ss, prof.horizon_offsets, prof.closed_form);
  std::istringstream lines(ss.str());
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "offset,A_t");
  for (std::size_t k = 0; std::getline(lines, line); ++k) {
    const auto comma = line.find(',');
    EXPECT_EQ(std::stoi(line.substr(0, comma)), prof.horizon_offsets[k]);
    EXPECT_EQ(std::stod(line.substr(comma + 1)), prof.closed_form[k]);  // 17 digits round-trip
  }
  const auto path = std::filesystem::temp_directory_path() / "rrl_decay_test.svg";
  const std::vector<PlotSeries> series{{"closed form", prof.horizon_offsets, prof.closed_form}};
  write_decay_svg(path, series);
  std::ifstream in(path);
  std::string head;
  std::getline(in, head);
  EXPECT_NE(head.find("<svg"), std::string::npos);
  std::filesystem::remove(path);
}

TEST(Stats, WilsonInterval) {
  const auto ci = stats::wilson_interval(8, 10);
  EXPECT_NEAR(ci.low, 0.4901625, 1e-6);
  EXPECT_NEAR(ci.high, 0.9433178, 1e-6);
  const auto zero = stats::wilson_interval(0, 20);
  EXPECT_EQ(zero.low, 0.0);
  EXPECT_GT(zero.high, 0.0);
}

TEST(Stats, SpearmanAndRanks) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(stats::spearman(x, std::vector<double>{2, 4, 8, 16, 32}), 1.0);
  EXPECT_DOUBLE_EQ(stats::spearman(x, std::vector<double>{5, 3, 2, 1, 0}), -1.0);
  EXPECT_EQ(stats::ranks(std::vector<double>{10, 20, 20, 5}), (std::vector<double>{2, 3.5, 3.5, 1}));
  EXPECT_DOUBLE_EQ(stats::mean(x), 3.0);
  EXPECT_NEAR(stats::stddev(x), std::sqrt(2.5), 1e-15);
}
