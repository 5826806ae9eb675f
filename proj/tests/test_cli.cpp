#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = fs::path(RRL_SOURCE_DIR) / "configs";

struct Outcome {
  int code = -1;
  std::string output;
};

Outcome rrl(const std::string& args, const fs::path& work) {
  const auto log = work / "cli.log";
  const std::string cmd = std::string("\"") + RRL_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    work_ = fs::temp_directory_path() / ("rrl_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(work_);
    fs::create_directories(work_);
  }
  void TearDown() override { fs::remove_all(work_); }

  std::string quick_train(const std::string& id, const std::string& extra = "") {
    return "train --config " + (kConfigs / "stick.toml").string() + " --out " + work_.string() + " --run-id " + id +
           " --set train.iterations=2 train.rollout_steps=64 run.eval_episodes=5 run.checkpoint_every=1" + extra;
  }

  fs::path work_;
};

}  // namespace

TEST_F(Cli, HelpAndUsage) {
  EXPECT_EQ(rrl("--help", work_).code, 0);
  EXPECT_EQ(rrl("", work_).code, 2);
  EXPECT_EQ(rrl("train", work_).code, 2);
  EXPECT_EQ(rrl("frobnicate", work_).code, 2);
}

TEST_F(Cli, TrainWritesRunDirectory) {
  const auto r = rrl(quick_train("a"), work_);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto dir = work_ / "a";
  for (const char* f : {"config.toml", "recipe_book.toml", "metrics.csv", "record.toml", "checkpoints/final.ckpt",
                        "checkpoints/iter_000001.ckpt", "checkpoints/iter_000002.ckpt"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const auto metrics = slurp(dir / "metrics.csv");
  EXPECT_EQ(metrics.rfind("iteration,env_steps,mean_return,success_rate", 0), 0u);
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 3);
  const auto record = slurp(dir / "record.toml");
  EXPECT_NE(record.find("status = 'completed'"), std::string::npos) << record;
}

TEST_F(Cli, TrainIsDeterministicAndSnapshotReproduces) {
  ASSERT_EQ(rrl(quick_train("a"), work_).code, 0);
  ASSERT_EQ(rrl(quick_train("b"), work_).code, 0);
  const auto a = slurp(work_ / "a" / "metrics.csv");
  EXPECT_EQ(a, slurp(work_ / "b" / "metrics.csv"));
  const auto r = rrl("train --config " + (work_ / "a" / "config.toml").string() + " --out " + work_.string() +
                         " --run-id c",
                     work_);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(a, slurp(work_ / "c" / "metrics.csv"));
}

TEST_F(Cli, TrainConfigErrorsExitTwo) {
  auto r = rrl("train --config " + (work_ / "nope.toml").string(), work_);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("nope.toml"), std::string::npos);
  r = rrl(quick_train("x", " train.bogus=1"), work_);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("train.bogus"), std::string::npos);
  r = rrl(quick_train("y") + " --reward-mode AR7", work_);
  EXPECT_EQ(r.code, 2);
  r = rrl(quick_train("z", " train.iterations=many"), work_);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("train.iterations"), std::string::npos);
  r = rrl(quick_train("h", " env.horizon=2"), work_);
  EXPECT_EQ(r.code, 2);
  ASSERT_EQ(rrl(quick_train("dup"), work_).code, 0);
  EXPECT_EQ(rrl(quick_train("dup"), work_).code, 2);
}

TEST_F(Cli, EvalCheckpoint) {
  ASSERT_EQ(rrl(quick_train("a"), work_).code, 0);
  const auto ckpt = work_ / "a" / "checkpoints" / "final.ckpt";
  const auto out = work_ / "eval";
  auto r = rrl("eval --checkpoint " + ckpt.string() + " --episodes 4 --mode sample --out " + out.string(), work_);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(out / "eval.csv"));
  EXPECT_TRUE(fs::exists(out / "eval.md"));
  EXPECT_TRUE(fs::exists(out / "episode_000.csv"));
  EXPECT_TRUE(fs::exists(out / "episode_003.csv"));
  EXPECT_EQ(rrl("eval --checkpoint " + ckpt.string() + " --episodes 0", work_).code, 2);
  EXPECT_EQ(rrl("eval --checkpoint " + ckpt.string() + " --mode fuzzy", work_).code, 2);
  EXPECT_NE(rrl("eval --checkpoint " + (work_ / "missing.ckpt").string(), work_).code, 0);
}

TEST_F(Cli, AnalyzeClosedForm) {
  const auto csv = work_ / "v.csv", svg = work_ / "v.svg";
  auto r = rrl("analyze --out " + csv.string() + " --plot " + svg.string(), work_);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto text = slurp(csv);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 202);
  EXPECT_TRUE(fs::exists(svg));
  EXPECT_EQ(rrl("analyze --gamma 1 --lam 1 --out " + csv.string(), work_).code, 2);
}

TEST_F(Cli, AblateNeedsTwoSeeds) {
  const auto r = rrl("ablate --config " + (kConfigs / "ablation.toml").string() + " --seeds 1 --out " +
                         (work_ / "abl").string(),
                     work_);
  EXPECT_EQ(r.code, 2);
}

TEST_F(Cli, AblateSmallLadder) {
  const auto cfg = work_ / "tiny.toml";
  std::ofstream(cfg) << "[env]\nrecipe_book = \"" << (fs::path(RRL_DATA_DIR) / "recipe_book.toml").generic_string()
                     << "\"\ntask = \"stick\"\nhorizon = 7\n"
                        "[train]\nrollout_steps = 64\nhidden = [16]\n"
                        "[run]\neval_episodes = 4\n"
                        "[[run.ladder]]\ntask = \"stick\"\niterations = 1\n";
  const auto out = work_ / "abl";
  const auto r = rrl("ablate --config " + cfg.string() + " --seeds 1,2 --out " + out.string(), work_);
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* f : {"ablation.md", "ablation.csv", "ablation_cells.csv", "config.toml", "recipe_book.toml"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const auto md = slurp(out / "ablation.md");
  for (const char* mode : {"| ER |", "| ER+LAR |", "| ER+AR2 |", "| ER+AR4 |"})
    EXPECT_NE(md.find(mode), std::string::npos) << md;
}
