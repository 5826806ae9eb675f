#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "rrl/ablation.hpp"
#include "rrl/run_config.hpp"

using namespace rrl;
using namespace rrl::config;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = fs::path(RRL_SOURCE_DIR) / "configs";

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("rrl_cfg_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig parse_text(const std::string& text, const fs::path& base = kConfigs) {
  return parse_run_config(toml::parse(text), base);
}

std::string error_of(const std::string& text) {
  try {
    parse_text(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(RunConfig, ShippedConfigsLoad) {
  const auto c = load_run_config(kConfigs / "stick.toml");
  EXPECT_TRUE(c.recipe_book.is_absolute());
  EXPECT_TRUE(fs::exists(c.recipe_book));
  EXPECT_EQ(c.task, "stick");
  EXPECT_EQ(c.horizon, 7);
  EXPECT_EQ(c.train.reward_mode, trainer::RewardMode::er_ar4);
  EXPECT_EQ(c.train.iterations, 10);
  EXPECT_EQ(c.policy.hidden, (std::vector<std::size_t>{64, 64}));
  EXPECT_DOUBLE_EQ(c.scale.a, 0.05);
  EXPECT_EQ(c.eval_mode, "sample");
  const auto abl = load_run_config(kConfigs / "ablation.toml");
  EXPECT_GE(abl.ladder.size(), 2u);
  EXPECT_GE(abl.seeds.size(), 5u);
  const auto lh = load_run_config(kConfigs / "long_horizon.toml");
  EXPECT_EQ(lh.task, "enchanted_sword");
}

TEST(RunConfig, OverridesApply) {
  const auto c = load_run_config(kConfigs / "stick.toml",
                                 {"train.reward_mode=ER", "train.seed=17", "train.lr=0.5", "run.run_id=abc",
                                  "referee.flip_prob=0.25", "train.hidden=[8]"});
  EXPECT_EQ(c.train.reward_mode, trainer::RewardMode::er);
  EXPECT_EQ(c.train.seed, 17u);
  EXPECT_DOUBLE_EQ(c.train.optimizer.lr, 0.5);
  EXPECT_EQ(c.run_id, "abc");
  EXPECT_DOUBLE_EQ(c.flip_prob, 0.25);
  EXPECT_EQ(c.policy.hidden, (std::vector<std::size_t>{8}));
  EXPECT_THROW(load_run_config(kConfigs / "stick.toml", {"novalue"}), ConfigError);
  EXPECT_THROW(load_run_config(kConfigs / "stick.toml", {"train.lr.x=1"}), ConfigError);
}

TEST(RunConfig, FieldLevelErrors) {
  const std::string env = "[env]\nrecipe_book = \"../data/recipe_book.toml\"\ntask = \"stick\"\n";
  EXPECT_NE(error_of(env + "[train]\nlrr = 1\n").find("train.lrr: unknown key"), std::string::npos)
      << error_of(env + "[train]\nlrr = 1\n");
  EXPECT_NE(error_of(env + "[train]\nreward_mode = \"AR9\"\n").find("AR9"), std::string::npos);
  EXPECT_NE(error_of(env + "[train]\niterations = \"ten\"\n").find("train.iterations"), std::string::npos);
  EXPECT_NE(error_of(env + "[referee]\nbackend = \"human\"\n").find("referee.backend"), std::string::npos);
  EXPECT_NE(error_of(env + "[referee]\nbackend = \"llm\"\n").find("referee.url"), std::string::npos);
  EXPECT_NE(error_of(env + "[bogus]\nx = 1\n").find("bogus"), std::string::npos);
  EXPECT_NE(error_of("[env]\nrecipe_book = \"missing.toml\"\ntask = \"stick\"\n").find("missing.toml"),
            std::string::npos);
  EXPECT_FALSE(error_of(env).size());
}

TEST(RunConfig, ErrorNamesTheBadKey) {
  const std::string env = "[env]\nrecipe_book = \"../data/recipe_book.toml\"\ntask = \"stick\"\n";
  EXPECT_NE(error_of(env + "[referee]\nr_a = \"high\"\n").find("referee.r_a"), std::string::npos);
  EXPECT_NE(error_of(env + "[run]\nseeds = [1, -2]\n").find("run.seeds"), std::string::npos);
}

TEST(RunConfig, SnapshotRoundTrip) {
  const auto c = load_run_config(kConfigs / "ablation.toml", {"train.seed=3", "referee.r_b=0.03"});
  const auto dir = scratch("snapshot");
  fs::copy_file(c.recipe_book, dir / "recipe_book.toml");
  std::ofstream(dir / "config.toml") << to_toml_text(to_document(c, "recipe_book.toml"));
  const auto back = load_run_config(dir / "config.toml");
  EXPECT_EQ(to_toml_text(to_document(back, "recipe_book.toml")), to_toml_text(to_document(c, "recipe_book.toml")));
  EXPECT_EQ(back.train.seed, 3u);
  EXPECT_EQ(back.scale.b, 0.03);
  EXPECT_EQ(back.ladder.size(), c.ladder.size());
  EXPECT_EQ(back.train.optimizer.lr, c.train.optimizer.lr);
  fs::remove_all(dir);
}

TEST(RunConfig, RunDirLayout) {
  auto c = load_run_config(kConfigs / "stick.toml");
  const auto root = scratch("rundir");
  c.output_dir = root;
  c.run_id = "fixed";
  const auto dir = create_run_dir(c);
  EXPECT_EQ(dir.root, root / "fixed");
  EXPECT_TRUE(fs::exists(dir.config()));
  EXPECT_TRUE(fs::exists(dir.recipe_book()));
  EXPECT_TRUE(fs::is_directory(dir.checkpoints()));
  EXPECT_EQ(dir.checkpoint(5).filename(), "iter_000005.ckpt");
  const auto snap = load_run_config(dir.config());
  EXPECT_TRUE(snap.run_id.empty());
  EXPECT_EQ(fs::canonical(snap.recipe_book), fs::canonical(dir.recipe_book()));
  EXPECT_THROW(create_run_dir(c), ConfigError);
  c.run_id.clear();
  const auto a = create_run_dir(c), b = create_run_dir(c);
  EXPECT_NE(a.root, b.root);
  fs::remove_all(root);
}

TEST(RunConfig, RecordRoundTrip) {
  RunRecord r;
  r.run_id = "x-s1";
  r.version = "v1";
  r.started = "2026-01-01T00:00:00Z";
  r.status = "completed";
  r.task = "stick";
  r.reward_mode = "ER+AR4";
  r.seed = 42;
  r.iterations_completed = 10;
  r.final_checkpoint = "checkpoints/final.ckpt";
  r.message = "ok";
  const auto dir = scratch("record");
  r.save(dir / "record.toml");
  const auto back = RunRecord::load(dir / "record.toml");
  EXPECT_EQ(back.run_id, r.run_id);
  EXPECT_EQ(back.status, r.status);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.iterations_completed, 10);
  EXPECT_EQ(back.final_checkpoint, r.final_checkpoint);
  EXPECT_EQ(back.message, "ok");
  fs::remove_all(dir);
}

TEST(RunConfig, RefereeFactory) {
  const auto c = load_run_config(kConfigs / "stick.toml");
  const craftworld::CraftWorld w(env_config(c));
  EXPECT_EQ(make_referee(c, w, trainer::RewardMode::er), nullptr);
  EXPECT_EQ(make_referee(c, w, trainer::RewardMode::er_lar)->name(), "noisy");
  EXPECT_EQ(make_referee(c, w, trainer::RewardMode::er_ar2)->name(), "binary");
  EXPECT_EQ(make_referee(c, w, trainer::RewardMode::er_ar4)->name(), "oracle");
  EXPECT_EQ(w.config().horizon, 7);
}

TEST(Ablation, FormattingAndSummary) {
  ablation::AblationResult r;
  r.tasks = {"stick"};
  for (int s = 1; s <= 3; ++s) {
    ablation::CellResult cell;
    cell.task = "stick";
    cell.mode = trainer::RewardMode::er_ar4;
    cell.seed = static_cast<std::uint64_t>(s);
    cell.ok = true;
    cell.success_rate = 0.5 + 0.1 * s;
    r.cells.push_back(cell);
  }
  const auto sum = r.summary("stick", trainer::RewardMode::er_ar4);
  EXPECT_NEAR(sum.mean, 0.7, 1e-12);
  EXPECT_NEAR(sum.sd, 0.1, 1e-12);
  EXPECT_EQ(sum.n, 3);
  EXPECT_EQ(ablation::format_cell(sum), "0.70 ± 0.10");
  EXPECT_FALSE(r.any_failed());
  EXPECT_EQ(ablation::cell_name("stick", trainer::RewardMode::er_ar4, 1), "stick_ER_AR4_s1");
  std::ostringstream md;
  ablation::write_markdown(md, r);
  EXPECT_NE(md.str().find("| ER+AR4 | 0.70 ± 0.10 |"), std::string::npos) << md.str();
}
