#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#ifndef WCRIT_CLI
#define WCRIT_CLI "wcrit"
#endif
#ifndef WCRIT_CONFIG_DIR
#define WCRIT_CONFIG_DIR "configs"
#endif
#ifndef WCRIT_SCRATCH
#define WCRIT_SCRATCH "cli_scratch"
#endif

namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + WCRIT_CLI + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(is, l);)
    if (!l.empty()) out.push_back(l);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::path(WCRIT_SCRATCH) / name;
  fs::remove_all(p);
  return p;
}

const std::string kChain = std::string("--config ") + WCRIT_CONFIG_DIR + "/chain_bimodal.cfg";
const std::string kSmall = " --set critic.hidden=16 --set critic.embed_dim=8 --set train.eval_samples=16";

}  // namespace

TEST(Cli, EvalFixedZeroStepsWritesOneRow) {
  const auto out = scratch("zero");
  ASSERT_EQ(run("eval-fixed " + kChain + " --set train.steps=0 --out " + out.string()), 0);
  const auto rows = lines(out / "metrics.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], "step,mean_w2,iqm_neg_w2,sup_w2,loss");
  EXPECT_EQ(rows[1].substr(0, 2), "0,");
  for (const char* f : {"config.cfg", "events.jsonl", "final_w2.csv", "critic.meta", "critic_0.ckpt", "mean_w2.svg"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
}

TEST(Cli, UnknownSubcommandFails) {
  EXPECT_NE(run("frobnicate"), 0);
  EXPECT_NE(run(""), 0);
}

TEST(Cli, ParseErrorsExitTwo) {
  const auto out = scratch("bad");
  EXPECT_EQ(run("eval-fixed " + kChain + " --set bogus=1 --out " + out.string()), 2);
  EXPECT_EQ(run("eval-fixed --config /nonexistent.cfg --out " + out.string()), 1);
}

TEST(Cli, SeedFlagOverridesConfigAndEnvironment) {
  const auto a = scratch("seed_a"), b = scratch("seed_b");
  const std::string common = "eval-fixed " + kChain + kSmall + " --set train.steps=20 --set train.eval_every=20";
  ASSERT_EQ(run(common + " --seed 5 --out " + a.string()), 0);
  ASSERT_EQ(run(common + " --seed 5 --out " + b.string(), "WCRIT_SEED=9"), 0);
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  EXPECT_NE(slurp(a / "config.cfg").find("seed=5\n"), std::string::npos);
}

TEST(Cli, SweepShape) {
  const auto out = scratch("sweep");
  ASSERT_EQ(run("sweep " + kChain + kSmall +
                " --set train.steps=20 --set train.eval_every=10 --over critic.M=2,4 --seeds 3 --out " + out.string()),
            0);
  const auto runs = lines(out / "runs.csv");
  const auto summary = lines(out / "summary.csv");
  EXPECT_EQ(runs.size(), 7u);
  EXPECT_EQ(summary.size(), 3u);
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 3; ++k) EXPECT_TRUE(fs::exists(out / ("cfg" + std::to_string(i) + "_seed" + std::to_string(k)) / "metrics.csv"));
}

TEST(Cli, SingleSeedSweepMatchesPlainRun) {
  const auto plain = scratch("plain"), sw = scratch("single");
  const std::string common = kChain + kSmall + " --set train.steps=20 --set train.eval_every=10 --seed 3";
  ASSERT_EQ(run("eval-fixed " + common + " --out " + plain.string()), 0);
  ASSERT_EQ(run("sweep " + common + " --seeds 1 --out " + sw.string()), 0);
  EXPECT_EQ(slurp(plain / "metrics.csv"), slurp(sw / "cfg0_seed0" / "metrics.csv"));
}

TEST(Cli, SweepRejectsUnknownKeyBeforeRunning) {
  const auto out = scratch("sweep_bad");
  EXPECT_EQ(run("sweep " + kChain + " --over critic.bogus=1,2 --out " + out.string()), 2);
  EXPECT_FALSE(fs::exists(out / "cfg0_seed0"));
}

TEST(Cli, ContractionAndProps) {
  const auto out = scratch("contraction");
  ASSERT_EQ(run("contraction --config " + std::string(WCRIT_CONFIG_DIR) + "/contraction.cfg --out " + out.string()), 0);
  const auto rows = lines(out / "contraction.csv");
  EXPECT_EQ(rows[0], "sweep,distance,ratio,bound");
  EXPECT_EQ(rows.size(), 62u);
  const auto props = scratch("props");
  EXPECT_EQ(run("props --out " + props.string()), 0);
  EXPECT_TRUE(fs::exists(props / "props.csv"));
}
