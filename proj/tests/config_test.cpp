#include <gtest/gtest.h>

#include "support/temp_dir.hpp"
#include "wdae/config.hpp"
#include "wdae/errors.hpp"

using namespace wdae;

TEST(RunConfig, PresetsCarryTheirHyperparameters) {
  const RunConfig mini = RunConfig::preset("miniimagenet");
  EXPECT_EQ(mini.get_count("hidden_width"), 320u);
  EXPECT_EQ(mini.get_real("dropout"), 0.95);
  EXPECT_EQ(mini.get_real("noise_sigma"), 0.1);
  EXPECT_EQ(mini.epsilon_for(1), 1.0);
  EXPECT_EQ(mini.epsilon_for(5), 0.5);
  EXPECT_EQ(mini.get_count("eval_episodes"), 20000u);

  const RunConfig fs = RunConfig::preset("imagenet-fs");
  EXPECT_EQ(fs.get_count("hidden_width"), 1024u);
  EXPECT_EQ(fs.get_real("dropout"), 0.7);
  EXPECT_EQ(fs.get_real("noise_sigma"), 0.08);
  const std::vector<std::pair<std::size_t, double>> table{{1, 1.0}, {2, 1.0}, {5, 0.6}, {10, 0.4}, {20, 0.2}};
  for (auto [k, eps] : table) EXPECT_EQ(fs.epsilon_for(k), eps) << k;
  EXPECT_THROW((void)fs.epsilon_for(3), ConfigError);
  EXPECT_EQ(fs.get_real("momentum"), 0.9);
  EXPECT_EQ(fs.get_real("weight_decay"), 5e-4);
  EXPECT_EQ(fs.get_count("neighbors"), 10u);
  EXPECT_EQ(fs.get_real("inverse_temperature"), 5.0);
  EXPECT_FALSE(fs.eval().ways.has_value());
  EXPECT_EQ(fs.eval().topk, (std::vector<std::size_t>{1, 5}));
  EXPECT_TRUE(fs.eval().include_base);
}

TEST(RunConfig, ImagenetEpisodeSizesMustBeGiven) {
  RunConfig fs = RunConfig::preset("imagenet-fs");
  EXPECT_FALSE(fs.has("num_fake_novel"));
  try {
    (void)fs.episode();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("imagenet-fs"), std::string::npos);
  }
  fs.set("num_fake_novel", "50");
  fs.set("num_validation", "100");
  EXPECT_EQ(fs.episode().num_fake_novel, 50u);
}

TEST(RunConfig, UnknownKeysAndPresetsRejected) {
  RunConfig c = RunConfig::preset();
  EXPECT_THROW(c.set("hidden", "3"), ConfigError);
  EXPECT_THROW((void)RunConfig::preset("cifar"), ConfigError);
  EXPECT_THROW(c.set("dropout", "abc"), ConfigError);
  EXPECT_THROW(c.set("epochs", "-1"), ConfigError);
  EXPECT_THROW(c.set("variant", "cnn"), ConfigError);
  EXPECT_THROW(c.set("epsilon", "-0.5"), ConfigError);
  EXPECT_THROW(c.set("ways", "0"), ConfigError);
  EXPECT_THROW(c.set("stratified", "maybe"), ConfigError);
}

TEST(RunConfig, DigestMovesOnlyWithEffectiveValues) {
  RunConfig a = RunConfig::preset(), b = RunConfig::preset();
  EXPECT_EQ(a.digest(), b.digest());
  b.set("dropout", "0.930");
  b.set("topk", "1, 1");
  b.set("stratified", "yes");
  EXPECT_EQ(a.digest(), b.digest());
  b.set("seed", "1");
  EXPECT_NE(a.digest(), b.digest());
  b.set("seed", "0");
  EXPECT_EQ(a.digest(), b.digest());
  EXPECT_NE(RunConfig::preset("synthetic").digest(), RunConfig::preset("miniimagenet").digest());
}

TEST(RunConfig, CanonicalForms) {
  EXPECT_EQ(canonicalize("topk", "5,1,5"), "1,5");
  EXPECT_EQ(canonicalize("ways", " all "), "all");
  EXPECT_EQ(canonicalize("epsilon", "auto"), "auto");
  EXPECT_EQ(canonicalize("epsilon", "0"), "0");
  EXPECT_EQ(canonicalize("no_noise", "1"), "true");
  EXPECT_EQ(canonicalize("lr", "1e-1"), "0.10000000000000001");
}

TEST(RunConfig, FileOverridesWithComments) {
  testing_support::TempDir dir;
  testing_support::write_file(dir / "run.cfg", "# header\nhidden_width = 32  # narrower\n\nvariant=mlp\n");
  RunConfig c = RunConfig::preset();
  c.load_file(dir / "run.cfg");
  EXPECT_EQ(c.get_count("hidden_width"), 32u);
  EXPECT_EQ(c.model(8).variant, Variant::mlp);
  testing_support::write_file(dir / "bad.cfg", "hidden_width 32\n");
  EXPECT_THROW(c.load_file(dir / "bad.cfg"), ConfigError);
  testing_support::write_file(dir / "bad2.cfg", "\nbogus = 1\n");
  try {
    c.load_file(dir / "bad2.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(RunConfig, StageConfigsFollowTheValues) {
  RunConfig c = RunConfig::preset();
  c.set("classes", "40");
  c.set("shots", "5");
  c.set("seed", "9");
  const SyntheticConfig s = c.synthetic();
  EXPECT_EQ(s.num_base + s.num_novel_val + s.num_novel_test, 40u);
  EXPECT_EQ(s.num_base, 13u);
  EXPECT_EQ(s.seed, 9u);
  EXPECT_EQ(c.eval().epsilon, 0.5);
  EXPECT_EQ(c.eval().ways, 20u);
  c.set("epsilon", "0.25");
  EXPECT_EQ(c.eval().epsilon, 0.25);
  EXPECT_EQ(c.train().seed, 9u);
  EXPECT_EQ(c.model(32).hidden_width, 256u);
  c.set("classes", "5");
  EXPECT_THROW((void)c.synthetic(), ConfigError);
}
