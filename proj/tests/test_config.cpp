#include <gtest/gtest.h>

#include <string>

#include "wcrit/config.hpp"

#ifndef WCRIT_CONFIG_DIR
#define WCRIT_CONFIG_DIR "configs"
#endif

using namespace wcrit;

TEST(Config, ValuesAndDefaults) {
  const auto c = parse_config_text("env.kind=chain\ngamma=0.99\n");
  EXPECT_EQ(c.gamma, 0.99);
  EXPECT_EQ(c.critic.K, 16u);
  EXPECT_EQ(c.critic.M, 8u);
  EXPECT_EQ(c.critic.kappa, 0.1);
  EXPECT_EQ(c.critic.lambda_c, 0.3);
}

TEST(Config, CommentsAndWhitespace) {
  const auto c = parse_config_text("# run\n  env.kind = corridor  \n\ncritic.hidden=32,16\ncritic.shortcut=true\n");
  EXPECT_EQ(c.env.kind, EnvKind::corridor);
  EXPECT_EQ(c.critic.hidden, (std::vector<std::size_t>{32, 16}));
  EXPECT_TRUE(c.critic.shortcut_enabled);
}

TEST(Config, UnknownKeyNamesKeyAndLine) {
  try {
    parse_config_text("env.kind=chain\nbogus=1\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos);
  }
}

TEST(Config, MalformedValues) {
  for (const char* text : {"env.kind=chain\ngamma=abc\n", "env.kind=chain\ncritic.K=-3\n", "env.kind=chain\ncritic.shortcut=maybe\n",
                           "env.kind=nowhere\n", "env.kind=chain\nseed=1.5\n", "env.kind=chain\ngamma\n"}) {
    EXPECT_THROW(parse_config_text(text), ParseError) << text;
  }
}

TEST(Config, MissingRequiredKindAndDuplicates) {
  EXPECT_THROW(parse_config_text("gamma=0.5\n"), ParseError);
  EXPECT_THROW(parse_config_text("env.kind=chain\ngamma=0.5\ngamma=0.6\n"), ParseError);
}

TEST(Config, FullRangeSeeds) {
  const auto c = parse_config_text("env.kind=chain\nseed=18446744073709551615\n");
  EXPECT_EQ(c.seed, 18446744073709551615ull);
}

TEST(Config, OverridesAndAssignments) {
  auto c = parse_config_text("env.kind=chain\n");
  apply_override(c, "critic.M", "4");
  EXPECT_EQ(c.critic.M, 4u);
  EXPECT_THROW(apply_override(c, "critic.nope", "1"), ParseError);
  EXPECT_EQ(split_assignment(" critic.K = 8 "), std::make_pair(std::string("critic.K"), std::string("8")));
  EXPECT_THROW(split_assignment("critic.K"), ParseError);
}

TEST(Config, ShippedConfigsRoundTrip) {
  for (const char* name : {"chain_bimodal.cfg", "corridor_offline.cfg", "contraction.cfg"}) {
    const auto c = parse_config(std::string(WCRIT_CONFIG_DIR) + "/" + name);
    EXPECT_NO_THROW(c.validate()) << name;
    EXPECT_TRUE(parse_config_text(serialize_config(c)) == c) << name;
  }
}

TEST(Config, ValidationRejectsBadRanges) {
  auto c = parse_config_text("env.kind=chain\n");
  c.gamma = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = parse_config_text("env.kind=chain\ncritic.lambda_c=1.5\n");
  EXPECT_THROW(c.validate(), ConfigError);
}
