#include <gtest/gtest.h>

#include <cstdlib>

#include "ticketforge/config.hpp"
#include "ticketforge/error.hpp"
#include "ticketforge/experiment.hpp"

namespace tf = ticketforge;

namespace {

std::string config_error(std::string_view text) {
  try {
    tf::parse_config(text);
  } catch (const tf::ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, EmptyObjectGivesDefaults) {
  const auto c = tf::parse_config("{}");
  EXPECT_EQ(c.tasks.size(), 5u);
  EXPECT_EQ(c.prune.rounds, 9);
  EXPECT_EQ(c.round_for(0.5), 7);
  EXPECT_EQ(c.round_for(0.6), 9);
  EXPECT_EQ(c.resolved_sources().back(), "pretext");
  EXPECT_EQ(c.resolved_adv_tasks().size(), 3u);
  EXPECT_EQ(c.resolved_pretext_steps(), 80);
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_NE(config_error(R"({"budget": {"stepz": 3}})").find("budget.stepz"), std::string::npos);
  EXPECT_NE(config_error(R"({"arch": {"hidden": -1}})").find("arch.hidden"), std::string::npos);
  EXPECT_NE(config_error(R"({"budget": {"lr": 0}})").find("budget.lr"), std::string::npos);
  EXPECT_NE(config_error(R"({"prune": {"rate_per_round": 1.5}})").find("prune.rate_per_round"), std::string::npos);
  EXPECT_NE(config_error(R"({"sources": ["nope"]})").find("sources"), std::string::npos);
  EXPECT_NE(config_error(R"({"sparsities": [0.9]})").find("sparsities"), std::string::npos);
  EXPECT_NE(config_error(R"({"adv": {"epsilon": -1}})").find("adv.epsilon"), std::string::npos);
  EXPECT_NE(config_error("{not json").find("config"), std::string::npos);
}

TEST(Config, EchoRoundTripsAndHashIgnoresKeyOrderAndOutputDir) {
  const auto a = tf::parse_config(R"({"seeds": [1, 2], "budget": {"steps": 10, "lr": 0.2}})");
  const auto b = tf::parse_config(R"({"budget": {"lr": 0.2, "steps": 10}, "seeds": [1, 2], "output_dir": "x"})");
  EXPECT_EQ(tf::config_hash(a), tf::config_hash(b));
  const auto echoed = tf::parse_config(tf::echo_config(a));
  EXPECT_EQ(tf::config_hash(echoed), tf::config_hash(a));
  EXPECT_EQ(tf::echo_config(echoed), tf::echo_config(a));
  const auto c = tf::parse_config(R"({"seeds": [1, 3]})");
  EXPECT_NE(tf::config_hash(a), tf::config_hash(c));
}

TEST(Config, TargetSparsityResolvesRounds) {
  const auto c = tf::parse_config(R"({"prune": {"target_sparsity": 0.7}})");
  EXPECT_EQ(c.prune.resolved_rounds(), 12);
}

TEST(Config, OutputRootPrecedence) {
  tf::RunConfig c;
  ::unsetenv("TICKET_FORGE_OUT");
  EXPECT_EQ(tf::resolve_output_root(std::nullopt, c), "ticket-forge-out");
  ::setenv("TICKET_FORGE_OUT", "/env", 1);
  EXPECT_EQ(tf::resolve_output_root(std::nullopt, c), "/env");
  c.output_dir = "/cfg";
  EXPECT_EQ(tf::resolve_output_root(std::nullopt, c), "/cfg");
  EXPECT_EQ(tf::resolve_output_root(std::filesystem::path("/cli"), c), "/cli");
  ::unsetenv("TICKET_FORGE_OUT");
}

TEST(Config, CommandNames) {
  EXPECT_EQ(tf::command_from_string("adv-find"), tf::Command::adv_find);
  EXPECT_EQ(tf::to_string(tf::Command::adv_eval), "adv-eval");
  EXPECT_THROW(tf::command_from_string("prune"), tf::ConfigError);
}
