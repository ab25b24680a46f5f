#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "ticketforge/error.hpp"
#include "ticketforge/model.hpp"
#include "ticketforge/pruning.hpp"

namespace tf = ticketforge;

namespace {

tf::ArchSpec tiny_arch() {
  tf::ArchSpec a;
  a.hidden = 8;
  a.heads = 2;
  a.layers = 1;
  return a;
}

}  // namespace

TEST(Pruning, GlobalMagnitudeMatchesFullSortOracle) {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const bool ties = seed % 2 == 0;
    const auto p = tf_test::random_store(seed, ties);
    tf::Mask mask = tf::Mask::ones(p);
    for (double rate : {0.1, 0.35, 0.5}) {
      const auto next = tf::global_magnitude_prune(p, mask, rate);
      EXPECT_EQ(tf_test::newly_pruned(mask, next), tf_test::prune_oracle(p, mask, rate)) << "seed " << seed;
      mask = next;
    }
  }
}

TEST(Pruning, PrunedPositionsStayPruned) {
  auto p = tf_test::random_store(7, false);
  auto m1 = tf::global_magnitude_prune(p, tf::Mask::ones(p), 0.5);
  // Make the pruned weights the largest; they must remain pruned.
  for (const auto& e : m1.entries()) {
    for (std::size_t i = 0; i < e.keep.size(); ++i) {
      if (!e.keep[i]) p.at(e.name)[i] = 100.0;
    }
  }
  const auto m2 = tf::global_magnitude_prune(p, m1, 0.5);
  for (const auto& e : m1.entries()) {
    for (std::size_t i = 0; i < e.keep.size(); ++i) {
      if (!e.keep[i]) EXPECT_FALSE(m2.entry(e.name).keep[i]);
    }
  }
}

TEST(Pruning, RateOutsideUnitIntervalIsConfigError) {
  const auto p = tf_test::random_store(1, false);
  EXPECT_THROW(tf::global_magnitude_prune(p, tf::Mask::ones(p), 1.5), tf::ConfigError);
  EXPECT_THROW(tf::global_magnitude_prune(p, tf::Mask::ones(p), -0.1), tf::ConfigError);
}

TEST(Pruning, RandomPruneHitsExactCountAndSpreadsEvenly) {
  const auto p = tf::build_model(tiny_arch(), tf::find_task("count"), 0);
  const auto layout = tf::prunable_layout(p);
  const auto ones = tf::Mask::ones(layout);
  std::vector<double> freq(ones.total(), 0.0);
  const int trials = 200;
  for (int s = 0; s < trials; ++s) {
    const auto m = tf::random_prune(layout, 0.5, static_cast<std::uint64_t>(s));
    EXPECT_EQ(m.zeros(), static_cast<std::size_t>(std::floor(0.5 * static_cast<double>(m.total()))));
    std::size_t k = 0;
    for (const auto& e : m.entries()) {
      for (auto keep : e.keep) freq[k++] += keep ? 0.0 : 1.0 / trials;
    }
  }
  // Per-position pruning frequency averages to the rate; the spread is binomial.
  double mean = 0.0;
  for (double f : freq) mean += f / static_cast<double>(freq.size());
  EXPECT_NEAR(mean, 0.5, 0.01);
  const double sigma = std::sqrt(0.25 / trials);
  std::size_t outliers = 0;
  for (double f : freq) outliers += std::abs(f - 0.5) > 4.5 * sigma ? 1 : 0;
  EXPECT_EQ(outliers, 0u);
}

TEST(Pruning, ShuffleKeepsEachTensorsMultiset) {
  const auto p = tf::build_model(tiny_arch(), tf::find_task("count"), 0);
  const auto s = tf::shuffle_weights_within_layer(p, 5);
  for (const auto& name : p.names()) {
    auto a = p.at(name).values();
    auto b = s.at(name).values();
    if (!p.entry(name).prunable) {
      EXPECT_EQ(a, b) << name;
      continue;
    }
    if (a.size() > 4) EXPECT_NE(a, b) << name;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b) << name;
  }
  EXPECT_TRUE(s.bitwise_equal(tf::shuffle_weights_within_layer(p, 5)));
}

TEST(Pruning, CheckpointStoreRules) {
  const auto p = tf_test::random_store(1, false);
  tf::CheckpointStore store("tag");
  EXPECT_THROW(store.put(3, p), tf::StateError);
  store.put(0, p);
  store.put(5, p);
  EXPECT_THROW(store.put(5, p), tf::StateError);
  EXPECT_THROW(store.put(2, p), tf::StateError);
  EXPECT_THROW(store.get(4), tf::LookupError);
  EXPECT_TRUE(tf::rewind(store, 5).bitwise_equal(p));
  EXPECT_THROW(tf::rewind(store, 7), tf::LookupError);
  EXPECT_EQ(store.steps(), (std::vector<int>{0, 5}));
}

TEST(Pruning, RoundsForTarget) {
  EXPECT_EQ(tf::PruneConfig::rounds_for(0.1, 0.1), 1);
  EXPECT_EQ(tf::PruneConfig::rounds_for(0.1, 0.5), 7);
  EXPECT_EQ(tf::PruneConfig::rounds_for(0.1, 0.6), 9);
  EXPECT_EQ(tf::PruneConfig::rounds_for(0.2, 0.36), 2);
  EXPECT_NEAR(tf::expected_sparsity(0.1, 9), 1 - std::pow(0.9, 9), 1e-15);
}

TEST(Pruning, ImpFollowsSparsityScheduleAndRewinds) {
  const auto arch = tiny_arch();
  const auto task = tf::find_task("exists");
  const auto train = tf::gen_task(task, 1, 64, tf::Split::train, arch.data_shape());
  const auto dev = tf::gen_task(task, 1, 32, tf::Split::dev, arch.data_shape());
  tf::ImpSetup setup;
  setup.arch = arch;
  setup.task = task;
  setup.init = tf::build_model(arch, task, 2);
  setup.train = &train;
  setup.dev = &dev;
  setup.budget = {6, 8, 0.1, "sgd"};
  tf::PruneConfig pc;
  pc.rate_per_round = 0.2;
  pc.rounds = 4;
  pc.rewind_step = 2;

  const auto r = tf::imp(setup, pc, 3);
  ASSERT_EQ(r.round_masks.size(), 5u);
  ASSERT_EQ(r.round_accuracy.size(), 4u);
  std::size_t kept = r.round_masks[0].total();
  for (std::size_t k = 1; k < r.round_masks.size(); ++k) {
    kept -= static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(kept)));
    EXPECT_EQ(r.round_masks[k].kept(), kept);
  }
  EXPECT_TRUE(r.mask == r.round_masks.back());
  EXPECT_EQ(r.checkpoints.steps(), (std::vector<int>{0, 2, 6}));
  EXPECT_TRUE(r.checkpoints.get(0).bitwise_equal(setup.init));

  const auto again = tf::imp(setup, pc, 3);
  EXPECT_TRUE(again.mask == r.mask);
  EXPECT_EQ(again.round_accuracy, r.round_accuracy);
}

TEST(Pruning, RoundAccuracyEqualsTicketEvaluationWhenRewindingToStart) {
  const auto arch = tiny_arch();
  const auto task = tf::find_task("exists");
  const auto train = tf::gen_task(task, 1, 64, tf::Split::train, arch.data_shape());
  const auto dev = tf::gen_task(task, 1, 32, tf::Split::dev, arch.data_shape());
  tf::ImpSetup setup;
  setup.arch = arch;
  setup.task = task;
  setup.init = tf::attach_fresh_head(tf::build_model(arch, task, 2), arch, task, 4);
  setup.train = &train;
  setup.dev = &dev;
  setup.budget = {10, 8, 0.1, "sgd"};
  tf::PruneConfig pc;
  pc.rate_per_round = 0.3;
  pc.rounds = 2;
  const auto r = tf::imp(setup, pc, 4);
  for (std::size_t k = 0; k < r.round_accuracy.size(); ++k) {
    const auto ev = tf::evaluate_ticket(r.round_masks[k], setup.init, arch, task, train, dev, setup.budget, 4);
    EXPECT_EQ(ev.accuracy, r.round_accuracy[k]) << "round " << k;
  }
}
