#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "ticketforge/analysis.hpp"
#include "ticketforge/error.hpp"
#include "ticketforge/pruning.hpp"

namespace tf = ticketforge;

namespace {

tf::Mask flat_mask(std::vector<std::uint8_t> keep) {
  tf::Mask m = tf::Mask::ones(tf::PrunableLayout{{"w", tf::Shape{1, keep.size()}}});
  m.entries()[0].keep = std::move(keep);
  return m;
}

tf::TicketRecord rec(tf::Method method, std::string target, double sparsity, std::uint64_t seed, double acc) {
  return tf::make_record("src", std::move(target), method, tf::Regime::standard, sparsity, sparsity / 2, seed, acc,
                         80.0, 99.0, "cfg", "mask");
}

}  // namespace

TEST(Analysis, RelaxedThresholdExamples) {
  EXPECT_EQ(tf::format_fixed(tf::relaxed_threshold(70.64, 99), 2), "69.93");
  EXPECT_TRUE(tf::relaxed_winning(69.98, 70.64, 99));
  EXPECT_FALSE(tf::relaxed_winning(53.15, 54.37, 99));
  EXPECT_TRUE(tf::relaxed_winning(50.0, 50.0, 100));
  EXPECT_TRUE(tf::relaxed_winning(42.0, 42.0, 37));
}

TEST(Analysis, OverlapForcedExamples) {
  const auto a = flat_mask({1, 1, 0, 0});
  EXPECT_DOUBLE_EQ(tf::overlap_ratio(a, a), 100.0);
  EXPECT_DOUBLE_EQ(tf::overlap_ratio(a, flat_mask({0, 0, 1, 1})), 0.0);
  EXPECT_NEAR(tf::overlap_ratio(a, flat_mask({1, 0, 1, 0})), 100.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(tf::overlap_ratio(flat_mask({0, 0}), flat_mask({0, 0})), 100.0);
  EXPECT_THROW(tf::overlap_ratio(a, flat_mask({1, 1, 0})), tf::MaskError);
}

TEST(Analysis, OverlapMatchesOracleAndIsSymmetric) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto p = tf_test::random_store(s, false);
    const auto layout = tf::prunable_layout(p);
    const auto a = tf::random_prune(layout, 0.3, s);
    const auto b = tf::random_prune(layout, 0.6, s + 100);
    EXPECT_DOUBLE_EQ(tf::overlap_ratio(a, b), tf_test::overlap_oracle(a, b));
    EXPECT_EQ(tf::overlap_ratio(a, b), tf::overlap_ratio(b, a));
  }
}

TEST(Analysis, OverlapMatrixNeedsEqualSparsity) {
  const auto a = flat_mask({1, 1, 0, 0});
  const auto b = flat_mask({1, 0, 1, 0});
  const auto m = tf::overlap_matrix({"a", "b"}, {a, b});
  EXPECT_EQ(m.cells[0][0], 100.0);
  EXPECT_EQ(m.cells[0][1], 33.3333);
  EXPECT_EQ(m.cells[1][0], m.cells[0][1]);
  EXPECT_THROW(tf::overlap_matrix({"a", "c"}, {a, flat_mask({1, 0, 0, 0})}), tf::MaskError);
}

TEST(Analysis, RecordsAreQuantizedAndConsistent) {
  const auto r = rec(tf::Method::imp, "t", 0.5, 0, 79.123456);
  EXPECT_EQ(r.accuracy, 79.1235);
  EXPECT_FALSE(r.relaxed_verdict);
  EXPECT_TRUE(rec(tf::Method::imp, "t", 0.5, 0, 79.5).relaxed_verdict);
}

TEST(Analysis, AggregatesUseSampleStatistics) {
  tf::TicketReport report;
  for (std::uint64_t s = 0; s < 3; ++s) report.add(rec(tf::Method::random, "t", 0.5, s, 70.0 + 2.0 * s));
  report.add(rec(tf::Method::imp, "t", 0.5, 0, 81.0));
  const auto aggs = report.aggregates();
  ASSERT_EQ(aggs.size(), 2u);
  for (const auto& a : aggs) {
    if (a.method != tf::Method::random) continue;
    EXPECT_EQ(a.n, 3u);
    EXPECT_DOUBLE_EQ(a.mean, 72.0);
    EXPECT_DOUBLE_EQ(a.stddev, 2.0);
    EXPECT_FALSE(a.relaxed_on_mean);
  }
}

TEST(Analysis, ReportCsvRoundTrips) {
  tf::TicketReport report;
  report.config_hash = "cfg";
  report.add(rec(tf::Method::textonly_init, "b", 0.6125795, 2, 55.5));
  report.add(rec(tf::Method::imp, "a", 1.0 / 3.0, 1, 66.25));
  report.add(rec(tf::Method::imp, "a", 1.0 / 3.0, 0, 66.0));
  report.sort();
  const auto text = tf::report_csv(report);
  const auto back = tf::parse_report_csv(text);
  EXPECT_EQ(back.records, report.records);
  EXPECT_EQ(back.config_hash, "cfg");
  EXPECT_EQ(tf::report_csv(back), text);
  EXPECT_EQ(text.rfind("# ticket-forge-report v1", 0), 0u);
}

TEST(Analysis, OverlapCsvRoundTrips) {
  const auto m = tf::overlap_matrix({"x", "y"}, {flat_mask({1, 1, 0, 0}), flat_mask({0, 1, 1, 0})});
  const auto back = tf::parse_overlap_csv(tf::overlap_csv(m));
  EXPECT_EQ(back.labels, m.labels);
  EXPECT_EQ(back.cells, m.cells);
}

TEST(Analysis, NumberFormatting) {
  EXPECT_EQ(tf::format_exact(0.1), "0.1");
  EXPECT_EQ(tf::parse_double(tf::format_exact(1.0 / 3.0)), 1.0 / 3.0);
  EXPECT_EQ(tf::format_fixed(2.5, 0), "2");
  EXPECT_EQ(tf::method_from_string("shuffled_init"), tf::Method::shuffled_init);
  EXPECT_THROW(tf::method_from_string("bogus"), tf::Error);
}
