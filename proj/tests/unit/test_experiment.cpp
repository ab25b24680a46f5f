#include <gtest/gtest.h>

#include <fstream>

#include "ticketforge/error.hpp"
#include "ticketforge/experiment.hpp"
#include "ticketforge/io.hpp"

namespace tf = ticketforge;
namespace fs = std::filesystem;

namespace {

tf::RunConfig tiny() { return tf::load_config(fs::path(TICKETFORGE_TEST_DATA) / "tiny.json"); }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ticketforge_test_" + name);
  fs::remove_all(p);
  return p;
}

std::map<std::string, tf::Bytes> snapshot(const fs::path& root) {
  std::map<std::string, tf::Bytes> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = tf::read_file(e.path());
  }
  return out;
}

}  // namespace

TEST(Experiment, LabIsDeterministic) {
  tf::Lab a(tiny()), b(tiny());
  EXPECT_TRUE(a.theta0(0).bitwise_equal(b.theta0(0)));
  EXPECT_FALSE(a.theta0(0).bitwise_equal(a.theta0(1)));
  EXPECT_TRUE(a.imp_mask("exists", 1, 0.36) == b.imp_mask("exists", 1, 0.36));
  EXPECT_TRUE(a.imp_mask("pretext", 0, 0.2) == b.imp_mask("pretext", 0, 0.2));
  EXPECT_EQ(a.imp_mask("exists", 1, 0.36).zeros(), a.imp_zero_count(0.36));
  EXPECT_EQ(a.random_mask(a.imp_zero_count(0.2), 0).zeros(), a.imp_zero_count(0.2));
}

TEST(Experiment, CachedRoundAccuracyEqualsFreshEvaluation) {
  tf::Lab lab(tiny());
  const auto& mask = lab.imp_mask("attr_query", 0, 0.36);
  const double cached = lab.evaluate(mask, tf::InitKind::pretrained, "attr_query", 0);
  EXPECT_EQ(lab.trainings(), 0u);
  const auto& cfg = lab.config();
  const auto ev = tf::evaluate_ticket(mask, lab.theta0(0), cfg.arch, cfg.task("attr_query"),
                                      lab.train_set("attr_query", 0), lab.dev_set("attr_query", 0), cfg.budget, 0);
  EXPECT_EQ(cached, ev.accuracy);
}

TEST(Experiment, ShuffledAndTextOnlyInitsDiffer) {
  tf::Lab lab(tiny());
  EXPECT_FALSE(lab.theta0_shuffled(0).bitwise_equal(lab.theta0(0)));
  EXPECT_FALSE(lab.theta0_textonly(0).bitwise_equal(lab.theta0(0)));
}

TEST(Experiment, RunsAreReproducibleAndResumable) {
  const auto cfg = tiny();
  const fs::path a = scratch("a"), b = scratch("b");
  tf::RunOptions oa{a, false, nullptr}, ob{b, false, nullptr};
  tf::run(tf::Command::find, cfg, oa);
  tf::run(tf::Command::eval, cfg, oa);
  tf::run(tf::Command::find, cfg, ob);
  tf::run(tf::Command::eval, cfg, ob);
  EXPECT_EQ(snapshot(a), snapshot(b));

  EXPECT_THROW(tf::run(tf::Command::find, cfg, oa), tf::StateError);
  oa.resume = true;
  EXPECT_NO_THROW(tf::run(tf::Command::find, cfg, oa));
  EXPECT_EQ(snapshot(a), snapshot(b));

  // A resumed run never replaces content it would write differently.
  const fs::path report = a / tf::config_hash(cfg) / "eval" / "eval_report.csv";
  std::ofstream(report, std::ios::app) << "tampered\n";
  EXPECT_THROW(tf::run(tf::Command::eval, cfg, oa), tf::IoError);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Experiment, ReloadedImpMatchesComputed) {
  const auto cfg = tiny();
  const fs::path root = scratch("reload");
  const auto find_dir = tf::run(tf::Command::find, cfg, {root, false, nullptr});
  tf::Lab fresh(cfg);
  const auto& computed = fresh.imp_run("exists", 1);
  const auto bytes = tf::read_file(find_dir / "exists" / "seed1" / "round3.tfmask");
  EXPECT_EQ(bytes, tf::serialize_mask(computed.round_masks[3], fresh.hash()));
  const auto ck = tf::read_file(find_dir / "exists" / "seed1" / "checkpoint_step0.tfparams");
  EXPECT_EQ(ck, computed.checkpoints.bytes(0));
  fs::remove_all(root);
}
