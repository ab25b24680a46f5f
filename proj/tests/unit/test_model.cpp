#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "ticketforge/error.hpp"
#include "ticketforge/model.hpp"
#include "ticketforge/pruning.hpp"

namespace tf = ticketforge;

namespace {

constexpr tf::Family kFamilies[] = {tf::Family::one_stream, tf::Family::two_stream, tf::Family::patch_input};

tf::ArchSpec small_arch(tf::Family family) {
  tf::ArchSpec a = tf::default_arch(family);
  a.hidden = 8;
  a.heads = 2;
  a.layers = 1;
  return a;
}

tf::Batch task_batch(const tf::ArchSpec& arch, const tf::TaskSpec& task, std::size_t n, std::uint64_t seed) {
  const auto data = tf::gen_task(task, seed, n, tf::Split::train, arch.data_shape());
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return tf::make_batch(data, idx);
}

}  // namespace

TEST(Model, PrunableCountMatchesBuiltStore) {
  for (auto family : kFamilies) {
    for (int hidden : {8, 16, 32}) {
      tf::ArchSpec a = tf::default_arch(family);
      a.hidden = hidden;
      const auto p = tf::build_model(a, tf::find_task("count"), 1);
      EXPECT_EQ(tf::prunable_weight_count(a), p.prunable_count()) << to_string(family) << " h=" << hidden;
    }
  }
}

TEST(Model, PrunableSetIsRankTwoTrunkOnly) {
  const auto p = tf::build_model(tf::default_arch(tf::Family::two_stream), tf::find_task("count"), 1);
  for (const auto& name : p.prunable_names()) {
    EXPECT_EQ(p.at(name).rank(), 2u) << name;
    EXPECT_NE(name.rfind("head.", 0), 0u) << name;
  }
  for (const auto& name : p.head_names()) EXPECT_FALSE(p.entry(name).prunable) << name;
}

TEST(Model, InitIsDeterministicAndTrunkIgnoresTask) {
  const auto arch = tf::default_arch(tf::Family::one_stream);
  const auto a = tf::build_model(arch, tf::find_task("count"), 7);
  const auto b = tf::build_model(arch, tf::find_task("count"), 7);
  const auto c = tf::build_model(arch, tf::find_task("exists"), 7);
  const auto d = tf::build_model(arch, tf::find_task("count"), 8);
  EXPECT_TRUE(a.bitwise_equal(b));
  EXPECT_TRUE(a.trunk().bitwise_equal(c.trunk()));
  EXPECT_FALSE(a.trunk().bitwise_equal(d.trunk()));
}

TEST(Model, FreshHeadKeepsTrunkAndResizesClasses) {
  const auto arch = tf::default_arch(tf::Family::one_stream);
  auto src = tf::build_model(arch, tf::find_task("exists"), 3);
  src.at("enc0.attn.q.w")[0] = 42.0;
  const auto out = tf::attach_fresh_head(src, arch, tf::find_task("count"), 3);
  EXPECT_TRUE(out.trunk().bitwise_equal(src.trunk()));
  EXPECT_EQ(out.at("head.cls.fc2.w").dim(1), 4u);
}

TEST(Model, ForwardShapes) {
  for (auto family : kFamilies) {
    const auto arch = small_arch(family);
    const auto task = tf::find_task("count");
    const auto params = tf::build_model(arch, task, 0);
    const auto out = tf::forward(arch, params, nullptr, task_batch(arch, task, 5, 1));
    EXPECT_EQ(out.cls_embedding.shape(), (tf::Shape{5, 8}));
    EXPECT_EQ(out.logits.shape(), (tf::Shape{5, 4}));
    EXPECT_TRUE(out.logits.all_finite());
  }
}

TEST(Model, MaskActsLikeZeroedWeights) {
  for (auto family : kFamilies) {
    const auto arch = small_arch(family);
    const auto task = tf::find_task("count");
    const auto params = tf::build_model(arch, task, 0);
    const auto mask = tf::random_prune(tf::prunable_layout(params), 0.5, 9);
    auto zeroed = params;
    mask.apply(zeroed);
    const auto batch = task_batch(arch, task, 4, 2);
    const auto a = tf::forward(arch, params, &mask, batch).logits;
    const auto b = tf::forward(arch, zeroed, nullptr, batch).logits;
    EXPECT_TRUE(a.bitwise_equal(b)) << to_string(family);
  }
}

TEST(Model, WholeModelGradientMatchesFiniteDifference) {
  for (auto family : kFamilies) {
    const auto arch = small_arch(family);
    const auto task = tf::find_task("count");
    const auto params = tf::build_model(arch, task, 0);
    const auto batch = task_batch(arch, task, 3, 4);

    tf::Tape tape;
    tf::ModelGraph g(tape, arch, params, nullptr, true);
    const auto enc = g.encode(batch);
    const auto loss = tf::softmax_cross_entropy(g.task_logits(enc.cls), batch.labels);
    const auto grads = tape.backward(loss);

    tf::Rng rng(11);
    double diff = 0.0, norm = 0.0;
    for (const auto& name : params.names()) {
      const auto& analytic = grads[g.leaf(name)];
      for (int k = 0; k < 2; ++k) {
        const std::size_t i = rng.below(params.at(name).numel());
        auto plus = params, minus = params;
        plus.at(name)[i] += 1e-5;
        minus.at(name)[i] -= 1e-5;
        const double numeric = (tf::loss_std(arch, plus, nullptr, batch).item() -
                                tf::loss_std(arch, minus, nullptr, batch).item()) / 2e-5;
        diff += std::pow(analytic[i] - numeric, 2);
        norm += numeric * numeric;
      }
    }
    EXPECT_LT(std::sqrt(diff / norm), 1e-4) << to_string(family);
  }
}

TEST(Model, RejectsMismatchedBatches) {
  const auto arch = small_arch(tf::Family::one_stream);
  const auto patch = small_arch(tf::Family::patch_input);
  const auto task = tf::find_task("count");
  const auto params = tf::build_model(arch, task, 0);
  EXPECT_THROW(tf::forward(arch, params, nullptr, task_batch(patch, task, 2, 0)), tf::DimensionError);
  auto batch = task_batch(arch, task, 2, 0);
  batch.tokens.pop_back();
  EXPECT_THROW(tf::forward(arch, params, nullptr, batch), tf::DimensionError);
}

TEST(Model, PretextObjectivesNeedAnnotations) {
  const auto arch = small_arch(tf::Family::one_stream);
  const auto task = tf::find_task("count");
  const auto params = tf::build_model(arch, tf::TaskSpec::pretext(), 0);
  EXPECT_THROW(tf::pretrain_objectives(arch, params, nullptr, task_batch(arch, task, 2, 0)), tf::DataError);

  const auto corpus = tf::gen_pretrain_corpus(3, 16, arch.data_shape());
  std::vector<std::size_t> idx(16);
  for (std::size_t i = 0; i < 16; ++i) idx[i] = i;
  const auto l = tf::pretrain_objectives(arch, params, nullptr, tf::make_batch(corpus, idx));
  EXPECT_GT(l.mlm, 0.0);
  EXPECT_GT(l.mrm, 0.0);
  EXPECT_GT(l.itm, 0.0);
  EXPECT_NEAR(l.total, l.mlm + l.mrm + l.itm, 1e-12);
}

TEST(Model, ValidateNamesTheField) {
  tf::ArchSpec a;
  a.hidden = 30;
  a.heads = 4;
  try {
    a.validate();
    FAIL() << "expected ConfigError";
  } catch (const tf::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("arch.hidden"), std::string::npos) << e.what();
  }
}
