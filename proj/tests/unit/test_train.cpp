#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "ticketforge/error.hpp"
#include "ticketforge/model.hpp"
#include "ticketforge/pruning.hpp"
#include "ticketforge/train.hpp"

namespace tf = ticketforge;

namespace {

tf::ArchSpec tiny_arch() {
  tf::ArchSpec a;
  a.hidden = 8;
  a.heads = 2;
  a.layers = 1;
  return a;
}

tf::ParamStore two_params() {
  tf::ParamStore p;
  p.set("a.w", tf::Tensor::matrix({{1.0, 2.0}}));
  p.set("a.b", tf::Tensor({1}, {0.5}));
  return p;
}

tf::ParamGrads two_grads(double ga, double gb) {
  return {{"a.w", tf::Tensor::matrix({{ga, ga}})}, {"a.b", tf::Tensor({1}, {gb})}};
}

}  // namespace

TEST(Optim, SgdStepAndMask) {
  auto p = two_params();
  tf::Mask m = tf::Mask::ones(p);
  m.entries()[0].keep[1] = 0;
  tf::optimizer_step(p, two_grads(1.0, 2.0), 0.1, &m);
  EXPECT_DOUBLE_EQ(p.at("a.w")[0], 0.9);
  EXPECT_EQ(p.at("a.w")[1], 0.0);
  EXPECT_FALSE(std::signbit(p.at("a.w")[1]));
  EXPECT_DOUBLE_EQ(p.at("a.b")[0], 0.3);
}

TEST(Optim, RejectsBadGradients) {
  auto p = two_params();
  EXPECT_THROW(tf::optimizer_step(p, two_grads(std::nan(""), 0.0), 0.1), tf::TrainingError);
  tf::ParamGrads missing{{"a.w", tf::Tensor::matrix({{1.0, 1.0}})}};
  EXPECT_THROW(tf::optimizer_step(p, missing, 0.1), tf::TrainingError);
  EXPECT_THROW(tf::make_optimizer("rmsprop", 0.1), tf::ConfigError);
}

TEST(Optim, MomentumAccumulatesVelocity) {
  auto p = two_params();
  auto opt = tf::make_optimizer("momentum", 0.1);
  opt->step(p, two_grads(1.0, 0.0), nullptr);
  opt->step(p, two_grads(1.0, 0.0), nullptr);
  // v1 = 1, v2 = 0.9 + 1; w = 1 - 0.1 * (1 + 1.9).
  EXPECT_NEAR(p.at("a.w")[0], 1.0 - 0.29, 1e-15);
}

TEST(Optim, AdamFirstStepIsSignTimesLr) {
  auto p = two_params();
  auto opt = tf::make_optimizer("adam", 0.01);
  opt->step(p, two_grads(3.0, -0.2), nullptr);
  EXPECT_NEAR(p.at("a.w")[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p.at("a.b")[0], 0.5 + 0.01, 1e-9);
}

TEST(Train, LossDecreasesAndMaskHolds) {
  const auto arch = tiny_arch();
  const auto task = tf::find_task("exists");
  const auto data = tf::gen_task(task, 2, 128, tf::Split::train, arch.data_shape());
  auto params = tf::build_model(arch, task, 1);
  const auto mask = tf::random_prune(tf::prunable_layout(params), 0.3, 2);
  const auto losses = tf::train(arch, params, &mask, data, {60, 16, 0.1, "sgd"}, 3);
  ASSERT_EQ(losses.size(), 60u);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 10; ++i) {
    head += losses[static_cast<std::size_t>(i)];
    tail += losses[losses.size() - 1 - static_cast<std::size_t>(i)];
  }
  EXPECT_LT(tail, head);
  for (const auto& e : mask.entries()) {
    for (std::size_t i = 0; i < e.keep.size(); ++i) {
      if (!e.keep[i]) ASSERT_EQ(params.at(e.name)[i], 0.0);
    }
  }
}

TEST(Train, StepRangesComposeBitwise) {
  const auto arch = tiny_arch();
  const auto task = tf::find_task("count");
  const auto data = tf::gen_task(task, 2, 64, tf::Split::train, arch.data_shape());
  const tf::TrainBudget budget{12, 8, 0.1, "sgd"};
  auto whole = tf::build_model(arch, task, 1);
  auto split = whole;
  tf::train_steps(arch, whole, nullptr, data, budget, 5, 0, 12, tf::task_loss());
  tf::train_steps(arch, split, nullptr, data, budget, 5, 0, 7, tf::task_loss());
  tf::train_steps(arch, split, nullptr, data, budget, 5, 7, 12, tf::task_loss());
  EXPECT_TRUE(whole.bitwise_equal(split));
}

TEST(Train, NonFiniteLossIsTrainingError) {
  const auto arch = tiny_arch();
  const auto task = tf::find_task("count");
  const auto data = tf::gen_task(task, 2, 32, tf::Split::train, arch.data_shape());
  auto params = tf::build_model(arch, task, 1);
  params.at("head.cls.fc2.b")[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(tf::train(arch, params, nullptr, data, {3, 8, 0.1, "sgd"}, 0), tf::TrainingError);
}

TEST(Train, TiedLogitsPredictClassZero) {
  const auto arch = tiny_arch();
  const auto task = tf::find_task("count");
  const auto dev = tf::gen_task(task, 3, 200, tf::Split::dev, arch.data_shape());
  auto params = tf::build_model(arch, task, 1);
  for (auto* name : {"head.cls.fc2.w", "head.cls.fc2.b"}) {
    for (auto& v : params.at(name).values()) v = 0.0;
  }
  std::size_t zeros = 0;
  for (const auto& ex : dev.examples) zeros += ex.label == 0 ? 1 : 0;
  EXPECT_DOUBLE_EQ(tf::evaluate_accuracy(arch, params, nullptr, dev), 100.0 * static_cast<double>(zeros) / 200.0);
}

TEST(Train, BudgetValidation) {
  EXPECT_THROW((tf::TrainBudget{-1, 8, 0.1, "sgd"}.validate()), tf::ConfigError);
  EXPECT_THROW((tf::TrainBudget{5, 0, 0.1, "sgd"}.validate()), tf::ConfigError);
  EXPECT_THROW((tf::TrainBudget{5, 8, -1.0, "sgd"}.validate()), tf::ConfigError);
  EXPECT_THROW((tf::TrainBudget{5, 8, 0.1, "lbfgs"}.validate()), tf::ConfigError);
}
