#include <benchmark/benchmark.h>

#include "ticketforge/autodiff.hpp"
#include "ticketforge/data.hpp"
#include "ticketforge/model.hpp"
#include "ticketforge/pruning.hpp"
#include "ticketforge/rng.hpp"
#include "ticketforge/train.hpp"

namespace tf = ticketforge;

namespace {

tf::Tensor random_tensor(tf::Shape shape, std::uint64_t seed) {
  tf::Tensor t(std::move(shape));
  tf::Rng rng(seed);
  for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const tf::Tensor a = random_tensor({n, n}, 1);
  const tf::Tensor b = random_tensor({n, n}, 2);
  for (auto _ : state) {
    tf::Tape tape;
    benchmark::DoNotOptimize(tf::matmul(tape.constant(a), tape.constant(b)).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_TrainStep(benchmark::State& state) {
  const auto family = static_cast<tf::Family>(state.range(0));
  const tf::ArchSpec arch = tf::default_arch(family);
  const tf::TaskSpec task = tf::find_task("attr_query");
  const auto data = tf::gen_task(task, 3, 256, tf::Split::train, arch.data_shape());
  tf::ParamStore params = tf::build_model(arch, task, 0);
  tf::TrainBudget budget;
  budget.steps = 1;
  int step = 0;
  for (auto _ : state) {
    tf::train_steps(arch, params, nullptr, data, budget, 0, step, step + 1, tf::task_loss());
  }
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_GlobalPrune(benchmark::State& state) {
  const tf::ArchSpec arch = tf::default_arch(tf::Family::one_stream);
  const tf::ParamStore params = tf::build_model(arch, tf::find_task("count"), 0);
  const tf::Mask ones = tf::Mask::ones(params);
  for (auto _ : state) benchmark::DoNotOptimize(tf::global_magnitude_prune(params, ones, 0.2));
}
BENCHMARK(BM_GlobalPrune)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
