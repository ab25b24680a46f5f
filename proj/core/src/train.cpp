#include "ticketforge/train.hpp"

#include <algorithm>
#include <cmath>

#include "ticketforge/error.hpp"
#include "ticketforge/rng.hpp"

namespace ticketforge {

void TrainBudget::validate() const {
  if (steps < 0) throw ConfigError("budget.steps: must be non-negative");
  if (batch_size <= 0) throw ConfigError("budget.batch_size: must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("budget.lr: must be a positive finite number");
  make_optimizer(optimizer, lr);
}

LossBuilder task_loss(double ce_weight) {
  return [ce_weight](ModelGraph& g, const Batch& batch) {
    auto enc = g.encode(batch);
    Var ce = softmax_cross_entropy(g.task_logits(enc.cls), batch.labels);
    return ce_weight == 1.0 ? ce : scale(ce, ce_weight);
  };
}

LossBuilder pretext_loss(bool text_only) {
  return [text_only](ModelGraph& g, const Batch& batch) {
    if (!text_only) {
      auto enc = g.encode(batch);
      return g.pretext_terms(batch, enc).total;
    }
    Batch blind = batch;
    blind.img = Tensor::zeros(batch.img.shape());
    auto enc = g.encode(blind);
    return g.pretext_terms(blind, enc).mlm;
  };
}

Batch scheduled_batch(const TaskDataset& data, std::size_t batch_size, std::uint64_t seed, int step) {
  const std::size_t per_epoch = (data.size() + batch_size - 1) / batch_size;
  const std::uint64_t epoch = static_cast<std::uint64_t>(step) / per_epoch;
  auto order = batch_order(data.size(), batch_size, substream(seed, "order", epoch));
  return make_batch(data, order[static_cast<std::size_t>(step) % per_epoch]);
}

std::vector<double> train_steps(const ArchSpec& arch, ParamStore& params, const Mask* mask,
                                const TaskDataset& data, const TrainBudget& budget, std::uint64_t seed,
                                int first_step, int last_step, const LossBuilder& loss,
                                const StepObserver& observe) {
  budget.validate();
  if (first_step < 0 || last_step < first_step) throw ConfigError("training range is empty or negative");
  if (data.size() == 0) throw DataError("training set is empty");
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(budget.batch_size), data.size());
  const std::size_t per_epoch = (data.size() + bs - 1) / bs;
  auto opt = make_optimizer(budget.optimizer, budget.lr);
  if (mask) mask->apply(params);

  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(last_step - first_step));
  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<std::vector<std::size_t>> order;
  for (int step = first_step; step < last_step; ++step) {
    const std::uint64_t epoch = static_cast<std::uint64_t>(step) / per_epoch;
    if (epoch != cached_epoch) {
      order = batch_order(data.size(), bs, substream(seed, "order", epoch));
      cached_epoch = epoch;
    }
    Batch batch = make_batch(data, order[static_cast<std::size_t>(step) % per_epoch]);

    Tape tape;
    ModelGraph graph(tape, arch, params, mask, true);
    Var l = loss(graph, batch);
    const double value = l.value().item();
    if (!std::isfinite(value)) throw TrainingError("non-finite loss at step " + std::to_string(step));
    GradMap grads = tape.backward(l);
    ParamGrads pg;
    for (const auto& [name, leaf] : graph.leaves()) pg.emplace(name, grads[leaf]);
    opt->step(params, pg, mask);
    losses.push_back(value);
    if (observe) observe(step, params, value);
  }
  return losses;
}

std::vector<double> train(const ArchSpec& arch, ParamStore& params, const Mask* mask, const TaskDataset& data,
                          const TrainBudget& budget, std::uint64_t seed) {
  return train_steps(arch, params, mask, data, budget, seed, 0, budget.steps, task_loss());
}

double evaluate_accuracy(const ArchSpec& arch, const ParamStore& params, const Mask* mask,
                         const TaskDataset& dev, std::size_t batch_size) {
  if (dev.size() == 0) throw DataError("evaluation set is empty");
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dev.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(dev.size(), start + batch_size); ++i) idx.push_back(i);
    Batch batch = make_batch(dev, idx);
    Tensor logits = forward(arch, params, mask, batch).logits;
    const std::size_t c = logits.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < c; ++j) {
        if (logits.at(r, j) > logits.at(r, best)) best = j;
      }
      if (static_cast<int>(best) == batch.labels[r]) ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(dev.size());
}

double majority_rate(const TaskDataset& data) {
  if (data.size() == 0) return 0.0;
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(data.spec.class_count, 2)), 0);
  for (const auto& ex : data.examples) ++counts.at(static_cast<std::size_t>(ex.label));
  return 100.0 * static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
         static_cast<double>(data.size());
}

}  // namespace ticketforge
