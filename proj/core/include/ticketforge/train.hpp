#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ticketforge/data.hpp"
#include "ticketforge/model.hpp"
#include "ticketforge/optim.hpp"

namespace ticketforge {

struct TrainBudget {
  int steps = 300;
  int batch_size = 16;
  double lr = 0.05;
  std::string optimizer = "sgd";

  void validate() const;
  bool operator==(const TrainBudget&) const = default;
};

/// Builds the scalar loss for one batch on a fresh graph.
using LossBuilder = std::function<Var(ModelGraph& graph, const Batch& batch)>;

/// ce_weight * cross-entropy of the task logits.
LossBuilder task_loss(double ce_weight = 1.0);
/// Sum of the pretext terms. With text_only, image inputs are zeroed and
/// only the masked-token term is kept.
LossBuilder pretext_loss(bool text_only = false);

/// Called after every optimizer step with the step index just completed.
using StepObserver = std::function<void(int step, const ParamStore& params, double loss)>;

/// Batch used at `step` of the schedule: epoch = step / batches_per_epoch,
/// shuffled with the "order" substream of `seed` for that epoch.
Batch scheduled_batch(const TaskDataset& data, std::size_t batch_size, std::uint64_t seed, int step);

/// Runs steps [first_step, last_step) of the schedule. Masked weights are
/// zeroed before the first step and stay zero after each one. Returns the
/// loss of every step. TrainingError on a non-finite loss.
std::vector<double> train_steps(const ArchSpec& arch, ParamStore& params, const Mask* mask,
                                const TaskDataset& data, const TrainBudget& budget, std::uint64_t seed,
                                int first_step, int last_step, const LossBuilder& loss,
                                const StepObserver& observe = {});

/// Full budget from step 0 with the task loss.
std::vector<double> train(const ArchSpec& arch, ParamStore& params, const Mask* mask, const TaskDataset& data,
                          const TrainBudget& budget, std::uint64_t seed);

/// Argmax accuracy in percent; ties resolve to the lowest class index.
double evaluate_accuracy(const ArchSpec& arch, const ParamStore& params, const Mask* mask,
                         const TaskDataset& dev, std::size_t batch_size = 128);

/// Share of the most frequent label, in percent.
double majority_rate(const TaskDataset& data);

}  // namespace ticketforge
