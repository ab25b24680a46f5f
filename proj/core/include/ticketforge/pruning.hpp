#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ticketforge/io.hpp"
#include "ticketforge/mask.hpp"
#include "ticketforge/model.hpp"
#include "ticketforge/train.hpp"

namespace ticketforge {

struct PruneConfig {
  double rate_per_round = 0.10;
  int rounds = 9;
  int rewind_step = 0;
  /// Training steps per round; unset means the full budget (downstream) or
  /// 10% of the pretraining budget (pretext).
  std::optional<int> steps_per_round;
  /// When set, overrides `rounds` with the smallest k reaching it.
  std::optional<double> target_sparsity;

  void validate() const;
  int resolved_rounds() const;
  /// Smallest k with 1 - (1 - rate)^k >= target.
  static int rounds_for(double rate, double target);
  bool operator==(const PruneConfig&) const = default;
};

/// Expected sparsity after k rounds at `rate`.
double expected_sparsity(double rate, int rounds);

/// Serialized parameter snapshots keyed by training step. Step 0 must come
/// first, keys strictly increase and snapshots are never overwritten.
class CheckpointStore {
 public:
  CheckpointStore() = default;
  explicit CheckpointStore(std::string tag) : tag_(std::move(tag)) {}

  void put(int step, const ParamStore& params);
  bool contains(int step) const { return snaps_.contains(step); }
  ParamStore get(int step) const;
  const Bytes& bytes(int step) const;
  std::vector<int> steps() const;
  const std::string& tag() const { return tag_; }

 private:
  std::string tag_;
  std::map<int, Bytes> snaps_;
};

/// floor(rate * kept): weights removed by one pruning round.
std::size_t prune_count(double rate, std::size_t kept);

/// Mask off floor(rate * kept) of the currently kept weights with the
/// smallest magnitude, chosen across all prunable tensors at once. Ties go to
/// the smaller (name, flat index). Pruned positions stay pruned.
Mask global_magnitude_prune(const ParamStore& params, const Mask& mask, double rate);

/// floor(sparsity * total) positions pruned uniformly at random.
Mask random_prune(const PrunableLayout& layout, double sparsity, std::uint64_t seed);
/// Exactly `zeros` positions pruned uniformly at random.
Mask random_prune_count(const PrunableLayout& layout, std::size_t zeros, std::uint64_t seed);

/// Permute the entries of every prunable tensor independently.
ParamStore shuffle_weights_within_layer(const ParamStore& params, std::uint64_t seed);

/// Bitwise restoration of the snapshot at `step`; LookupError if absent.
ParamStore rewind(const CheckpointStore& ckpts, int step);

struct ImpSetup {
  ArchSpec arch;
  TaskSpec task;
  ParamStore init;                       // theta_0 with the head to train
  const TaskDataset* train = nullptr;    // labelled set or pretext corpus
  const TaskDataset* dev = nullptr;      // optional; enables per-round accuracy
  TrainBudget budget;
  std::string tag;                       // provenance tag for checkpoints
  LossBuilder loss;                      // empty: task or pretext default
};

struct ImpResult {
  Mask mask;
  CheckpointStore checkpoints;
  /// round_masks[k] is the mask after k prunes; round_masks[0] is all ones.
  std::vector<Mask> round_masks;
  /// Dev accuracy of the model trained under round_masks[k], k < rounds.
  std::vector<double> round_accuracy;
};

/// Train -> prune -> rewind, repeated for the resolved number of rounds.
/// TrainingError messages carry the round index.
ImpResult imp(const ImpSetup& setup, const PruneConfig& config, std::uint64_t seed);

struct TicketEval {
  double accuracy = 0.0;
  ParamStore trained;
};

/// Fresh head on the trunk of `init`, then the masked model is trained for
/// the budget from step 0 and scored on `dev`.
TicketEval evaluate_ticket(const Mask& mask, const ParamStore& init, const ArchSpec& arch,
                           const TaskSpec& task, const TaskDataset& train, const TaskDataset& dev,
                           const TrainBudget& budget, std::uint64_t seed, const LossBuilder& loss = {});

/// Pretext-trained initialisation: full corpus objective, or the
/// masked-token term alone on blanked images (text_only).
ParamStore pretrain(const ArchSpec& arch, const TaskDataset& corpus, const TrainBudget& budget,
                    std::uint64_t seed, bool text_only = false);

}  // namespace ticketforge
