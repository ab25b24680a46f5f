#include "ticketforge/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ticketforge/error.hpp"
#include "ticketforge/rng.hpp"

namespace ticketforge {

namespace {

// floor() of a count product, tolerant of the last-bit error in rate * n.
std::size_t floor_count(double x) { return static_cast<std::size_t>(std::floor(x + 1e-9)); }

}  // namespace

void PruneConfig::validate() const {
  if (!(rate_per_round > 0.0 && rate_per_round < 1.0)) {
    throw ConfigError("prune.rate_per_round: must lie in (0, 1), got " + std::to_string(rate_per_round));
  }
  if (rounds <= 0) throw ConfigError("prune.rounds: must be positive");
  if (rewind_step < 0) throw ConfigError("prune.rewind_step: must be non-negative");
  if (steps_per_round && *steps_per_round <= 0) throw ConfigError("prune.steps_per_round: must be positive");
  if (steps_per_round && rewind_step > *steps_per_round) {
    throw ConfigError("prune.rewind_step: exceeds steps_per_round");
  }
  if (target_sparsity && !(*target_sparsity > 0.0 && *target_sparsity < 1.0)) {
    throw ConfigError("prune.target_sparsity: must lie in (0, 1)");
  }
}

int PruneConfig::rounds_for(double rate, double target) {
  int k = 0;
  // Slack so that e.g. 1 - 0.9 counts as reaching 0.1.
  while (expected_sparsity(rate, k) < target - 1e-9) ++k;
  return k;
}

int PruneConfig::resolved_rounds() const {
  return target_sparsity ? rounds_for(rate_per_round, *target_sparsity) : rounds;
}

double expected_sparsity(double rate, int rounds) { return 1.0 - std::pow(1.0 - rate, rounds); }

std::size_t prune_count(double rate, std::size_t kept) {
  return floor_count(rate * static_cast<double>(kept));
}

// ---- checkpoints ---------------------------------------------------------

void CheckpointStore::put(int step, const ParamStore& params) {
  if (step < 0) throw StateError("checkpoint step must be non-negative");
  if (snaps_.empty() && step != 0) throw StateError("the first checkpoint must be step 0");
  if (!snaps_.empty() && step <= snaps_.rbegin()->first) {
    throw StateError("checkpoint step " + std::to_string(step) + " is not after step " +
                     std::to_string(snaps_.rbegin()->first));
  }
  snaps_.emplace(step, serialize_params(params, tag_));
}

const Bytes& CheckpointStore::bytes(int step) const {
  auto it = snaps_.find(step);
  if (it == snaps_.end()) throw LookupError("no checkpoint at step " + std::to_string(step));
  return it->second;
}

ParamStore CheckpointStore::get(int step) const { return deserialize_params(bytes(step)); }

std::vector<int> CheckpointStore::steps() const {
  std::vector<int> out;
  for (const auto& [s, b] : snaps_) out.push_back(s);
  return out;
}

ParamStore rewind(const CheckpointStore& ckpts, int step) { return ckpts.get(step); }

// ---- mask construction ---------------------------------------------------

Mask global_magnitude_prune(const ParamStore& params, const Mask& mask, double rate) {
  if (!(rate > 0.0 && rate < 1.0)) {
    throw ConfigError("prune.rate_per_round: must lie in (0, 1), got " + std::to_string(rate));
  }
  mask.check_layout(params);
  struct Candidate {
    double magnitude;
    std::uint32_t entry;
    std::size_t index;
  };
  std::vector<Candidate> cands;
  const auto& entries = mask.entries();
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const Tensor& w = params.at(entries[e].name);
    for (std::size_t i = 0; i < w.numel(); ++i) {
      if (entries[e].keep[i]) cands.push_back({std::fabs(w[i]), static_cast<std::uint32_t>(e), i});
    }
  }
  const std::size_t k = prune_count(rate, cands.size());
  Mask out = mask;
  if (k == 0) return out;
  auto before = [](const Candidate& a, const Candidate& b) {
    if (a.magnitude != b.magnitude) return a.magnitude < b.magnitude;
    if (a.entry != b.entry) return a.entry < b.entry;
    return a.index < b.index;
  };
  std::nth_element(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k - 1), cands.end(), before);
  for (std::size_t j = 0; j < k; ++j) out.entries()[cands[j].entry].keep[cands[j].index] = 0;
  return out;
}

Mask random_prune_count(const PrunableLayout& layout, std::size_t zeros, std::uint64_t seed) {
  Mask out = Mask::ones(layout);
  const std::size_t total = out.total();
  if (zeros > total) throw ConfigError("random prune count exceeds the prunable total");
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(substream(seed, "random_prune"));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::size_t> offsets;
  std::size_t acc = 0;
  for (const auto& e : out.entries()) {
    offsets.push_back(acc);
    acc += e.keep.size();
  }
  for (std::size_t j = 0; j < zeros; ++j) {
    const std::size_t flat = order[j];
    const std::size_t e = static_cast<std::size_t>(
        std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin() - 1);
    out.entries()[e].keep[flat - offsets[e]] = 0;
  }
  return out;
}

Mask random_prune(const PrunableLayout& layout, double sparsity, std::uint64_t seed) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw ConfigError("sparsity: must lie in [0, 1)");
  std::size_t total = 0;
  for (const auto& [name, shape] : layout) total += shape_numel(shape);
  return random_prune_count(layout, floor_count(sparsity * static_cast<double>(total)), seed);
}

ParamStore shuffle_weights_within_layer(const ParamStore& params, std::uint64_t seed) {
  ParamStore out = params;
  const std::uint64_t stream = substream(seed, "shuffle");
  for (const auto& name : params.prunable_names()) {
    Rng rng(substream(stream, name));
    rng.shuffle(out.at(name).data());
  }
  return out;
}

// ---- IMP -----------------------------------------------------------------

ImpResult imp(const ImpSetup& setup, const PruneConfig& config, std::uint64_t seed) {
  config.validate();
  setup.budget.validate();
  if (!setup.train) throw ConfigError("imp: no training data");
  const int rounds = config.resolved_rounds();
  const int t = config.steps_per_round.value_or(setup.budget.steps);
  const int i = config.rewind_step;
  if (t <= 0) throw ConfigError("prune.steps_per_round: must be positive");
  if (i > t) throw ConfigError("prune.rewind_step: exceeds steps_per_round");
  const LossBuilder loss = setup.loss ? setup.loss : setup.task.is_pretext() ? pretext_loss() : task_loss();

  ImpResult result;
  result.checkpoints = CheckpointStore(setup.tag);
  result.checkpoints.put(0, setup.init);
  Mask mask = Mask::ones(setup.init);
  result.round_masks.push_back(mask);

  for (int r = 0; r < rounds; ++r) {
    ParamStore params = r == 0 ? setup.init : rewind(result.checkpoints, i);
    StepObserver observe;
    if (r == 0 && i > 0) {
      observe = [&](int step, const ParamStore& p, double) {
        if (step + 1 == i) result.checkpoints.put(i, p);
      };
    }
    try {
      train_steps(setup.arch, params, &mask, *setup.train, setup.budget, seed, r == 0 ? 0 : i, t, loss,
                  observe);
    } catch (const TrainingError& e) {
      throw TrainingError("imp round " + std::to_string(r) + ": " + e.what());
    }
    if (r == 0 && !result.checkpoints.contains(t)) result.checkpoints.put(t, params);
    if (setup.dev) result.round_accuracy.push_back(evaluate_accuracy(setup.arch, params, &mask, *setup.dev));
    mask = global_magnitude_prune(params, mask, config.rate_per_round);
    result.round_masks.push_back(mask);
  }
  result.mask = mask;
  return result;
}

TicketEval evaluate_ticket(const Mask& mask, const ParamStore& init, const ArchSpec& arch,
                           const TaskSpec& task, const TaskDataset& train_set, const TaskDataset& dev,
                           const TrainBudget& budget, std::uint64_t seed, const LossBuilder& loss) {
  mask.check_layout(init);
  TicketEval out;
  out.trained = attach_fresh_head(init, arch, task, seed);
  train_steps(arch, out.trained, &mask, train_set, budget, seed, 0, budget.steps, loss ? loss : task_loss());
  out.accuracy = evaluate_accuracy(arch, out.trained, &mask, dev);
  return out;
}

ParamStore pretrain(const ArchSpec& arch, const TaskDataset& corpus, const TrainBudget& budget,
                    std::uint64_t seed, bool text_only) {
  ParamStore params = build_model(arch, TaskSpec::pretext(), seed);
  train_steps(arch, params, nullptr, corpus, budget, seed, 0, budget.steps, pretext_loss(text_only));
  return params;
}

}  // namespace ticketforge
