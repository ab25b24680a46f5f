#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ticketforge/model.hpp"
#include "ticketforge/train.hpp"

namespace ticketforge {

struct AdvConfig {
  double epsilon = 0.5;
  double step_size = 0.25;
  int pgd_steps = 3;
  double kl_weight = 1.0;
  bool perturb_image = true;
  bool perturb_text = true;
  /// One modality per PGD iteration (image first) instead of both at once.
  bool alternate = false;
  /// Let gradient flow through the clean logits of the KL term as well.
  bool full_kl_gradient = false;

  /// epsilon == 0 is accepted and pins the perturbation to zero.
  void validate() const;
  /// Non-fatal remarks, e.g. a step larger than the ball's diameter.
  std::vector<std::string> warnings() const;
  bool operator==(const AdvConfig&) const = default;
};

/// Called after every PGD iteration with the current perturbation.
using PgdObserver = std::function<void(int iteration, const Perturbation& delta)>;

/// Frobenius norm of example `i` of a [b x s x h] perturbation block.
double block_norm(const Tensor& delta, std::size_t i);

/// Projection of every per-example block onto the epsilon ball. Blocks inside
/// the ball are untouched; the rest are rescaled so the norm is at most epsilon.
void project_blocks(Tensor& delta, double epsilon);

/// Ascent step delta += step * g / ||g|| per example block (blocks with zero
/// gradient stay put), followed by projection.
void pgd_update(Tensor& delta, const Tensor& grad, double step_size, double epsilon);

/// PGD on the task cross-entropy from delta = 0. AdversarialError on a
/// non-finite gradient.
Perturbation pgd_perturb(const ArchSpec& arch, const ParamStore& params, const Mask* mask, const Batch& batch,
                         const AdvConfig& cfg, const PgdObserver& observe = {});

struct AdvTerms {
  Var standard;     // CE on clean inputs
  Var adversarial;  // CE on perturbed inputs
  Var kl;           // symmetric KL between perturbed and clean predictions
  Var total;        // standard + adversarial + kl_weight * kl
};

/// Builds the combined objective on an existing graph.
AdvTerms adv_terms(ModelGraph& graph, const Batch& batch, const Perturbation& delta, const AdvConfig& cfg);

struct AdvLoss {
  double standard = 0.0;
  double adversarial = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

AdvLoss adv_loss(const ArchSpec& arch, const ParamStore& params, const Mask* mask, const Batch& batch,
                 const Perturbation& delta, const AdvConfig& cfg);

/// PGD against the current weights, then the combined objective.
LossBuilder adversarial_loss(const AdvConfig& cfg);

/// Adversarial training from step 0 for the budget; returns per-step losses.
std::vector<double> adv_train(const ArchSpec& arch, ParamStore& params, const Mask* mask, const TaskDataset& data,
                              const AdvConfig& cfg, const TrainBudget& budget, std::uint64_t seed,
                              const StepObserver& observe = {});

}  // namespace ticketforge
