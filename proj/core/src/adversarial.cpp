#include "ticketforge/adversarial.hpp"

#include <cmath>

#include "ticketforge/error.hpp"

namespace ticketforge {

void AdvConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("adv.epsilon: must be non-negative");
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ConfigError("adv.step_size: must be positive");
  if (pgd_steps <= 0) throw ConfigError("adv.pgd_steps: must be positive");
  if (!(kl_weight >= 0.0) || !std::isfinite(kl_weight)) throw ConfigError("adv.kl_weight: must be non-negative");
  if (!perturb_image && !perturb_text) throw ConfigError("adv.perturb_targets: select at least one modality");
}

std::vector<std::string> AdvConfig::warnings() const {
  std::vector<std::string> out;
  if (step_size > 2.0 * epsilon) {
    out.push_back("adv.step_size exceeds 2 * epsilon; the projection discards the excess");
  }
  return out;
}

double block_norm(const Tensor& delta, std::size_t i) {
  const std::size_t n = delta.numel() / delta.dim(0);
  double ss = 0.0;
  for (std::size_t j = 0; j < n; ++j) ss += delta[i * n + j] * delta[i * n + j];
  return std::sqrt(ss);
}

void project_blocks(Tensor& delta, double epsilon) {
  const std::size_t b = delta.dim(0);
  const std::size_t n = delta.numel() / b;
  std::vector<double> orig(n);
  for (std::size_t i = 0; i < b; ++i) {
    const double norm = block_norm(delta, i);
    if (norm <= epsilon) continue;
    double* d = &delta[i * n];
    std::copy(d, d + n, orig.begin());
    double factor = epsilon / norm;
    // Rounding can leave the rescaled norm a few ulps above epsilon.
    for (;;) {
      for (std::size_t j = 0; j < n; ++j) d[j] = orig[j] * factor;
      if (block_norm(delta, i) <= epsilon) break;
      factor = std::nextafter(factor, 0.0);
    }
  }
}

void pgd_update(Tensor& delta, const Tensor& grad, double step_size, double epsilon) {
  if (grad.shape() != delta.shape()) throw DimensionError("pgd_update: gradient and perturbation shapes differ");
  if (!grad.all_finite()) throw AdversarialError("non-finite gradient with respect to the perturbation");
  const std::size_t b = delta.dim(0);
  const std::size_t n = delta.numel() / b;
  for (std::size_t i = 0; i < b; ++i) {
    const double g = block_norm(grad, i);
    if (g == 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) delta[i * n + j] += step_size * grad[i * n + j] / g;
  }
  project_blocks(delta, epsilon);
}

Perturbation pgd_perturb(const ArchSpec& arch, const ParamStore& params, const Mask* mask, const Batch& batch,
                         const AdvConfig& cfg, const PgdObserver& observe) {
  cfg.validate();
  const std::size_t b = batch.size;
  const std::size_t h = static_cast<std::size_t>(arch.hidden);
  Perturbation delta;
  if (cfg.perturb_image) delta.img = Tensor::zeros({b, static_cast<std::size_t>(arch.img_seq_len), h});
  if (cfg.perturb_text) delta.txt = Tensor::zeros({b, 1 + static_cast<std::size_t>(arch.txt_seq_len), h});

  for (int it = 0; it < cfg.pgd_steps; ++it) {
    bool do_img = cfg.perturb_image;
    bool do_txt = cfg.perturb_text;
    if (cfg.alternate && do_img && do_txt) {
      do_img = it % 2 == 0;
      do_txt = !do_img;
    }
    if (cfg.epsilon > 0.0) {
      Tape tape;
      ModelGraph g(tape, arch, params, mask, false);
      std::optional<Var> dimg, dtxt;
      if (delta.img) dimg = do_img ? tape.leaf(*delta.img) : tape.constant(*delta.img);
      if (delta.txt) dtxt = do_txt ? tape.leaf(*delta.txt) : tape.constant(*delta.txt);
      auto enc = g.encode(batch, dimg, dtxt);
      Var loss = softmax_cross_entropy(g.task_logits(enc.cls), batch.labels);
      GradMap grads = tape.backward(loss);
      if (do_img) pgd_update(*delta.img, grads[*dimg], cfg.step_size, cfg.epsilon);
      if (do_txt) pgd_update(*delta.txt, grads[*dtxt], cfg.step_size, cfg.epsilon);
    }
    if (observe) observe(it, delta);
  }
  return delta;
}

AdvTerms adv_terms(ModelGraph& graph, const Batch& batch, const Perturbation& delta, const AdvConfig& cfg) {
  Tape& tape = graph.tape();
  auto clean = graph.encode(batch);
  Var clean_logits = graph.task_logits(clean.cls);
  std::optional<Var> dimg, dtxt;
  if (delta.img) dimg = tape.constant(*delta.img);
  if (delta.txt) dtxt = tape.constant(*delta.txt);
  auto adv = graph.encode(batch, dimg, dtxt);
  Var adv_logits = graph.task_logits(adv.cls);

  AdvTerms t;
  t.standard = softmax_cross_entropy(clean_logits, batch.labels);
  t.adversarial = softmax_cross_entropy(adv_logits, batch.labels);
  t.kl = symmetric_kl(adv_logits, cfg.full_kl_gradient ? clean_logits : stop_gradient(clean_logits));
  t.total = add(add(t.standard, t.adversarial), scale(t.kl, cfg.kl_weight));
  return t;
}

AdvLoss adv_loss(const ArchSpec& arch, const ParamStore& params, const Mask* mask, const Batch& batch,
                 const Perturbation& delta, const AdvConfig& cfg) {
  cfg.validate();
  Tape tape;
  ModelGraph g(tape, arch, params, mask, false);
  auto t = adv_terms(g, batch, delta, cfg);
  return {t.standard.value().item(), t.adversarial.value().item(), t.kl.value().item(), t.total.value().item()};
}

LossBuilder adversarial_loss(const AdvConfig& cfg) {
  cfg.validate();
  return [cfg](ModelGraph& graph, const Batch& batch) {
    Perturbation delta = pgd_perturb(graph.arch(), graph.params(), graph.mask(), batch, cfg);
    return adv_terms(graph, batch, delta, cfg).total;
  };
}

std::vector<double> adv_train(const ArchSpec& arch, ParamStore& params, const Mask* mask, const TaskDataset& data,
                              const AdvConfig& cfg, const TrainBudget& budget, std::uint64_t seed,
                              const StepObserver& observe) {
  return train_steps(arch, params, mask, data, budget, seed, 0, budget.steps, adversarial_loss(cfg), observe);
}

}  // namespace ticketforge
