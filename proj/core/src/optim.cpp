#include "ticketforge/optim.hpp"

#include <cmath>

#include "ticketforge/error.hpp"

namespace ticketforge {

namespace {

void check_lr(double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr: must be a positive finite number");
}

void check_grads(const ParamStore& params, const ParamGrads& grads, const Mask* mask) {
  if (mask) mask->check_layout(params);
  for (const auto& [name, e] : params.entries()) {
    auto it = grads.find(name);
    if (it == grads.end()) throw TrainingError("no gradient for parameter '" + name + "'");
    if (it->second.shape() != e.value.shape()) {
      throw DimensionError("gradient for '" + name + "' has shape " + shape_str(it->second.shape()));
    }
    if (!it->second.all_finite()) throw TrainingError("non-finite gradient for parameter '" + name + "'");
  }
}

}  // namespace

void optimizer_step(ParamStore& params, const ParamGrads& grads, double lr, const Mask* mask) {
  check_lr(lr);
  check_grads(params, grads, mask);
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) continue;
    Tensor& w = params.at(name);
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] -= lr * g[i];
  }
  if (mask) mask->apply(params);
}

Sgd::Sgd(double lr) : lr_(lr) { check_lr(lr); }

void Sgd::step(ParamStore& params, const ParamGrads& grads, const Mask* mask) {
  optimizer_step(params, grads, lr_, mask);
}

Momentum::Momentum(double lr, double beta) : lr_(lr), beta_(beta) {
  check_lr(lr);
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("momentum: beta must lie in [0, 1)");
}

void Momentum::step(ParamStore& params, const ParamGrads& grads, const Mask* mask) {
  check_grads(params, grads, mask);
  for (const auto& [name, e] : params.entries()) {
    const Tensor& g = grads.at(name);
    Tensor& v = velocity_.try_emplace(name, Tensor::zeros(g.shape())).first->second;
    Tensor& w = params.at(name);
    for (std::size_t i = 0; i < w.numel(); ++i) {
      v[i] = beta_ * v[i] + g[i];
      w[i] -= lr_ * v[i];
    }
  }
  if (mask) mask->apply(params);
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  check_lr(lr);
}

void Adam::step(ParamStore& params, const ParamGrads& grads, const Mask* mask) {
  check_grads(params, grads, mask);
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, e] : params.entries()) {
    const Tensor& g = grads.at(name);
    Tensor& m = m_.try_emplace(name, Tensor::zeros(g.shape())).first->second;
    Tensor& v = v_.try_emplace(name, Tensor::zeros(g.shape())).first->second;
    Tensor& w = params.at(name);
    for (std::size_t i = 0; i < w.numel(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
  if (mask) mask->apply(params);
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& name, double lr) {
  if (name == "sgd") return std::make_unique<Sgd>(lr);
  if (name == "momentum") return std::make_unique<Momentum>(lr);
  if (name == "adam") return std::make_unique<Adam>(lr);
  throw ConfigError("budget.optimizer: unknown optimizer '" + name + "'");
}

}  // namespace ticketforge
