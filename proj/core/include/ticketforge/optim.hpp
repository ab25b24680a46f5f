#pragma once

#include <map>
#include <memory>
#include <string>

#include "ticketforge/autodiff.hpp"
#include "ticketforge/mask.hpp"
#include "ticketforge/params.hpp"

namespace ticketforge {

/// Gradient per parameter name.
using ParamGrads = std::map<std::string, Tensor>;

/// Plain SGD update w <- w - lr * g. Every parameter in `params` needs a
/// gradient. Masked positions are written as +0.0 after the update.
/// Throws TrainingError naming the first parameter with a non-finite gradient.
void optimizer_step(ParamStore& params, const ParamGrads& grads, double lr, const Mask* mask = nullptr);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(ParamStore& params, const ParamGrads& grads, const Mask* mask) = 0;
  virtual std::string name() const = 0;
};

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double lr);
  void step(ParamStore& params, const ParamGrads& grads, const Mask* mask) override;
  std::string name() const override { return "sgd"; }
  double lr() const { return lr_; }

 private:
  double lr_;
};

/// Heavy-ball momentum: v <- beta * v + g; w <- w - lr * v.
class Momentum final : public Optimizer {
 public:
  Momentum(double lr, double beta = 0.9);
  void step(ParamStore& params, const ParamGrads& grads, const Mask* mask) override;
  std::string name() const override { return "momentum"; }

 private:
  double lr_;
  double beta_;
  ParamGrads velocity_;
};

/// Adam with bias correction.
class Adam final : public Optimizer {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(ParamStore& params, const ParamGrads& grads, const Mask* mask) override;
  std::string name() const override { return "adam"; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  ParamGrads m_, v_;
};

/// "sgd", "momentum" or "adam"; ConfigError otherwise.
std::unique_ptr<Optimizer> make_optimizer(const std::string& name, double lr);

}  // namespace ticketforge
