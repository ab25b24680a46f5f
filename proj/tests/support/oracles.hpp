#pragma once

// Reference implementations used as independent oracles by the tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <tuple>
#include <vector>

#include "ticketforge/autodiff.hpp"
#include "ticketforge/mask.hpp"
#include "ticketforge/params.hpp"
#include "ticketforge/rng.hpp"

namespace tf_test {

namespace tf = ticketforge;

inline tf::Tensor random_tensor(const tf::Shape& shape, tf::Rng& rng, double lo = -1.0, double hi = 1.0) {
  tf::Tensor t(shape);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Builds a scalar from leaves; the returned Var must live on `tape`.
using ScalarFn = std::function<tf::Var(tf::Tape& tape, const std::vector<tf::Var>& leaves)>;

inline double eval_scalar(const ScalarFn& fn, const std::vector<tf::Tensor>& inputs) {
  tf::Tape tape;
  std::vector<tf::Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.constant(t));
  return fn(tape, leaves).value().item();
}

// Largest relative error between the tape gradient and a central difference,
// measured per input as ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-6).
inline double gradcheck(const ScalarFn& fn, const std::vector<tf::Tensor>& inputs, double h = 1e-5) {
  tf::Tape tape;
  std::vector<tf::Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  const tf::Var out = fn(tape, leaves);
  const tf::GradMap grads = tape.backward(out);

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const tf::Tensor& analytic = grads[leaves[k]];
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      auto plus = inputs;
      auto minus = inputs;
      plus[k][i] += h;
      minus[k][i] -= h;
      const double numeric = (eval_scalar(fn, plus) - eval_scalar(fn, minus)) / (2.0 * h);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      na += analytic[i] * analytic[i];
      nn += numeric * numeric;
    }
    worst = std::max(worst, std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-6}));
  }
  return worst;
}

// Projects an arbitrary tensor to a scalar with fixed random weights so that
// every output element contributes a distinct gradient.
inline tf::Var weighted_sum(tf::Var v, std::uint64_t seed) {
  tf::Rng rng(seed);
  const tf::Tensor w = random_tensor(v.shape(), rng);
  return tf::sum(tf::mul(v, v.tape().constant(w)));
}

// Full-sort selection of the positions global magnitude pruning must remove:
// kept positions ordered by (|value|, tensor name, flat index).
inline std::vector<std::pair<std::string, std::size_t>> prune_oracle(const tf::ParamStore& params,
                                                                    const tf::Mask& mask, double rate) {
  std::vector<std::tuple<double, std::string, std::size_t>> kept;
  for (const auto& e : mask.entries()) {
    const tf::Tensor& w = params.at(e.name);
    for (std::size_t i = 0; i < e.keep.size(); ++i) {
      if (e.keep[i]) kept.emplace_back(std::abs(w[i]), e.name, i);
    }
  }
  std::sort(kept.begin(), kept.end());
  const auto n = static_cast<std::size_t>(std::floor(rate * static_cast<double>(kept.size()) + 1e-9));
  std::vector<std::pair<std::string, std::size_t>> out;
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(std::get<1>(kept[i]), std::get<2>(kept[i]));
  std::sort(out.begin(), out.end());
  return out;
}

// Newly pruned positions of `after` relative to `before`, sorted.
inline std::vector<std::pair<std::string, std::size_t>> newly_pruned(const tf::Mask& before, const tf::Mask& after) {
  std::vector<std::pair<std::string, std::size_t>> out;
  for (const auto& e : after.entries()) {
    const auto& prev = before.entry(e.name).keep;
    for (std::size_t i = 0; i < e.keep.size(); ++i) {
      if (prev[i] && !e.keep[i]) out.emplace_back(e.name, i);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Small random store: a few prunable matrices plus non-prunable vectors and a
// head. With `ties`, values come from a tiny set so magnitudes repeat.
inline tf::ParamStore random_store(std::uint64_t seed, bool ties) {
  tf::Rng rng(seed);
  tf::ParamStore p;
  const std::size_t tensors = 2 + rng.below(4);
  for (std::size_t t = 0; t < tensors; ++t) {
    const std::size_t r = 1 + rng.below(6), c = 1 + rng.below(6);
    tf::Tensor w({r, c});
    for (auto& v : w.values()) {
      v = ties ? (static_cast<double>(1 + rng.below(4)) * 0.25 * (rng.bernoulli(0.5) ? 1.0 : -1.0))
               : rng.uniform(-1.0, 1.0);
    }
    p.set("layer" + std::to_string(t) + ".w", std::move(w));
    p.set("layer" + std::to_string(t) + ".b", random_tensor({c}, rng));
  }
  p.set("head.out.w", random_tensor({3, 2}, rng));
  return p;
}

// Kept-set Jaccard overlap in percent, counted position by position.
inline double overlap_oracle(const tf::Mask& a, const tf::Mask& b) {
  std::size_t both = 0, either = 0;
  for (const auto& e : a.entries()) {
    const auto& other = b.entry(e.name).keep;
    for (std::size_t i = 0; i < e.keep.size(); ++i) {
      both += (e.keep[i] && other[i]) ? 1 : 0;
      either += (e.keep[i] || other[i]) ? 1 : 0;
    }
  }
  return either == 0 ? 100.0 : 100.0 * static_cast<double>(both) / static_cast<double>(either);
}

}  // namespace tf_test
