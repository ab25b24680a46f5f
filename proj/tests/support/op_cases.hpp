#pragma once

// Random instances of every differentiable operation, shared by the unit
// tests and the acceptance run.

#include <string>
#include <vector>

#include "oracles.hpp"

namespace tf_test {

struct OpCase {
  std::vector<tf::Tensor> inputs;
  ScalarFn fn;
};

struct OpFamily {
  std::string name;
  std::function<OpCase(tf::Rng& rng, std::uint64_t seed)> make;
};

inline std::size_t dim(tf::Rng& rng, std::size_t lo = 1, std::size_t hi = 4) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

inline std::vector<OpFamily> op_families() {
  using tf::Var;
  std::vector<OpFamily> out;
  auto elementwise = [&](std::string name, std::function<Var(Var, Var)> op) {
    out.push_back({name, [op](tf::Rng& rng, std::uint64_t seed) {
                     const tf::Shape s{dim(rng), dim(rng)};
                     return OpCase{{random_tensor(s, rng), random_tensor(s, rng)},
                                   [op, seed](tf::Tape&, const std::vector<Var>& v) {
                                     return weighted_sum(op(v[0], v[1]), seed);
                                   }};
                   }});
  };
  elementwise("add", [](Var a, Var b) { return tf::add(a, b); });
  elementwise("sub", [](Var a, Var b) { return tf::sub(a, b); });
  elementwise("mul", [](Var a, Var b) { return tf::mul(a, b); });

  out.push_back({"scale", [](tf::Rng& rng, std::uint64_t seed) {
                   const double f = rng.uniform(-2.0, 2.0);
                   return OpCase{{random_tensor({dim(rng), dim(rng)}, rng)},
                                 [f, seed](tf::Tape&, const std::vector<Var>& v) {
                                   return weighted_sum(tf::scale(v[0], f), seed);
                                 }};
                 }});
  out.push_back({"add_tiled", [](tf::Rng& rng, std::uint64_t seed) {
                   const std::size_t r = dim(rng), c = dim(rng);
                   return OpCase{{random_tensor({r, c}, rng), random_tensor({c}, rng)},
                                 [seed](tf::Tape&, const std::vector<Var>& v) {
                                   return weighted_sum(tf::add_tiled(v[0], v[1]), seed);
                                 }};
                 }});
  out.push_back({"matmul", [](tf::Rng& rng, std::uint64_t seed) {
                   const std::size_t n = dim(rng), k = dim(rng), m = dim(rng);
                   return OpCase{{random_tensor({n, k}, rng), random_tensor({k, m}, rng)},
                                 [seed](tf::Tape&, const std::vector<Var>& v) {
                                   return weighted_sum(tf::matmul(v[0], v[1]), seed);
                                 }};
                 }});
  out.push_back({"bmm", [](tf::Rng& rng, std::uint64_t seed) {
                   const std::size_t b = dim(rng, 1, 3), n = dim(rng), k = dim(rng), m = dim(rng);
                   return OpCase{{random_tensor({b, n, k}, rng), random_tensor({b, k, m}, rng)},
                                 [seed](tf::Tape&, const std::vector<Var>& v) {
                                   return weighted_sum(tf::bmm(v[0], v[1]), seed);
                                 }};
                 }});
  out.push_back({"bmm_transposed", [](tf::Rng& rng, std::uint64_t seed) {
                   const std::size_t b = dim(rng, 1, 3), n = dim(rng), k = dim(rng), m = dim(rng);
                   return OpCase{{random_tensor({b, n, k}, rng), random_tensor({b, m, k}, rng)},
                                 [seed](tf::Tape&, const std::vector<Var>& v) {
                                   return weighted_sum(tf::bmm(v[0], v[1], true), seed);
                                 }};
                 }});
  out.push_back({"reshape", [](tf::Rng& rng, std::uint64_t seed) {
                   const std::size_t r = dim(rng), c = dim(rng);
                   return OpCase{{random_tensor({r, c}, rng)}, [r, c, seed](tf::Tape&, const std::vector<Var>& v) {
                                   return weighted_sum(tf::reshape(v[0], {c, r}), seed);
                                 }};
                 }});
  out.push_back({"swap_axes12", [](tf::Rng& rng, std::uint64_t seed) {
                   return OpCase{{random_tensor({dim(rng, 1, 2), dim(rng), dim(rng), dim(rng)}, rng)},
                                 [seed](tf::Tape&, const std::vector<Var>& v) {
                                   return weighted_sum(tf::swap_axes12(v[0]), seed);
                                 }};
                 }});
  out.push_back({"softmax", [](tf::Rng& rng, std::uint64_t seed) {
                   return OpCase{{random_tensor({dim(rng), dim(rng, 2, 5)}, rng, -3.0, 3.0)},
                                 [seed](tf::Tape&, const std::vector<Var>& v) {
                                   return weighted_sum(tf::softmax(v[0]), seed);
                                 }};
                 }});
  out.push_back({"gelu", [](tf::Rng& rng, std::uint64_t seed) {
                   return OpCase{{random_tensor({dim(rng), dim(rng)}, rng, -3.0, 3.0)},
                                 [seed](tf::Tape&, const std::vector<Var>& v) {
                                   return weighted_sum(tf::gelu(v[0]), seed);
                                 }};
                 }});
  out.push_back({"layer_norm", [](tf::Rng& rng, std::uint64_t seed) {
                   const std::size_t r = dim(rng), h = dim(rng, 2, 6);
                   return OpCase{{random_tensor({r, h}, rng, -2.0, 2.0), random_tensor({h}, rng),
                                  random_tensor({h}, rng)},
                                 [seed](tf::Tape&, const std::vector<Var>& v) {
                                   return weighted_sum(tf::layer_norm(v[0], v[1], v[2]), seed);
                                 }};
                 }});
  out.push_back({"gather_rows", [](tf::Rng& rng, std::uint64_t seed) {
                   const std::size_t rows = dim(rng, 2, 5);
                   std::vector<int> ids(dim(rng, 1, 6));
                   // Repeated ids exercise gradient accumulation.
                   for (auto& id : ids) id = static_cast<int>(rng.below(rows));
                   return OpCase{{random_tensor({rows, dim(rng)}, rng)},
                                 [ids, seed](tf::Tape&, const std::vector<Var>& v) {
                                   return weighted_sum(tf::gather_rows(v[0], ids), seed);
                                 }};
                 }});
  out.push_back({"concat_seq", [](tf::Rng& rng, std::uint64_t seed) {
                   const std::size_t b = dim(rng, 1, 2), h = dim(rng);
                   return OpCase{{random_tensor({b, dim(rng), h}, rng), random_tensor({b, dim(rng), h}, rng)},
                                 [seed](tf::Tape&, const std::vector<Var>& v) {
                                   return weighted_sum(tf::concat_seq(v), seed);
                                 }};
                 }});
  out.push_back({"slice_seq", [](tf::Rng& rng, std::uint64_t seed) {
                   const std::size_t s = dim(rng, 2, 5);
                   const std::size_t start = rng.below(s);
                   const std::size_t len = 1 + rng.below(s - start);
                   return OpCase{{random_tensor({dim(rng, 1, 2), s, dim(rng)}, rng)},
                                 [start, len, seed](tf::Tape&, const std::vector<Var>& v) {
                                   return weighted_sum(tf::slice_seq(v[0], start, len), seed);
                                 }};
                 }});
  out.push_back({"sum", [](tf::Rng& rng, std::uint64_t) {
                   return OpCase{{random_tensor({dim(rng), dim(rng)}, rng)},
                                 [](tf::Tape&, const std::vector<Var>& v) { return tf::sum(v[0]); }};
                 }});
  out.push_back({"mean", [](tf::Rng& rng, std::uint64_t) {
                   return OpCase{{random_tensor({dim(rng), dim(rng)}, rng)},
                                 [](tf::Tape&, const std::vector<Var>& v) { return tf::mean(v[0]); }};
                 }});
  out.push_back({"softmax_cross_entropy", [](tf::Rng& rng, std::uint64_t) {
                   const std::size_t b = dim(rng), k = dim(rng, 2, 5);
                   std::vector<int> labels(b);
                   for (auto& l : labels) l = static_cast<int>(rng.below(k));
                   return OpCase{{random_tensor({b, k}, rng, -3.0, 3.0)},
                                 [labels](tf::Tape&, const std::vector<Var>& v) {
                                   return tf::softmax_cross_entropy(v[0], labels);
                                 }};
                 }});
  out.push_back({"symmetric_kl", [](tf::Rng& rng, std::uint64_t) {
                   const tf::Shape s{dim(rng), dim(rng, 2, 5)};
                   return OpCase{{random_tensor(s, rng, -2.0, 2.0), random_tensor(s, rng, -2.0, 2.0)},
                                 [](tf::Tape&, const std::vector<Var>& v) { return tf::symmetric_kl(v[0], v[1]); }};
                 }});
  return out;
}

}  // namespace tf_test
