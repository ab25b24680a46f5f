#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ticketforge/tensor.hpp"

namespace ticketforge {

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; valid while the tape
// lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Gradients produced by one backward pass. Leaves that the loss does not
// depend on report all-zero gradients.
class GradMap {
 public:
  GradMap() = default;
  explicit GradMap(std::vector<Tensor> grads) : grads_(std::move(grads)) {}

  const Tensor& operator[](Var v) const { return grads_.at(v.id()); }
  const Tensor& of(std::size_t id) const { return grads_.at(id); }

 private:
  std::vector<Tensor> grads_;
};

// View handed to an op's backward closure.
class BackwardIo {
 public:
  const Tensor& out() const;
  const Tensor& in(std::size_t i) const;
  bool needs(std::size_t i) const;
  /// Local gradient buffer for input i, zero-initialised on first use. The
  /// tape adds each buffer into the input's total once the op returns, so an
  /// op's contribution is always formed before it is merged.
  Tensor& grad(std::size_t i);

 private:
  friend class Tape;
  BackwardIo(Tape& tape, std::size_t node) : tape_(tape), node_(node) {}
  Tape& tape_;
  std::size_t node_;
  std::vector<Tensor> local_;
};

// Records operations in execution order, which is a topological order by
// construction. Supports exactly one backward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& grad_out, BackwardIo& io)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input.
  Var leaf(Tensor value);
  /// Non-differentiable input.
  Var constant(Tensor value);

  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  /// Reverse-mode sweep from a scalar loss. Throws StateError when called a
  /// second time on the same tape.
  GradMap backward(Var loss);

 private:
  friend class BackwardIo;
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// ---- differentiable operations ------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// a + tile(b): b is repeated over a's leading elements (numel(a) % numel(b) == 0).
/// Covers bias rows and positional tables.
Var add_tiled(Var a, Var b);
Var matmul(Var a, Var b);
/// Batched product of rank-3 tensors; with transpose_b, computes a * b^T per batch.
Var bmm(Var a, Var b, bool transpose_b = false);
Var reshape(Var a, Shape shape);
/// [A, B, C, D] -> [A, C, B, D].
Var swap_axes12(Var a);
Var softmax(Var a);
Var gelu(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// Row gather: out[i] = table[ids[i]].
Var gather_rows(Var table, std::span<const int> ids);
/// Concatenate rank-3 tensors [b, s_i, h] along axis 1.
Var concat_seq(std::span<const Var> parts);
Var slice_seq(Var a, std::size_t start, std::size_t len);
Var sum(Var a);
Var mean(Var a);
/// Value copy with no gradient path back to `a`.
Var stop_gradient(Var a);

/// Mean over the batch of -log softmax(logits)[label], max-subtracted.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
/// Mean over the batch of KL(p||q) + KL(q||p) on softmax-normalised rows.
Var symmetric_kl(Var p_logits, Var q_logits);

// ---- plain helpers ------------------------------------------------------

Tensor softmax_rows(const Tensor& logits);
Tensor log_softmax_rows(const Tensor& logits);

}  // namespace ticketforge
