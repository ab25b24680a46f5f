#include "ticketforge/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ticketforge/error.hpp"

namespace ticketforge {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

const Tensor& BackwardIo::out() const { return tape_.nodes_[node_].value; }

const Tensor& BackwardIo::in(std::size_t i) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs[i]].value;
}

bool BackwardIo::needs(std::size_t i) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs[i]].requires_grad;
}

Tensor& BackwardIo::grad(std::size_t i) {
  const auto& inputs = tape_.nodes_[node_].inputs;
  if (local_.size() != inputs.size()) local_.resize(inputs.size());
  Tensor& g = local_[i];
  if (g.numel() == 0) g = Tensor::zeros(tape_.nodes_[inputs[i]].value.shape());
  return g;
}

Var Tape::leaf(Tensor value) {
  if (consumed_) throw StateError("tape already consumed by backward");
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  if (consumed_) throw StateError("tape already consumed by backward");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (consumed_) throw StateError("tape already consumed by backward");
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw StateError("operation mixes variables from different tapes");
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

GradMap Tape::backward(Var loss) {
  if (&loss.tape() != this) throw StateError("loss does not belong to this tape");
  if (consumed_) throw StateError("backward already run on this tape");
  if (nodes_[loss.id()].value.numel() != 1) {
    throw DimensionError("backward requires a scalar loss, got " +
                         shape_str(nodes_[loss.id()].value.shape()));
  }
  consumed_ = true;

  std::vector<Tensor> grads(nodes_.size());
  grads[loss.id()] = Tensor::full(nodes_[loss.id()].value.shape(), 1.0);
  for (std::size_t k = loss.id() + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.backward || grads[k].numel() == 0) continue;
    BackwardIo io(*this, k);
    n.backward(grads[k], io);
    for (std::size_t i = 0; i < io.local_.size(); ++i) {
      Tensor& contrib = io.local_[i];
      if (contrib.numel() == 0) continue;
      Tensor& total = grads[n.inputs[i]];
      if (total.numel() == 0) {
        total = std::move(contrib);
      } else {
        auto& t = total.values();
        const auto& c = contrib.values();
        for (std::size_t j = 0; j < t.size(); ++j) t[j] += c[j];
      }
    }
  }
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    if (nodes_[k].is_leaf && grads[k].numel() == 0) grads[k] = Tensor::zeros(nodes_[k].value.shape());
  }
  return GradMap(std::move(grads));
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
  }
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  const auto& x = a.value().values();
  const auto& y = b.value().values();
  Tensor out(a.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return a.tape().record(std::move(out), {a, b}, [](const Tensor& g, BackwardIo& io) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!io.needs(k)) continue;
      auto& dst = io.grad(k).values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  const auto& x = a.value().values();
  const auto& y = b.value().values();
  Tensor out(a.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return a.tape().record(std::move(out), {a, b}, [](const Tensor& g, BackwardIo& io) {
    if (io.needs(0)) {
      auto& dst = io.grad(0).values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    }
    if (io.needs(1)) {
      auto& dst = io.grad(1).values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  const auto& x = a.value().values();
  const auto& y = b.value().values();
  Tensor out(a.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return a.tape().record(std::move(out), {a, b}, [](const Tensor& g, BackwardIo& io) {
    if (io.needs(0)) {
      const auto& y = io.in(1).values();
      auto& dst = io.grad(0).values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * y[i];
    }
    if (io.needs(1)) {
      const auto& x = io.in(0).values();
      auto& dst = io.grad(1).values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * x[i];
    }
  });
}

Var scale(Var a, double factor) {
  const auto& x = a.value().values();
  Tensor out(a.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  return a.tape().record(std::move(out), {a}, [factor](const Tensor& g, BackwardIo& io) {
    auto& dst = io.grad(0).values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * factor;
  });
}

Var add_tiled(Var a, Var b) {
  const std::size_t n = a.value().numel();
  const std::size_t m = b.value().numel();
  if (m == 0 || n % m != 0) {
    throw DimensionError("add_tiled: " + shape_str(b.shape()) + " does not tile " +
                         shape_str(a.shape()));
  }
  const auto& x = a.value().values();
  const auto& y = b.value().values();
  Tensor out(a.shape());
  for (std::size_t i = 0; i < n; i += m) {
    for (std::size_t j = 0; j < m; ++j) out[i + j] = x[i + j] + y[j];
  }
  return a.tape().record(std::move(out), {a, b}, [n, m](const Tensor& g, BackwardIo& io) {
    if (io.needs(0)) {
      auto& dst = io.grad(0).values();
      for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
    }
    if (io.needs(1)) {
      auto& dst = io.grad(1).values();
      for (std::size_t i = 0; i < n; i += m) {
        for (std::size_t j = 0; j < m; ++j) dst[j] += g[i + j];
      }
    }
  });
}

namespace {

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Tensor out({m, n});
  gemm_nn(a.value().values().data(), b.value().values().data(), out.values().data(), m, k, n);
  return a.tape().record(std::move(out), {a, b}, [m, k, n](const Tensor& g, BackwardIo& io) {
    if (io.needs(0)) {
      gemm_nt(g.values().data(), io.in(1).values().data(), io.grad(0).values().data(), m, n, k);
    }
    if (io.needs(1)) {
      gemm_tn(io.in(0).values().data(), g.values().data(), io.grad(1).values().data(), m, k, n);
    }
  });
}

Var bmm(Var a, Var b, bool transpose_b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const std::size_t batch = a.shape()[0], m = a.shape()[1], k = a.shape()[2];
  if (b.shape()[0] != batch) throw DimensionError("bmm: batch sizes differ");
  const std::size_t bk = transpose_b ? b.shape()[2] : b.shape()[1];
  const std::size_t n = transpose_b ? b.shape()[1] : b.shape()[2];
  if (bk != k) {
    throw DimensionError("bmm: inner dimensions differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Tensor out({batch, m, n});
  const double* ap = a.value().values().data();
  const double* bp = b.value().values().data();
  double* op = out.values().data();
  for (std::size_t t = 0; t < batch; ++t) {
    if (transpose_b) {
      gemm_nt(ap + t * m * k, bp + t * n * k, op + t * m * n, m, k, n);
    } else {
      gemm_nn(ap + t * m * k, bp + t * k * n, op + t * m * n, m, k, n);
    }
  }
  return a.tape().record(
      std::move(out), {a, b}, [batch, m, k, n, transpose_b](const Tensor& g, BackwardIo& io) {
        const double* gp = g.values().data();
        if (io.needs(0)) {
          const double* bp = io.in(1).values().data();
          double* da = io.grad(0).values().data();
          for (std::size_t t = 0; t < batch; ++t) {
            if (transpose_b) {
              // da = g * b       (b stored [n x k])
              gemm_nn(gp + t * m * n, bp + t * n * k, da + t * m * k, m, n, k);
            } else {
              // da = g * b^T     (b stored [k x n])
              gemm_nt(gp + t * m * n, bp + t * k * n, da + t * m * k, m, n, k);
            }
          }
        }
        if (io.needs(1)) {
          const double* ap = io.in(0).values().data();
          double* db = io.grad(1).values().data();
          for (std::size_t t = 0; t < batch; ++t) {
            if (transpose_b) {
              // db[n x k] = g^T * a
              gemm_tn(gp + t * m * n, ap + t * m * k, db + t * n * k, m, n, k);
            } else {
              // db[k x n] = a^T * g
              gemm_tn(ap + t * m * k, gp + t * m * n, db + t * k * n, m, k, n);
            }
          }
        }
      });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a}, [](const Tensor& g, BackwardIo& io) {
    auto& dst = io.grad(0).values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  });
}

Var swap_axes12(Var a) {
  require_rank(a, 4, "swap_axes12");
  const Shape& s = a.shape();
  const std::size_t d0 = s[0], d1 = s[1], d2 = s[2], d3 = s[3];
  Tensor out({d0, d2, d1, d3});
  const auto& x = a.value().values();
  for (std::size_t i = 0; i < d0; ++i)
    for (std::size_t j = 0; j < d1; ++j)
      for (std::size_t k = 0; k < d2; ++k) {
        const double* src = &x[((i * d1 + j) * d2 + k) * d3];
        double* dst = &out[((i * d2 + k) * d1 + j) * d3];
        std::copy(src, src + d3, dst);
      }
  return a.tape().record(std::move(out), {a}, [d0, d1, d2, d3](const Tensor& g, BackwardIo& io) {
    auto& dx = io.grad(0).values();
    for (std::size_t i = 0; i < d0; ++i)
      for (std::size_t j = 0; j < d1; ++j)
        for (std::size_t k = 0; k < d2; ++k) {
          const double* src = &g[((i * d2 + k) * d1 + j) * d3];
          double* dst = &dx[((i * d1 + j) * d2 + k) * d3];
          for (std::size_t l = 0; l < d3; ++l) dst[l] += src[l];
        }
  });
}

Tensor softmax_rows(const Tensor& logits) {
  const std::size_t c = last_dim(logits);
  const std::size_t rows = logits.numel() / c;
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &logits[r * c];
    double* y = &out[r * c];
    double mx = x[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < c; ++j) y[j] /= z;
  }
  return out;
}

Tensor log_softmax_rows(const Tensor& logits) {
  const std::size_t c = last_dim(logits);
  const std::size_t rows = logits.numel() / c;
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &logits[r * c];
    double* y = &out[r * c];
    double mx = x[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) y[j] = x[j] - lse;
  }
  return out;
}

Var softmax(Var a) {
  Tensor out = softmax_rows(a.value());
  const std::size_t c = last_dim(out);
  return a.tape().record(std::move(out), {a}, [c](const Tensor& g, BackwardIo& io) {
    const Tensor& y = io.out();
    auto& dx = io.grad(0).values();
    const std::size_t rows = y.numel() / c;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
      for (std::size_t j = 0; j < c; ++j) dx[r * c + j] += y[r * c + j] * (g[r * c + j] - dot);
    }
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var a) {
  const auto& x = a.value().values();
  Tensor out(a.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return a.tape().record(std::move(out), {a}, [](const Tensor& g, BackwardIo& io) {
    const auto& x = io.in(0).values();
    auto& dx = io.grad(0).values();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = x[i];
      const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      dx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const std::size_t h = last_dim(x.value());
  if (gamma.value().numel() != h || beta.value().numel() != h) {
    throw DimensionError("layer_norm: affine parameters must have " + std::to_string(h) +
                         " entries");
  }
  const std::size_t rows = x.value().numel() / h;
  const auto& xv = x.value().values();
  const auto& gv = gamma.value().values();
  const auto& bv = beta.value().values();
  Tensor out(x.shape());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &xv[r * h];
    double mu = 0.0;
    for (std::size_t j = 0; j < h; ++j) mu += row[j];
    mu /= static_cast<double>(h);
    double var = 0.0;
    for (std::size_t j = 0; j < h; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(h);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < h; ++j) {
      const double xh = (row[j] - mu) * is;
      xhat[r * h + j] = xh;
      out[r * h + j] = xh * gv[j] + bv[j];
    }
  }
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [h, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Tensor& g,
                                                                      BackwardIo& io) {
        if (io.needs(1)) {
          auto& dg = io.grad(1).values();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < h; ++j) dg[j] += g[r * h + j] * xhat[r * h + j];
        }
        if (io.needs(2)) {
          auto& db = io.grad(2).values();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < h; ++j) db[j] += g[r * h + j];
        }
        if (io.needs(0)) {
          const auto& gam = io.in(1).values();
          auto& dx = io.grad(0).values();
          std::vector<double> dxh(h);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < h; ++j) {
              dxh[j] = g[r * h + j] * gam[j];
              m1 += dxh[j];
              m2 += dxh[j] * xhat[r * h + j];
            }
            m1 /= static_cast<double>(h);
            m2 /= static_cast<double>(h);
            for (std::size_t j = 0; j < h; ++j) {
              dx[r * h + j] += inv_std[r] * (dxh[j] - m1 - xhat[r * h + j] * m2);
            }
          }
        }
      });
}

Var gather_rows(Var table, std::span<const int> ids) {
  require_rank(table, 2, "gather_rows");
  const std::size_t rows = table.shape()[0], h = table.shape()[1];
  if (ids.empty()) throw DimensionError("gather_rows: empty index list");
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= rows) {
      throw IndexError("gather_rows: index " + std::to_string(id) + " outside table of " +
                       std::to_string(rows) + " rows");
    }
  }
  Tensor out({ids.size(), h});
  const auto& tv = table.value().values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(&tv[static_cast<std::size_t>(ids[i]) * h], h, &out[i * h]);
  }
  return table.tape().record(
      std::move(out), {table},
      [h, idx = std::vector<int>(ids.begin(), ids.end())](const Tensor& g, BackwardIo& io) {
        auto& dt = io.grad(0).values();
        for (std::size_t i = 0; i < idx.size(); ++i) {
          double* dst = &dt[static_cast<std::size_t>(idx[i]) * h];
          for (std::size_t j = 0; j < h; ++j) dst[j] += g[i * h + j];
        }
      });
}

Var concat_seq(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_seq: no inputs");
  const std::size_t b = parts[0].shape().at(0);
  const std::size_t h = parts[0].shape().at(2);
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_rank(p, 3, "concat_seq");
    if (p.shape()[0] != b || p.shape()[2] != h) {
      throw DimensionError("concat_seq: incompatible part " + shape_str(p.shape()));
    }
    lens.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  Tensor out({b, total, h});
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto& src = parts[k].value().values();
      std::copy_n(&src[i * lens[k] * h], lens[k] * h, &out[(i * total + off) * h]);
      off += lens[k];
    }
  }
  return parts[0].tape().record(
      std::move(out), std::vector<Var>(parts.begin(), parts.end()),
      [b, h, total, lens](const Tensor& g, BackwardIo& io) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < lens.size(); ++k) {
          if (io.needs(k)) {
            auto& dst = io.grad(k).values();
            for (std::size_t i = 0; i < b; ++i) {
              const double* src = &g[(i * total + off) * h];
              double* d = &dst[i * lens[k] * h];
              for (std::size_t j = 0; j < lens[k] * h; ++j) d[j] += src[j];
            }
          }
          off += lens[k];
        }
      });
}

Var slice_seq(Var a, std::size_t start, std::size_t len) {
  require_rank(a, 3, "slice_seq");
  const std::size_t b = a.shape()[0], s = a.shape()[1], h = a.shape()[2];
  if (len == 0 || start + len > s) {
    throw IndexError("slice_seq: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") outside sequence of length " + std::to_string(s));
  }
  Tensor out({b, len, h});
  const auto& x = a.value().values();
  for (std::size_t i = 0; i < b; ++i) {
    std::copy_n(&x[(i * s + start) * h], len * h, &out[i * len * h]);
  }
  return a.tape().record(std::move(out), {a}, [b, s, h, start, len](const Tensor& g, BackwardIo& io) {
    auto& dx = io.grad(0).values();
    for (std::size_t i = 0; i < b; ++i) {
      const double* src = &g[i * len * h];
      double* dst = &dx[(i * s + start) * h];
      for (std::size_t j = 0; j < len * h; ++j) dst[j] += src[j];
    }
  });
}

Var sum(Var a) {
  double acc = 0.0;
  for (double v : a.value().values()) acc += v;
  return a.tape().record(Tensor::scalar(acc), {a}, [](const Tensor& g, BackwardIo& io) {
    auto& dx = io.grad(0).values();
    for (double& d : dx) d += g[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().numel());
  double acc = 0.0;
  for (double v : a.value().values()) acc += v;
  return a.tape().record(Tensor::scalar(acc / n), {a}, [n](const Tensor& g, BackwardIo& io) {
    auto& dx = io.grad(0).values();
    for (double& d : dx) d += g[0] / n;
  });
}

Var stop_gradient(Var a) { return a.tape().constant(a.value()); }

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t b = logits.shape()[0], c = logits.shape()[1];
  if (labels.size() != b) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(b));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw IndexError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(c) + ")");
    }
  }
  Tensor logp = log_softmax_rows(logits.value());
  double acc = 0.0;
  for (std::size_t i = 0; i < b; ++i) acc -= logp[i * c + static_cast<std::size_t>(labels[i])];
  const double loss = acc / static_cast<double>(b);
  return logits.tape().record(
      Tensor::scalar(loss), {logits},
      [b, c, logp = std::move(logp), y = std::vector<int>(labels.begin(), labels.end())](
          const Tensor& g, BackwardIo& io) {
        auto& dx = io.grad(0).values();
        const double w = g[0] / static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const double p = std::exp(logp[i * c + j]);
            const double t = (static_cast<int>(j) == y[i]) ? 1.0 : 0.0;
            dx[i * c + j] += w * (p - t);
          }
        }
      });
}

Var symmetric_kl(Var p_logits, Var q_logits) {
  require_same_shape(p_logits, q_logits, "symmetric_kl");
  require_rank(p_logits, 2, "symmetric_kl");
  const std::size_t b = p_logits.shape()[0], c = p_logits.shape()[1];
  Tensor lp = log_softmax_rows(p_logits.value());
  Tensor lq = log_softmax_rows(q_logits.value());
  // KL(p||q) + KL(q||p) = sum_j (p_j - q_j)(log p_j - log q_j); each term is
  // invariant under swapping p and q, so the result is exactly symmetric.
  double acc = 0.0;
  for (std::size_t i = 0; i < b * c; ++i) acc += (std::exp(lp[i]) - std::exp(lq[i])) * (lp[i] - lq[i]);
  const double loss = acc / static_cast<double>(b);
  return p_logits.tape().record(
      Tensor::scalar(loss), {p_logits, q_logits},
      [b, c, lp = std::move(lp), lq = std::move(lq)](const Tensor& g, BackwardIo& io) {
        const double w = g[0] / static_cast<double>(b);
        // d/da_k = p_k (d_k - <p, d>) + (p_k - q_k), with d = log p - log q.
        auto side = [&](const Tensor& la, const Tensor& lb, Tensor& dst) {
          for (std::size_t i = 0; i < b; ++i) {
            double inner = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              inner += std::exp(la[i * c + j]) * (la[i * c + j] - lb[i * c + j]);
            }
            for (std::size_t j = 0; j < c; ++j) {
              const double pa = std::exp(la[i * c + j]);
              const double pb = std::exp(lb[i * c + j]);
              const double d = la[i * c + j] - lb[i * c + j];
              dst[i * c + j] += w * (pa * (d - inner) + (pa - pb));
            }
          }
        };
        if (io.needs(0)) side(lp, lq, io.grad(0));
        if (io.needs(1)) side(lq, lp, io.grad(1));
      });
}

}  // namespace ticketforge
