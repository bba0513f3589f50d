#include "ono/autodiff.hpp"

#include <cmath>

#include "ono/errors.hpp"

namespace ono::ad {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

std::string shape_str(const DenseMatrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

Tape& common_tape(const Tensor& a, const Tensor& b) {
  if (a.tape() != b.tape() || a.tape() == nullptr)
    throw ShapeMismatch("operands live on different tapes");
  return *a.tape();
}

}  // namespace

std::size_t Tensor::rows() const { return value().rows(); }
std::size_t Tensor::cols() const { return value().cols(); }

const DenseMatrix& Tensor::value() const { return tape_->node(id_).value; }

const DenseMatrix& Tensor::grad() const {
  Tape::Node& n = tape_->node(id_);
  if (!n.grad_live) {
    n.grad = DenseMatrix(n.value.rows(), n.value.cols());
    n.grad_live = true;
  }
  return n.grad;
}

bool Tensor::requires_grad() const { return tape_->node(id_).requires_grad; }

Tensor Tape::make(DenseMatrix value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(int id, const DenseMatrix& g) {
  Node& n = node(id);
  if (!n.requires_grad) return;
  if (!n.grad_live) {
    n.grad = DenseMatrix(n.value.rows(), n.value.cols());
    n.grad_live = true;
  }
  if (g.rows() != n.grad.rows() || g.cols() != n.grad.cols())
    throw ShapeMismatch("gradient shape " + shape_str(g) + " for node of shape " +
                        shape_str(n.grad));
  for (std::size_t i = 0; i < g.size(); ++i) n.grad.data()[i] += g.data()[i];
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape_ != this) throw ShapeMismatch("loss from another tape");
  const Node& ln = node(loss.id_);
  if (ln.value.size() != 1) throw NotScalarLoss("loss has shape " + shape_str(ln.value));
  if (consumed_) throw TapeReused("backward() already ran on this tape");
  consumed_ = true;
  accumulate(loss.id_, DenseMatrix(1, 1, {1.0}));
  for (int i = loss.id_; i >= 0; --i) {
    Node& n = node(i);
    if (!n.requires_grad || !n.grad_live || !n.backprop) continue;
    n.backprop(*this, n.grad);
  }
}

Tensor Tape::emit(const char* op, DenseMatrix value, bool requires_grad,
                  std::function<void(Tape&, const DenseMatrix&)> backprop) {
  Tensor out = make(std::move(value), requires_grad);
  Node& n = node(out.id_);
  n.op = op;
  if (requires_grad) n.backprop = std::move(backprop);
  return out;
}

namespace {

Tensor apply_op(Tape& t, const char* name, DenseMatrix value, const std::vector<Tensor>& parents,
                std::function<void(Tape&, const DenseMatrix&)> backprop) {
  bool needs = false;
  for (const Tensor& p : parents) needs = needs || p.requires_grad();
  return t.emit(name, std::move(value), needs, std::move(backprop));
}

}  // namespace

// ---- elementwise helpers ---------------------------------------------------

namespace {

enum class Broadcast { same, row, scalar };

Broadcast classify(const DenseMatrix& a, const DenseMatrix& b, const char* who) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::same;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::scalar;
  throw ShapeMismatch(std::string(who) + " " + shape_str(a) + " vs " + shape_str(b));
}

double broadcast_at(const DenseMatrix& b, Broadcast mode, std::size_t r, std::size_t c) {
  switch (mode) {
    case Broadcast::same: return b(r, c);
    case Broadcast::row: return b(0, c);
    default: return b(0, 0);
  }
}

// Reduces a full-shape gradient onto the broadcast operand's shape.
DenseMatrix reduce_to(const DenseMatrix& g, Broadcast mode) {
  if (mode == Broadcast::same) return g;
  if (mode == Broadcast::row) {
    DenseMatrix out(1, g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) out(0, c) += g(r, c);
    return out;
  }
  double s = 0.0;
  for (double v : g.data()) s += v;
  return DenseMatrix(1, 1, {s});
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& t = common_tape(a, b);
  DenseMatrix out = linalg::matmul(a.value(), b.value());
  return apply_op(t, "matmul", std::move(out), {a, b}, [a, b](Tape& tp, const DenseMatrix& g) {
    if (a.requires_grad()) tp.accumulate(a.id(), linalg::matmul(g, b.value().transposed()));
    if (b.requires_grad()) tp.accumulate(b.id(), linalg::matmul(a.value().transposed(), g));
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tape& t = common_tape(a, b);
  const Broadcast mode = classify(a.value(), b.value(), "add");
  DenseMatrix out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += broadcast_at(b.value(), mode, r, c);
  return apply_op(t, "add", std::move(out), {a, b}, [a, b, mode](Tape& tp, const DenseMatrix& g) {
    if (a.requires_grad()) tp.accumulate(a.id(), g);
    if (b.requires_grad()) tp.accumulate(b.id(), reduce_to(g, mode));
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tape& t = common_tape(a, b);
  const Broadcast mode = classify(a.value(), b.value(), "sub");
  DenseMatrix out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) -= broadcast_at(b.value(), mode, r, c);
  return apply_op(t, "sub", std::move(out), {a, b}, [a, b, mode](Tape& tp, const DenseMatrix& g) {
    if (a.requires_grad()) tp.accumulate(a.id(), g);
    if (b.requires_grad()) {
      DenseMatrix gb = reduce_to(g, mode);
      for (double& v : gb.data()) v = -v;
      tp.accumulate(b.id(), gb);
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tape& t = common_tape(a, b);
  const Broadcast mode = classify(a.value(), b.value(), "mul");
  DenseMatrix out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) *= broadcast_at(b.value(), mode, r, c);
  return apply_op(t, "mul", std::move(out), {a, b}, [a, b, mode](Tape& tp, const DenseMatrix& g) {
    if (a.requires_grad()) {
      DenseMatrix da = g;
      for (std::size_t r = 0; r < da.rows(); ++r)
        for (std::size_t c = 0; c < da.cols(); ++c) da(r, c) *= broadcast_at(b.value(), mode, r, c);
      tp.accumulate(a.id(), da);
    }
    if (b.requires_grad()) {
      DenseMatrix full = g;
      for (std::size_t r = 0; r < full.rows(); ++r)
        for (std::size_t c = 0; c < full.cols(); ++c) full(r, c) *= a.value()(r, c);
      tp.accumulate(b.id(), reduce_to(full, mode));
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  Tape& t = *a.tape();
  DenseMatrix out = a.value();
  for (double& v : out.data()) v *= s;
  return apply_op(t, "scale", std::move(out), {a}, [a, s](Tape& tp, const DenseMatrix& g) {
    DenseMatrix da = g;
    for (double& v : da.data()) v *= s;
    tp.accumulate(a.id(), da);
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  Tape& t = *a.tape();
  DenseMatrix out = a.value();
  for (double& v : out.data()) v += s;
  return apply_op(t, "add_scalar", std::move(out), {a},
                  [a](Tape& tp, const DenseMatrix& g) { tp.accumulate(a.id(), g); });
}

Tensor row_scale(const Tensor& a, const Tensor& s) {
  Tape& t = common_tape(a, s);
  if (s.value().cols() != 1 || s.value().rows() != a.value().rows())
    throw ShapeMismatch("row_scale needs m x 1 scales, got " + shape_str(s.value()));
  DenseMatrix out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) *= s.value()(r, 0);
  return apply_op(t, "row_scale", std::move(out), {a, s}, [a, s](Tape& tp, const DenseMatrix& g) {
    if (a.requires_grad()) {
      DenseMatrix da = g;
      for (std::size_t r = 0; r < da.rows(); ++r)
        for (std::size_t c = 0; c < da.cols(); ++c) da(r, c) *= s.value()(r, 0);
      tp.accumulate(a.id(), da);
    }
    if (s.requires_grad()) {
      DenseMatrix ds(g.rows(), 1);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < g.cols(); ++c) acc += g(r, c) * a.value()(r, c);
        ds(r, 0) = acc;
      }
      tp.accumulate(s.id(), ds);
    }
  });
}

namespace {

template <typename F, typename DF>
Tensor pointwise(const Tensor& a, const char* name, F fwd, DF dfdx) {
  Tape& t = *a.tape();
  DenseMatrix out = a.value();
  for (double& v : out.data()) v = fwd(v);
  return apply_op(t, name, std::move(out), {a}, [a, dfdx](Tape& tp, const DenseMatrix& g) {
    DenseMatrix da = g;
    const DenseMatrix& x = a.value();
    for (std::size_t i = 0; i < da.size(); ++i) da.data()[i] *= dfdx(x.data()[i]);
    tp.accumulate(a.id(), da);
  });
}

}  // namespace

Tensor reciprocal(const Tensor& a) {
  return pointwise(
      a, "reciprocal", [](double x) { return 1.0 / x; },
      [](double x) { return -1.0 / (x * x); });
}

Tensor relu(const Tensor& a) {
  return pointwise(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  return pointwise(
      a, "gelu", [](double x) { return 0.5 * x * std::erfc(-x * kInvSqrt2); },
      [](double x) {
        const double cdf = 0.5 * std::erfc(-x * kInvSqrt2);
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        return cdf + x * pdf;
      });
}

Tensor elu1(const Tensor& a) {
  return pointwise(
      a, "elu1", [](double x) { return x >= 0.0 ? x + 1.0 : std::exp(x); },
      [](double x) { return x >= 0.0 ? 1.0 : std::exp(x); });
}

Tensor exp_t(const Tensor& a) {
  return pointwise(
      a, "exp", [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Tensor sqrt_t(const Tensor& a) {
  return pointwise(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double x) { return 0.5 / std::sqrt(x); });
}

Tensor square(const Tensor& a) {
  return pointwise(
      a, "square", [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Tensor sum(const Tensor& a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return apply_op(t, "sum", DenseMatrix(1, 1, {s}), {a}, [a](Tape& tp, const DenseMatrix& g) {
    tp.accumulate(a.id(), DenseMatrix(a.rows(), a.cols(), g(0, 0)));
  });
}

Tensor mean(const Tensor& a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const double inv_n = 1.0 / static_cast<double>(a.value().size());
  return apply_op(t, "mean", DenseMatrix(1, 1, {s * inv_n}), {a},
                  [a, inv_n](Tape& tp, const DenseMatrix& g) {
                    tp.accumulate(a.id(), DenseMatrix(a.rows(), a.cols(), g(0, 0) * inv_n));
                  });
}

Tensor transpose(const Tensor& a) {
  Tape& t = *a.tape();
  return apply_op(t, "transpose", a.value().transposed(), {a},
                  [a](Tape& tp, const DenseMatrix& g) { tp.accumulate(a.id(), g.transposed()); });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  Tape& t = common_tape(a, b);
  if (a.rows() != b.rows()) throw ShapeMismatch("concat_cols row mismatch");
  DenseMatrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) = a.value()(r, c);
    for (std::size_t c = 0; c < b.cols(); ++c) out(r, a.cols() + c) = b.value()(r, c);
  }
  return apply_op(t, "concat_cols", std::move(out), {a, b},
                  [a, b](Tape& tp, const DenseMatrix& g) {
                    if (a.requires_grad()) {
                      DenseMatrix da(a.rows(), a.cols());
                      for (std::size_t r = 0; r < a.rows(); ++r)
                        for (std::size_t c = 0; c < a.cols(); ++c) da(r, c) = g(r, c);
                      tp.accumulate(a.id(), da);
                    }
                    if (b.requires_grad()) {
                      DenseMatrix db(b.rows(), b.cols());
                      for (std::size_t r = 0; r < b.rows(); ++r)
                        for (std::size_t c = 0; c < b.cols(); ++c) db(r, c) = g(r, a.cols() + c);
                      tp.accumulate(b.id(), db);
                    }
                  });
}

Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  Tape& t = *a.tape();
  if (c0 >= c1 || c1 > a.cols()) throw ShapeMismatch("slice_cols range");
  DenseMatrix out(a.rows(), c1 - c0);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = c0; c < c1; ++c) out(r, c - c0) = a.value()(r, c);
  return apply_op(t, "slice_cols", std::move(out), {a},
                  [a, c0, c1](Tape& tp, const DenseMatrix& g) {
                    DenseMatrix da(a.rows(), a.cols());
                    for (std::size_t r = 0; r < a.rows(); ++r)
                      for (std::size_t c = c0; c < c1; ++c) da(r, c) = g(r, c - c0);
                    tp.accumulate(a.id(), da);
                  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows of nothing");
  Tape& t = *parts[0].tape();
  std::size_t total = 0;
  const std::size_t cols = parts[0].cols();
  for (const Tensor& p : parts) {
    common_tape(parts[0], p);
    if (p.cols() != cols) throw ShapeMismatch("concat_rows column mismatch");
    total += p.rows();
  }
  DenseMatrix out(total, cols);
  std::size_t at = 0;
  for (const Tensor& p : parts) {
    for (std::size_t r = 0; r < p.rows(); ++r)
      for (std::size_t c = 0; c < cols; ++c) out(at + r, c) = p.value()(r, c);
    at += p.rows();
  }
  std::vector<Tensor> parents = parts;
  return apply_op(t, "concat_rows", std::move(out), parents,
                  [parents](Tape& tp, const DenseMatrix& g) {
                    std::size_t at = 0;
                    for (const Tensor& p : parents) {
                      if (p.requires_grad()) {
                        DenseMatrix dp(p.rows(), p.cols());
                        for (std::size_t r = 0; r < p.rows(); ++r)
                          for (std::size_t c = 0; c < p.cols(); ++c) dp(r, c) = g(at + r, c);
                        tp.accumulate(p.id(), dp);
                      }
                      at += p.rows();
                    }
                  });
}

Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
  Tape& t = *a.tape();
  if (r0 >= r1 || r1 > a.rows()) throw ShapeMismatch("slice_rows range");
  DenseMatrix out(r1 - r0, a.cols());
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(r - r0, c) = a.value()(r, c);
  return apply_op(t, "slice_rows", std::move(out), {a},
                  [a, r0, r1](Tape& tp, const DenseMatrix& g) {
                    DenseMatrix da(a.rows(), a.cols());
                    for (std::size_t r = r0; r < r1; ++r)
                      for (std::size_t c = 0; c < a.cols(); ++c) da(r, c) = g(r - r0, c);
                    tp.accumulate(a.id(), da);
                  });
}

Tensor col_sum(const Tensor& a) {
  Tape& t = *a.tape();
  DenseMatrix out(1, a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(0, c) += a.value()(r, c);
  return apply_op(t, "col_sum", std::move(out), {a}, [a](Tape& tp, const DenseMatrix& g) {
    DenseMatrix da(a.rows(), a.cols());
    for (std::size_t r = 0; r < a.rows(); ++r)
      for (std::size_t c = 0; c < a.cols(); ++c) da(r, c) = g(0, c);
    tp.accumulate(a.id(), da);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  Tape& t = common_tape(x, gamma);
  common_tape(gamma, beta);
  const std::size_t m = x.rows(), n = x.cols();
  if (n < 1) throw ShapeMismatch("layer_norm needs a feature dimension >= 1");
  if (gamma.value().rows() != 1 || gamma.value().cols() != n || beta.value().rows() != 1 ||
      beta.value().cols() != n)
    throw ShapeMismatch("layer_norm affine params must be 1 x features");

  DenseMatrix xhat(m, n);
  std::vector<double> inv_sigma(m, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += x.value()(r, c);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double d = x.value()(r, c) - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    if (var < 1e-12) {
      inv_sigma[r] = 0.0;  // degenerate row: output zeros pre-affine
    } else {
      inv_sigma[r] = 1.0 / std::sqrt(var);
      for (std::size_t c = 0; c < n; ++c) xhat(r, c) = (x.value()(r, c) - mu) * inv_sigma[r];
    }
  }
  DenseMatrix out(m, n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c)
      out(r, c) = xhat(r, c) * gamma.value()(0, c) + beta.value()(0, c);

  return apply_op(
      t, "layer_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_sigma](Tape& tp, const DenseMatrix& g) {
        const std::size_t m = g.rows(), n = g.cols();
        const double inv_n = 1.0 / static_cast<double>(n);
        if (gamma.requires_grad()) {
          DenseMatrix dg(1, n);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) dg(0, c) += g(r, c) * xhat(r, c);
          tp.accumulate(gamma.id(), dg);
        }
        if (beta.requires_grad()) {
          DenseMatrix db(1, n);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) db(0, c) += g(r, c);
          tp.accumulate(beta.id(), db);
        }
        if (x.requires_grad()) {
          DenseMatrix dx(m, n);
          for (std::size_t r = 0; r < m; ++r) {
            if (inv_sigma[r] == 0.0) continue;  // degenerate rows pass no gradient
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
              const double dxh = g(r, c) * gamma.value()(0, c);
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xhat(r, c);
            }
            mean_dxhat *= inv_n;
            mean_dxhat_xhat *= inv_n;
            for (std::size_t c = 0; c < n; ++c) {
              const double dxh = g(r, c) * gamma.value()(0, c);
              dx(r, c) = inv_sigma[r] * (dxh - mean_dxhat - xhat(r, c) * mean_dxhat_xhat);
            }
          }
          tp.accumulate(x.id(), dx);
        }
      });
}

namespace {

// Lower triangle with halved diagonal; the projection in the Cholesky pullback.
DenseMatrix phi_lower(const DenseMatrix& a) {
  DenseMatrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < i; ++j) out(i, j) = a(i, j);
    out(i, i) = 0.5 * a(i, i);
  }
  return out;
}

}  // namespace

Tensor whiten(const Tensor& g) {
  Tape& t = *g.tape();
  const std::size_t m = g.rows(), k = g.cols();
  const double inv_m = 1.0 / static_cast<double>(m);

  DenseMatrix c(k, k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t q = 0; q < k; ++q) {
      double s = 0.0;
      for (std::size_t r = 0; r < m; ++r) s += g.value()(r, p) * g.value()(r, q);
      c(p, q) = s * inv_m;
    }
  DenseMatrix l = linalg::cholesky(c);
  DenseMatrix t_factor = linalg::solve_triangular(l, DenseMatrix::identity(k), true);  // L^{-T}
  DenseMatrix psi = linalg::matmul(g.value(), t_factor);

  return apply_op(
      t, "whiten", std::move(psi), {g},
      [g, l, t_factor, inv_m](Tape& tp, const DenseMatrix& gout) {
        // dT = G^T dPsi;  T = L^{-T} so dL = -L^{-T} dT^T L^{-T}, lower part only;
        // then the Cholesky pullback and the product rule through C = (1/m) G^T G.
        const std::size_t k = l.rows();
        DenseMatrix dt = linalg::matmul(g.value().transposed(), gout);
        DenseMatrix tmp = linalg::matmul(t_factor, dt.transposed());  // L^{-T} dT^T
        DenseMatrix dl_full = linalg::matmul(tmp, t_factor);          // ... L^{-T}
        for (double& v : dl_full.data()) v = -v;
        DenseMatrix dl(k, k);
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j <= i; ++j) dl(i, j) = dl_full(i, j);

        DenseMatrix p = phi_lower(linalg::matmul(l.transposed(), dl));
        DenseMatrix sym = p + p.transposed();
        // dC = (1/2) L^{-T} (P + P^T) L^{-1}
        DenseMatrix half = linalg::solve_triangular(l, sym, true);  // L^{-T} (P+P^T)
        DenseMatrix dc_t = linalg::solve_triangular(l, half.transposed(), true);
        DenseMatrix dc = dc_t.transposed();
        for (double& v : dc.data()) v *= 0.5;

        // dG = dPsi T^T + (2/m) G dC_sym
        DenseMatrix dg = linalg::matmul(gout, t_factor.transposed());
        DenseMatrix dc_sym = 0.5 * (dc + dc.transposed());
        DenseMatrix extra = linalg::matmul(g.value(), dc_sym);
        for (std::size_t i = 0; i < dg.size(); ++i)
          dg.data()[i] += 2.0 * inv_m * extra.data()[i];
        tp.accumulate(g.id(), dg);
      });
}

double grad_check(const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& f,
                  const std::vector<DenseMatrix>& points, double eps) {
  std::vector<DenseMatrix> analytic;
  {
    Tape tape;
    std::vector<Tensor> leaves;
    leaves.reserve(points.size());
    for (const DenseMatrix& p : points) leaves.push_back(tape.param(p));
    Tensor loss = f(tape, leaves);
    tape.backward(loss);
    for (const Tensor& leaf : leaves) analytic.push_back(leaf.grad());
  }

  auto eval_at = [&](const std::vector<DenseMatrix>& pts) {
    Tape tape;
    std::vector<Tensor> leaves;
    for (const DenseMatrix& p : pts) leaves.push_back(tape.constant(p));
    return f(tape, leaves).value()(0, 0);
  };

  double worst = 0.0;
  std::vector<DenseMatrix> work = points;
  for (std::size_t li = 0; li < points.size(); ++li) {
    for (std::size_t i = 0; i < points[li].size(); ++i) {
      const double orig = work[li].data()[i];
      work[li].data()[i] = orig + eps;
      const double fp = eval_at(work);
      work[li].data()[i] = orig - eps;
      const double fm = eval_at(work);
      work[li].data()[i] = orig;
      const double central = (fp - fm) / (2.0 * eps);
      const double an = analytic[li].data()[i];
      const double rel = std::fabs(an - central) / (std::fabs(an) + std::fabs(central) + 1e-12);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace ono::ad
