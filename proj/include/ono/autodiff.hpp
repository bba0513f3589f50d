#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "ono/linalg.hpp"

namespace ono::ad {

using linalg::DenseMatrix;

class Tape;

/// Handle to a node on a tape. Cheap to copy; the tape owns the storage.
class Tensor {
public:
  Tensor() = default;

  bool valid() const { return tape_ != nullptr; }
  std::size_t rows() const;
  std::size_t cols() const;
  const DenseMatrix& value() const;
  /// Gradient of the last backward() pass (zeros if the node was not reached).
  const DenseMatrix& grad() const;
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

private:
  friend class Tape;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape. One forward pass, one backward pass; a second
/// backward() on the same tape throws TapeReused. Single-threaded by
/// contract; independent tapes are independent.
class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor constant(DenseMatrix value) { return make(std::move(value), false); }
  Tensor param(DenseMatrix value) { return make(std::move(value), true); }

  void backward(const Tensor& loss);
  std::size_t node_count() const { return nodes_.size(); }

  /// Records an op node; `backprop` gets the output gradient and must
  /// accumulate() into each parent that requires a gradient. Used by the
  /// primitive implementations.
  Tensor emit(const char* op, DenseMatrix value, bool requires_grad,
              std::function<void(Tape&, const DenseMatrix&)> backprop);
  void accumulate(int id, const DenseMatrix& g);

private:
  friend class Tensor;

  struct Node {
    DenseMatrix value;
    DenseMatrix grad;
    bool requires_grad = false;
    bool grad_live = false;
    const char* op = "leaf";
    std::function<void(Tape&, const DenseMatrix&)> backprop;
  };

  Tensor make(DenseMatrix value, bool requires_grad);
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  std::deque<Node> nodes_;
  bool consumed_ = false;
};

// ---- differentiable primitives -------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// add/sub/mul accept equal shapes, a row vector (1 x n) broadcast over rows
/// of an m x n left operand, or a 1 x 1 scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
/// Multiplies row i of a (m x n) by s(i, 0) from an m x 1 column.
Tensor row_scale(const Tensor& a, const Tensor& s);
Tensor reciprocal(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
/// elu(x) + 1: the positive feature map of linear attention.
Tensor elu1(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor sqrt_t(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor transpose(const Tensor& a);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1);
/// Sums rows into a 1 x n vector.
Tensor col_sum(const Tensor& a);

/// Layer norm over the feature (column) axis with affine parameters.
/// Rows with variance < 1e-12 normalize to zero instead of dividing by ~0.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);

/// Cholesky whitening with gradients through the factorization:
/// psi = g L^{-T} with L L^T = (1/m) g^T g. The batch-statistics analogue of
/// train-mode batch norm; the frozen-buffer path is a plain matmul against a
/// constant factor instead.
Tensor whiten(const Tensor& g);

// ---- verification ---------------------------------------------------------

/// Max over coordinates of |analytic - central difference| /
/// (|analytic| + |central| + 1e-12) for a scalar-valued function of the
/// given leaves.
double grad_check(const std::function<Tensor(Tape&, const std::vector<Tensor>&)>& f,
                  const std::vector<DenseMatrix>& points, double eps);

}  // namespace ono::ad
