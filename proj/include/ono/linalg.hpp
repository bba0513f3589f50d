#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace ono::linalg {

/// Dense row-major matrix of doubles. All numerics in this project are
/// 64-bit; the acceptance tolerances (1e-8 .. 1e-12) rule out floats.
class DenseMatrix {
public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  DenseMatrix transposed() const;
  bool all_finite() const;
  double max_abs() const;

private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator-(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator*(double s, const DenseMatrix& a);
double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b);
double frobenius_norm(const DenseMatrix& a);

/// Cholesky factorization c = L L^T for a symmetric positive-definite input.
///
/// Near-singular inputs get one retry with jitter: if a pivot falls at or
/// below 1e-12 * max(diag), 1e-6 * mean(diag) is added to the whole diagonal
/// once. A second failure throws NotPositiveDefinite. EMA covariance
/// estimates can be near-singular early in training, which is what the
/// retry is for.
DenseMatrix cholesky(const DenseMatrix& c);

/// Solves (l or l^T) x = b by substitution, l lower-triangular.
DenseMatrix solve_triangular(const DenseMatrix& l, const DenseMatrix& b, bool transpose_l);

/// Full symmetric eigendecomposition by cyclic Jacobi rotations.
/// Returns eigenvalues sorted descending and the matching orthonormal
/// eigenvector columns. Intended as the brute-force spectral oracle; fine
/// for the n <= 512 sizes used here.
std::pair<std::vector<double>, DenseMatrix> sym_eig(const DenseMatrix& a);

/// Sparse symmetric system in triplet form.
struct SparseSystem {
  std::size_t dimension = 0;
  struct Entry {
    std::size_t row, col;
    double value;
  };
  std::vector<Entry> entries;
  bool spd = false;

  std::vector<double> apply(const std::vector<double>& x) const;
};

/// Plain conjugate gradient; requires the SPD flag. Terminates when
/// ||A x - rhs|| / ||rhs|| <= tol, else throws NoConvergence with the final
/// residual in the message.
std::vector<double> conjugate_gradient(const SparseSystem& sys, const std::vector<double>& rhs,
                                       double tol, std::size_t max_iter);

}  // namespace ono::linalg
