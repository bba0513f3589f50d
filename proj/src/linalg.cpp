#include "ono/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ono/errors.hpp"

namespace ono::linalg {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_)
    throw ShapeMismatch("DenseMatrix data length " + std::to_string(data_.size()) +
                        " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::transposed() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool DenseMatrix::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double DenseMatrix::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::fabs(v));
  return m;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows())
    throw ShapeMismatch("matmul " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                        " * " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  DenseMatrix out(a.rows(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      double* orow = po + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeMismatch("matrix add");
  DenseMatrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

DenseMatrix operator-(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeMismatch("matrix sub");
  DenseMatrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

DenseMatrix operator*(double s, const DenseMatrix& a) {
  DenseMatrix out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeMismatch("max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  return m;
}

double frobenius_norm(const DenseMatrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

namespace {

void check_symmetric(const DenseMatrix& a, double tol, const char* who) {
  if (a.rows() != a.cols()) throw ShapeMismatch(std::string(who) + ": matrix not square");
  const double scale = std::max(1.0, a.max_abs());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (std::fabs(a(i, j) - a(j, i)) > tol * scale)
        throw ShapeMismatch(std::string(who) + ": matrix not symmetric");
}

// Single factorization attempt; returns false on a failed pivot.
bool try_cholesky(const DenseMatrix& c, double pivot_floor, DenseMatrix& l) {
  const std::size_t n = c.rows();
  l = DenseMatrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = c(j, j);
    for (std::size_t p = 0; p < j; ++p) d -= l(j, p) * l(j, p);
    if (d <= pivot_floor || !std::isfinite(d)) return false;
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = c(i, j);
      for (std::size_t p = 0; p < j; ++p) s -= l(i, p) * l(j, p);
      l(i, j) = s / l(j, j);
    }
  }
  return true;
}

}  // namespace

DenseMatrix cholesky(const DenseMatrix& c) {
  check_symmetric(c, 1e-10, "cholesky");
  const std::size_t n = c.rows();
  double max_diag = 0.0, mean_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    max_diag = std::max(max_diag, c(i, i));
    mean_diag += c(i, i);
  }
  mean_diag /= static_cast<double>(n);
  const double pivot_floor = 1e-12 * max_diag;

  DenseMatrix l;
  if (try_cholesky(c, pivot_floor, l)) return l;

  DenseMatrix jittered = c;
  const double jitter = 1e-6 * mean_diag;
  for (std::size_t i = 0; i < n; ++i) jittered(i, i) += jitter;
  if (try_cholesky(jittered, pivot_floor, l)) return l;

  throw NotPositiveDefinite("pivot <= " + std::to_string(pivot_floor) +
                            " even after jitter " + std::to_string(jitter));
}

DenseMatrix solve_triangular(const DenseMatrix& l, const DenseMatrix& b, bool transpose_l) {
  if (l.rows() != l.cols()) throw ShapeMismatch("solve_triangular: factor not square");
  if (l.rows() != b.rows()) throw ShapeMismatch("solve_triangular: rhs rows mismatch");
  const std::size_t n = l.rows(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i)
    if (l(i, i) == 0.0) throw SingularFactor("zero diagonal at " + std::to_string(i));

  DenseMatrix x(n, m);
  if (!transpose_l) {
    // forward substitution: l x = b
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < m; ++c) {
        double s = b(i, c);
        for (std::size_t p = 0; p < i; ++p) s -= l(i, p) * x(p, c);
        x(i, c) = s / l(i, i);
      }
    }
  } else {
    // back substitution: l^T x = b
    for (std::size_t ii = n; ii-- > 0;) {
      for (std::size_t c = 0; c < m; ++c) {
        double s = b(ii, c);
        for (std::size_t p = ii + 1; p < n; ++p) s -= l(p, ii) * x(p, c);
        x(ii, c) = s / l(ii, ii);
      }
    }
  }
  return x;
}

std::pair<std::vector<double>, DenseMatrix> sym_eig(const DenseMatrix& a_in) {
  check_symmetric(a_in, 1e-10, "sym_eig");
  const std::size_t n = a_in.rows();
  DenseMatrix a = a_in;
  DenseMatrix v = DenseMatrix::identity(n);

  auto off_norm = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
    return std::sqrt(2.0 * s);
  };

  const double total = frobenius_norm(a);
  const double tol = (total > 0.0 ? 1e-14 * total : 0.0);
  const int max_sweeps = 100;
  bool converged = (off_norm() <= tol);
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::fabs(apq) <= 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t i = 0; i < n; ++i) {
          const double aip = a(i, p), aiq = a(i, q);
          a(i, p) = c * aip - s * aiq;
          a(i, q) = s * aip + c * aiq;
        }
        for (std::size_t j = 0; j < n; ++j) {
          const double apj = a(p, j), aqj = a(q, j);
          a(p, j) = c * apj - s * aqj;
          a(q, j) = s * apj + c * aqj;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vip = v(i, p), viq = v(i, q);
          v(i, p) = c * vip - s * viq;
          v(i, q) = s * vip + c * viq;
        }
      }
    }
    converged = (off_norm() <= tol);
  }
  if (!converged) throw NoConvergence("sym_eig: off-diagonal norm " + std::to_string(off_norm()) +
                                      " after 100 sweeps");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

  std::vector<double> eigenvalues(n);
  DenseMatrix vectors(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    eigenvalues[k] = a(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) vectors(i, k) = v(i, order[k]);
  }
  return {std::move(eigenvalues), std::move(vectors)};
}

std::vector<double> SparseSystem::apply(const std::vector<double>& x) const {
  std::vector<double> y(dimension, 0.0);
  for (const auto& e : entries) y[e.row] += e.value * x[e.col];
  return y;
}

std::vector<double> conjugate_gradient(const SparseSystem& sys, const std::vector<double>& rhs,
                                       double tol, std::size_t max_iter) {
  if (!sys.spd) throw ShapeMismatch("conjugate_gradient requires the SPD flag");
  if (rhs.size() != sys.dimension) throw ShapeMismatch("conjugate_gradient rhs size");
  if (tol <= 0.0) throw ShapeMismatch("conjugate_gradient: tol must be > 0");

  const std::size_t n = sys.dimension;
  double rhs_norm = 0.0;
  for (double v : rhs) rhs_norm += v * v;
  rhs_norm = std::sqrt(rhs_norm);
  if (rhs_norm == 0.0) return std::vector<double>(n, 0.0);

  std::vector<double> x(n, 0.0), r = rhs, p = rhs;
  double rr = 0.0;
  for (double v : r) rr += v * v;

  for (std::size_t it = 0; it < max_iter; ++it) {
    if (std::sqrt(rr) / rhs_norm <= tol) return x;
    const std::vector<double> ap = sys.apply(p);
    double pap = 0.0;
    for (std::size_t i = 0; i < n; ++i) pap += p[i] * ap[i];
    const double alpha = rr / pap;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    double rr_new = 0.0;
    for (double v : r) rr_new += v * v;
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
  }
  if (std::sqrt(rr) / rhs_norm <= tol) return x;
  std::ostringstream msg;
  msg << "conjugate_gradient: residual " << std::sqrt(rr) / rhs_norm << " after " << max_iter
      << " iterations (tol " << tol << ")";
  throw NoConvergence(msg.str());
}

}  // namespace ono::linalg
