#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ono/linalg.hpp"

namespace ono::verify {

using linalg::DenseMatrix;

/// Kernels with known behavior on [0,1]: min(x, y) has the closed-form
/// spectrum 4/((2j-1)^2 pi^2) with eigenfunctions sqrt(2) sin((j-1/2) pi x);
/// the RBF kernel exp(-(x-y)^2 / (2 l^2)) is the smooth reference case.
struct AnalyticKernel {
  enum class Kind { min_kernel, rbf };
  Kind kind = Kind::min_kernel;
  double length_scale = 0.2;

  double operator()(double x, double y) const;
  std::string name() const;
  static AnalyticKernel parse(const std::string& name, double length_scale = 0.2);
};

/// Brute-force discrete spectrum of the kernel integral operator: midpoint
/// grid, K/M eigendecomposition, eigenfunctions rescaled to be orthonormal
/// in the (1/M)-weighted inner product.
struct SpectralTruth {
  std::vector<double> grid;              // M midpoints
  std::vector<double> eigenvalues;       // all M, descending
  DenseMatrix eigenfunctions;            // M x k, (1/M) psi^T psi == I
  DenseMatrix discrete_operator;         // K/M, kept for the Frobenius oracle
};

SpectralTruth spectral_truth(const AnalyticKernel& kernel, std::size_t grid_size, std::size_t k);

/// Hilbert-Schmidt error of the rank-k truncation, from the discarded
/// spectrum: sqrt(sum_{i>k} mu_i^2).
double mercer_truncation_error(const SpectralTruth& truth, std::size_t k);
/// Same quantity by the direct route: || K/M - psi_k diag(mu_k) psi_k^T / M ||_F.
/// Needs truth.eigenfunctions to hold at least k columns.
double mercer_truncation_error_frobenius(const SpectralTruth& truth, std::size_t k);

/// Finite-dimensional coordinate form of the appendix objective.
struct CoordinateProblem {
  std::size_t n = 0;
  DenseMatrix a_f;         // n x n SPSD second moment of the f coordinates
  std::vector<double> mu;  // n positive reals, the operator spectrum
  DenseMatrix a;           // k x n candidate coordinates, a a^T == I_k

  void validate() const;  // orthonormality of the rows within 1e-8
};

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

/// Monte Carlo estimate of the objective (without the f-independent
/// constant): E_f[ sum_i <a_i, x>^2 - 2 sum_i <a_i, x> <a_i, diag(mu) x> ]
/// with x drawn so that E[x x^T] = A_f.
McEstimate appendix_loss_direct(const CoordinateProblem& prob, std::size_t samples,
                                std::uint64_t seed);

/// Closed form: sum_i a_i^T [A_f - A_f diag(mu) - diag(mu) A_f] a_i.
double appendix_loss_closed(const CoordinateProblem& prob);

struct RecoveryOptions {
  std::size_t grid_size = 256;
  std::size_t k = 3;
  std::size_t steps = 6000;
  std::size_t batch = 64;
  std::size_t hidden = 64;
  double max_lr = 3e-3;
  double mu_lr_scale = 20.0 / 3.0;
  std::uint64_t seed = 0;
};

struct RecoveryRow {
  std::size_t index = 0;  // 1-based truth index after matching
  double eigenvalue_true = 0.0;
  double eigenvalue_learned = 0.0;
  double alignment = 0.0;  // |cos| between learned and true eigenfunction
};

struct RecoveryReport {
  std::vector<RecoveryRow> rows;
  DenseMatrix psi;              // M x k learned (whitened) eigenmaps
  std::vector<double> mu_hat;   // learned eigenvalues, model order
  double final_loss = 0.0;
};

/// Trains a small MLP eigenmap on white function samples against the true
/// kernel action, eigenvalue-scaled reconstruction under Cholesky-whitened
/// orthonormalization, and reports per-index alignment with spectral_truth.
RecoveryReport recover_eigenfunctions(const AnalyticKernel& kernel, const RecoveryOptions& opt);

/// Principal angles (radians, descending cosines) between the spans of two
/// (1/M)-orthonormal eigenfunction blocks.
std::vector<double> principal_angles(const DenseMatrix& psi_a, const DenseMatrix& psi_b);

}  // namespace ono::verify
