#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ono/linalg.hpp"

namespace ono::data {

using linalg::DenseMatrix;

struct GridInfo {
  std::size_t nx = 0, ny = 1;
  double spacing = 0.0;
};

/// Discretization points, optionally carrying regular-grid structure
/// (row-major: index = iy * nx + ix).
struct Mesh {
  DenseMatrix points;  // M x d0
  std::optional<GridInfo> grid;

  std::size_t size() const { return points.rows(); }
  std::size_t coord_dim() const { return points.cols(); }
};

struct FunctionPair {
  Mesh mesh;
  DenseMatrix f_values;  // M x d_f
  DenseMatrix u_values;  // M x d_u
};

struct NormStats {
  std::vector<double> f_mean, f_std, u_mean, u_std;
};

struct Provenance {
  std::string generator;
  std::uint64_t seed = 0;
  double solver_tol = 0.0;
};

/// A collection of (f, u) samples on one shared mesh.
struct Dataset {
  Mesh mesh;
  std::vector<DenseMatrix> f;  // each M x d_f
  std::vector<DenseMatrix> u;  // each M x d_u
  std::optional<NormStats> stats;
  std::optional<Provenance> provenance;

  std::size_t size() const { return f.size(); }
  std::size_t in_channels() const { return f.empty() ? 0 : f[0].cols(); }
  std::size_t out_channels() const { return u.empty() ? 0 : u[0].cols(); }
  FunctionPair pair(std::size_t i) const { return {mesh, f[i], u[i]}; }
};

/// Thresholded Gaussian random field coefficient (levels 12 / 3 split at the
/// field median), -div(a grad u) = 1 with zero Dirichlet walls, five-point
/// finite differences solved by conjugate gradient at tol 1e-10.
Dataset generate_darcy2d(std::size_t n, std::size_t resolution, std::uint64_t seed);

/// f = sum_{m<=4} c_m sin(m pi x) with c_m standard normal; u assembled
/// analytically as sum c_m sin(m pi x) / (m pi)^2. Exact by construction.
Dataset generate_poisson1d(std::size_t n, std::size_t resolution, std::uint64_t seed);

/// Strided grid restriction; factor must divide nx-1 (and ny-1 in 2-D).
FunctionPair subsample(const FunctionPair& pair, std::size_t factor);
Dataset subsample(const Dataset& ds, std::size_t factor);
Mesh subsample_mesh(const Mesh& mesh, std::size_t factor);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

/// Per-channel mean/std over the given sample indices (the training split).
NormStats compute_norm_stats(const Dataset& ds, const std::vector<std::size_t>& indices);

struct Split {
  std::vector<std::size_t> train, val, test;
};
/// 80/10/10 by index after a seeded shuffle.
Split split_indices(std::size_t n, std::uint64_t seed);

/// Grid interpolation of nodal values onto another mesh (linear in 1-D,
/// bilinear in 2-D). Throws NotAGrid when `from` has no grid metadata.
DenseMatrix interpolate_to_mesh(const Mesh& from, const DenseMatrix& values, const Mesh& to);

/// Max-abs residual of the five-point Darcy system at (a, u), normalized by
/// the right-hand side; the generator's internal consistency oracle.
double darcy_residual(const FunctionPair& pair);

}  // namespace ono::data
