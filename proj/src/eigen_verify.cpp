#include "ono/eigen_verify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ono/autodiff.hpp"
#include "ono/errors.hpp"
#include "ono/nn_blocks.hpp"
#include "ono/params.hpp"
#include "ono/rng.hpp"
#include "ono/training.hpp"

namespace ono::verify {

double AnalyticKernel::operator()(double x, double y) const {
  if (kind == Kind::min_kernel) return std::min(x, y);
  const double d = x - y;
  return std::exp(-d * d / (2.0 * length_scale * length_scale));
}

std::string AnalyticKernel::name() const {
  return kind == Kind::min_kernel ? "min" : "rbf";
}

AnalyticKernel AnalyticKernel::parse(const std::string& name, double length_scale) {
  AnalyticKernel k;
  k.length_scale = length_scale;
  if (name == "min" || name == "min_kernel") {
    k.kind = Kind::min_kernel;
  } else if (name == "rbf") {
    k.kind = Kind::rbf;
  } else {
    throw Error("unknown kernel: " + name);
  }
  return k;
}

SpectralTruth spectral_truth(const AnalyticKernel& kernel, std::size_t grid_size, std::size_t k) {
  // grid_size >= 4k is the regime where the low eigenvalues stay accurate;
  // the truncation-identity checks legitimately ask for k up to grid_size
  if (grid_size < k) throw ShapeMismatch("spectral_truth wants grid_size >= k");
  SpectralTruth out;
  const std::size_t m = grid_size;
  out.grid.resize(m);
  for (std::size_t i = 0; i < m; ++i) out.grid[i] = (double(i) + 0.5) / double(m);

  out.discrete_operator = DenseMatrix(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      out.discrete_operator(i, j) = kernel(out.grid[i], out.grid[j]) / double(m);

  auto [vals, vecs] = linalg::sym_eig(out.discrete_operator);
  out.eigenvalues = std::move(vals);

  const double sqrt_m = std::sqrt(double(m));
  out.eigenfunctions = DenseMatrix(m, k);
  for (std::size_t j = 0; j < k; ++j) {
    // deterministic sign: largest-magnitude entry positive
    std::size_t arg = 0;
    for (std::size_t i = 1; i < m; ++i)
      if (std::fabs(vecs(i, j)) > std::fabs(vecs(arg, j))) arg = i;
    const double sign = vecs(arg, j) >= 0.0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < m; ++i) out.eigenfunctions(i, j) = sign * sqrt_m * vecs(i, j);
  }
  return out;
}

double mercer_truncation_error(const SpectralTruth& truth, std::size_t k) {
  if (k > truth.eigenvalues.size()) throw ShapeMismatch("k beyond available spectrum");
  double s = 0.0;
  for (std::size_t i = k; i < truth.eigenvalues.size(); ++i)
    s += truth.eigenvalues[i] * truth.eigenvalues[i];
  return std::sqrt(s);
}

double mercer_truncation_error_frobenius(const SpectralTruth& truth, std::size_t k) {
  if (k > truth.eigenfunctions.cols()) throw ShapeMismatch("truth holds too few eigenfunctions");
  const std::size_t m = truth.grid.size();
  DenseMatrix approx(m, m);
  for (std::size_t a = 0; a < k; ++a) {
    const double mu = truth.eigenvalues[a];
    for (std::size_t i = 0; i < m; ++i) {
      const double w = mu * truth.eigenfunctions(i, a) / double(m);
      for (std::size_t j = 0; j < m; ++j) approx(i, j) += w * truth.eigenfunctions(j, a);
    }
  }
  return linalg::frobenius_norm(truth.discrete_operator - approx);
}

void CoordinateProblem::validate() const {
  if (a_f.rows() != n || a_f.cols() != n || mu.size() != n || a.cols() != n)
    throw ShapeMismatch("coordinate problem dimensions");
  DenseMatrix gram = linalg::matmul(a, a.transposed());
  if (linalg::max_abs_diff(gram, DenseMatrix::identity(a.rows())) > 1e-8)
    throw ShapeMismatch("candidate coordinates are not orthonormal");
}

McEstimate appendix_loss_direct(const CoordinateProblem& prob, std::size_t samples,
                                std::uint64_t seed) {
  prob.validate();
  const std::size_t n = prob.n, k = prob.a.rows();

  // x = A_f^{1/2} xi realizes E[x x^T] = A_f (symmetric square root)
  auto [vals, vecs] = linalg::sym_eig(prob.a_f);
  DenseMatrix root(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const double s = std::sqrt(std::max(0.0, vals[j]));
    for (std::size_t i = 0; i < n; ++i) root(i, j) = vecs(i, j) * s;
  }

  Rng rng = Rng(seed).stream("appendix-mc");
  double sum = 0.0, sum_sq = 0.0;
  std::vector<double> xi(n), x(n);
  for (std::size_t s = 0; s < samples; ++s) {
    for (double& v : xi) v = rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += root(i, j) * xi[j];
      x[i] = acc;
    }
    double value = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      double proj = 0.0, weighted = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        proj += prob.a(i, j) * x[j];
        weighted += prob.a(i, j) * prob.mu[j] * x[j];
      }
      value += proj * proj - 2.0 * proj * weighted;
    }
    sum += value;
    sum_sq += value * value;
  }
  McEstimate est;
  est.samples = samples;
  est.mean = sum / double(samples);
  const double var = std::max(0.0, sum_sq / double(samples) - est.mean * est.mean);
  est.std_error = std::sqrt(var / double(samples));
  return est;
}

double appendix_loss_closed(const CoordinateProblem& prob) {
  prob.validate();
  const std::size_t n = prob.n, k = prob.a.rows();
  // M = A_f - A_f diag(mu) - diag(mu) A_f
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      m(i, j) = prob.a_f(i, j) - prob.a_f(i, j) * prob.mu[j] - prob.mu[i] * prob.a_f(i, j);
  double total = 0.0;
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) total += prob.a(r, i) * m(i, j) * prob.a(r, j);
  return total;
}

RecoveryReport recover_eigenfunctions(const AnalyticKernel& kernel, const RecoveryOptions& opt) {
  const std::size_t m = opt.grid_size, k = opt.k, hidden = opt.hidden;
  SpectralTruth truth = spectral_truth(kernel, m, k);

  Rng rng = Rng(opt.seed).stream("recover-init");
  nn::ParamSet params;
  const int w0 = params.add("w0", nn::fan_in_init(1, hidden, rng), true);
  const int b0 = params.add("b0", DenseMatrix(1, hidden), false);
  const int w1 = params.add("w1", nn::fan_in_init(hidden, hidden, rng), true);
  const int b1 = params.add("b1", DenseMatrix(1, hidden), false);
  const int w2 = params.add("w2", nn::truncated_normal_matrix(hidden, k, 0.125, rng), true);
  const int b2 = params.add("b2", DenseMatrix(1, k), false);
  DenseMatrix mu0(1, k);
  for (std::size_t i = 0; i < k; ++i) mu0(0, i) = -0.7 * double(i + 1);
  const int raw_mu = params.add("raw_mu", std::move(mu0), false, opt.mu_lr_scale);

  DenseMatrix grid_x(m, 1);
  for (std::size_t i = 0; i < m; ++i) grid_x(i, 0) = truth.grid[i];

  train::ScheduleConfig sched;
  sched.max_lr = opt.max_lr;
  sched.total_steps = opt.steps;
  train::AdamConfig adam_cfg;
  train::AdamState adam = train::AdamState::init(params);
  Rng sample_rng = Rng(opt.seed).stream("recover-f");

  const double sqrt_m = std::sqrt(double(m));
  auto mlp_forward = [&](ad::Tape& tape, const std::vector<ad::Tensor>& bound) {
    ad::Tensor x = tape.constant(grid_x);
    ad::Tensor h0 = ad::gelu(ad::add(ad::matmul(x, bound[w0]), bound[b0]));
    ad::Tensor h1 = ad::gelu(ad::add(ad::matmul(h0, bound[w1]), bound[b1]));
    return ad::add(ad::matmul(h1, bound[w2]), bound[b2]);
  };

  double last_loss = 0.0;
  for (std::size_t step = 0; step < opt.steps; ++step) {
    ad::Tape tape;
    std::vector<ad::Tensor> bound = params.bind(tape, true);
    ad::Tensor raw = mlp_forward(tape, bound);
    ad::Tensor psi = ad::whiten(raw);
    ad::Tensor mu = ad::exp_t(bound[raw_mu]);

    DenseMatrix f(m, opt.batch);
    for (double& v : f.data()) v = sqrt_m * sample_rng.normal();
    DenseMatrix target = linalg::matmul(truth.discrete_operator, f);

    ad::Tensor ft = tape.constant(std::move(f));
    ad::Tensor coef = ad::scale(ad::matmul(ad::transpose(psi), ft), 1.0 / double(m));  // k x B
    ad::Tensor scaled = ad::row_scale(coef, ad::transpose(mu));
    ad::Tensor recon = ad::matmul(psi, scaled);
    ad::Tensor loss = ad::mean(ad::square(ad::sub(recon, tape.constant(std::move(target)))));
    last_loss = loss.value()(0, 0);

    tape.backward(loss);
    std::vector<DenseMatrix> grads;
    grads.reserve(bound.size());
    for (const ad::Tensor& p : bound) grads.push_back(p.grad());
    train::adamw_step(params, adam, grads, train::onecycle_lr(sched, step), adam_cfg);
  }

  // final whitened eigenmaps and learned eigenvalues
  RecoveryReport report;
  report.final_loss = last_loss;
  {
    ad::Tape tape;
    std::vector<ad::Tensor> bound = params.bind(tape, false);
    ad::Tensor raw = mlp_forward(tape, bound);
    report.psi = ad::whiten(raw).value();
  }
  report.mu_hat.resize(k);
  for (std::size_t i = 0; i < k; ++i)
    report.mu_hat[i] = std::exp(params.entry(raw_mu).value(0, i));

  // greedy |cos| matching in decreasing learned-eigenvalue order
  DenseMatrix align(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    double norm_i = 0.0;
    for (std::size_t r = 0; r < m; ++r) norm_i += report.psi(r, i) * report.psi(r, i);
    for (std::size_t j = 0; j < k; ++j) {
      double dot = 0.0, norm_j = 0.0;
      for (std::size_t r = 0; r < m; ++r) {
        dot += report.psi(r, i) * truth.eigenfunctions(r, j);
        norm_j += truth.eigenfunctions(r, j) * truth.eigenfunctions(r, j);
      }
      align(i, j) = std::fabs(dot) / std::sqrt(norm_i * norm_j);
    }
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return report.mu_hat[x] > report.mu_hat[y]; });
  std::vector<bool> used(k, false);
  for (std::size_t oi = 0; oi < k; ++oi) {
    const std::size_t i = order[oi];
    std::size_t best = 0;
    double best_val = -1.0;
    for (std::size_t j = 0; j < k; ++j)
      if (!used[j] && align(i, j) > best_val) {
        best = j;
        best_val = align(i, j);
      }
    used[best] = true;
    report.rows.push_back({best + 1, truth.eigenvalues[best], report.mu_hat[i], align(i, best)});
  }
  std::sort(report.rows.begin(), report.rows.end(),
            [](const RecoveryRow& a, const RecoveryRow& b) { return a.index < b.index; });
  return report;
}

std::vector<double> principal_angles(const DenseMatrix& psi_a, const DenseMatrix& psi_b) {
  if (psi_a.rows() != psi_b.rows()) throw ShapeMismatch("principal_angles row mismatch");
  const double inv_m = 1.0 / double(psi_a.rows());
  // cross Gram in the (1/M) inner product; singular values are the cosines
  DenseMatrix cross = inv_m * linalg::matmul(psi_a.transposed(), psi_b);
  DenseMatrix gram = linalg::matmul(cross.transposed(), cross);
  auto [vals, vecs] = linalg::sym_eig(gram);
  (void)vecs;
  std::vector<double> angles;
  for (double v : vals)
    angles.push_back(std::acos(std::min(1.0, std::sqrt(std::max(0.0, v)))));
  return angles;
}

}  // namespace ono::verify
