#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>

#include "ono/errors.hpp"
#include "ono/ortho_attention.hpp"
#include "ono/rng.hpp"

using namespace ono;
using ad::Tape;
using ad::Tensor;
using attn::CovarianceBuffer;
using attn::OrthoAttentionLayer;
using linalg::DenseMatrix;
using nn::Mode;

namespace {

DenseMatrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  DenseMatrix m(r, c);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

DenseMatrix empirical_covariance(const std::vector<DenseMatrix>& batch) {
  return attn::batch_covariance(batch);
}

OrthoAttentionLayer make_layer(nn::ParamSet& params, std::size_t dp, std::size_t d, std::size_t k,
                               std::size_t dout, Rng& rng, double momentum = 0.1) {
  OrthoAttentionLayer layer;
  layer.build(params, dp, d, k, dout, 0, momentum, 1.0, rng);
  return layer;
}

}  // namespace

TEST_CASE("project with zero weights gives zeros; selector weights slice columns") {
  nn::ParamSet params;
  Rng rng(1);
  OrthoAttentionLayer layer = make_layer(params, 6, 4, 3, 4, rng);
  DenseMatrix g = random_matrix(5, 6, rng);

  for (double& v : params.entry(layer.w_q).value.data()) v = 0.0;
  {
    Tape tape;
    auto bound = params.bind(tape, false);
    CHECK(layer.project(bound, tape.constant(g)).value().max_abs() == 0.0);
  }
  // selector: w_q picks the first 3 columns of g
  DenseMatrix& wq = params.entry(layer.w_q).value;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 3; ++j) wq(i, j) = (i == j) ? 1.0 : 0.0;
  {
    Tape tape;
    auto bound = params.bind(tape, false);
    DenseMatrix ghat = layer.project(bound, tape.constant(g)).value();
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t j = 0; j < 3; ++j) CHECK(ghat(r, j) == g(r, j));
  }
}

TEST_CASE("project matches the direct matrix product") {
  nn::ParamSet params;
  Rng rng(2);
  OrthoAttentionLayer layer = make_layer(params, 5, 4, 3, 4, rng);
  DenseMatrix g = random_matrix(7, 5, rng);
  Tape tape;
  auto bound = params.bind(tape, false);
  DenseMatrix expected = linalg::matmul(g, params.entry(layer.w_q).value);
  CHECK(linalg::max_abs_diff(layer.project(bound, tape.constant(g)).value(), expected) < 1e-12);
}

TEST_CASE("covariance update: momentum 1 replaces, momentum 0.1 blends") {
  Rng rng(3);
  CovarianceBuffer buf;
  buf.momentum = 1.0;
  std::vector<DenseMatrix> batch = {random_matrix(20, 2, rng), random_matrix(20, 2, rng)};
  DenseMatrix bc = empirical_covariance(batch);
  buf.update(batch, Mode::train);
  CHECK(linalg::max_abs_diff(buf.c, bc) < 1e-14);
  buf.update(batch, Mode::train);  // momentum 1: full replacement again
  CHECK(linalg::max_abs_diff(buf.c, bc) < 1e-14);

  CovarianceBuffer blend;
  blend.momentum = 0.1;
  blend.c = DenseMatrix::identity(2);
  blend.chol = DenseMatrix::identity(2);
  blend.initialized = true;
  // batch covariance equal to 2 I: blended value must be 1.1 I
  DenseMatrix two_i(4, 2);
  two_i(0, 0) = 2.0;
  two_i(1, 1) = 2.0;
  two_i(2, 0) = -2.0;
  two_i(3, 1) = -2.0;
  blend.update({two_i}, Mode::train);
  CHECK(linalg::max_abs_diff(blend.c, 1.1 * DenseMatrix::identity(2)) < 1e-12);
}

TEST_CASE("covariance update is a no-op in eval mode; uninitialized eval throws") {
  Rng rng(4);
  CovarianceBuffer buf;
  buf.update({random_matrix(8, 2, rng)}, Mode::eval);
  CHECK_FALSE(buf.initialized);
  CHECK_THROWS_AS(buf.inverse_transpose_factor(), UninitializedBuffer);
}

TEST_CASE("already-white features leave the buffer at identity") {
  CovarianceBuffer buf;
  buf.momentum = 1.0;
  // rows scaled so that (1/M) ghat^T ghat == I
  const std::size_t m = 4, k = 2;
  DenseMatrix ghat(m, k);
  ghat(0, 0) = std::sqrt(double(m) / 2.0);
  ghat(1, 0) = -std::sqrt(double(m) / 2.0);
  ghat(2, 1) = std::sqrt(double(m) / 2.0);
  ghat(3, 1) = -std::sqrt(double(m) / 2.0);
  buf.update({ghat}, Mode::train);
  CHECK(linalg::max_abs_diff(buf.c, DenseMatrix::identity(k)) < 1e-12);
  CHECK(linalg::max_abs_diff(buf.chol, DenseMatrix::identity(k)) < 1e-12);
}

TEST_CASE("orthonormalize whitens: empirical covariance of psi is identity") {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    nn::ParamSet params;
    OrthoAttentionLayer layer = make_layer(params, 6, 4, 3, 4, rng, 1.0);
    DenseMatrix ghat = random_matrix(40, 3, rng);
    layer.buffer.update({ghat}, Mode::train);
    DenseMatrix psi = layer.orthonormalize(ghat);
    CHECK(linalg::max_abs_diff(empirical_covariance({psi}), DenseMatrix::identity(3)) < 1e-8);
  }
}

TEST_CASE("orthonormalize with a white buffer is the identity map") {
  nn::ParamSet params;
  Rng rng(6);
  OrthoAttentionLayer layer = make_layer(params, 6, 4, 3, 4, rng);
  layer.buffer.c = DenseMatrix::identity(3);
  layer.buffer.chol = DenseMatrix::identity(3);
  layer.buffer.initialized = true;
  DenseMatrix ghat = random_matrix(9, 3, rng);
  CHECK(linalg::max_abs_diff(layer.orthonormalize(ghat), ghat) == 0.0);
}

TEST_CASE("scaling features is absorbed by the refit factor") {
  Rng rng(7);
  nn::ParamSet params;
  OrthoAttentionLayer layer = make_layer(params, 6, 4, 3, 4, rng, 1.0);
  DenseMatrix ghat = random_matrix(30, 3, rng);
  layer.buffer.update({ghat}, Mode::train);
  DenseMatrix psi1 = layer.orthonormalize(ghat);

  DenseMatrix scaled = 3.0 * ghat;
  layer.buffer.update({scaled}, Mode::train);
  DenseMatrix psi2 = layer.orthonormalize(scaled);
  CHECK(linalg::max_abs_diff(psi1, psi2) < 1e-10);
}

TEST_CASE("attend: zero eigenvalues produce zero output") {
  nn::ParamSet params;
  Rng rng(8);
  OrthoAttentionLayer layer = make_layer(params, 6, 4, 3, 4, rng);
  // raw_mu -> -inf surrogate: exp gives exactly 0 at -1e9
  for (double& v : params.entry(layer.raw_mu).value.data()) v = -1e9;
  Tape tape;
  auto bound = params.bind(tape, false);
  Tensor psi = tape.constant(random_matrix(5, 3, rng));
  Tensor h = tape.constant(random_matrix(5, 4, rng));
  CHECK(layer.attend(bound, psi, psi, h).value().max_abs() == 0.0);
}

TEST_CASE("attend: orthonormal psi with unit mu and identity w_v is the identity") {
  nn::ParamSet params;
  Rng rng(9);
  const std::size_t k = 4;
  OrthoAttentionLayer layer = make_layer(params, 6, k, k, k, rng);
  for (double& v : params.entry(layer.raw_mu).value.data()) v = 0.0;  // mu = 1
  DenseMatrix& wv = params.entry(layer.w_v).value;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) wv(i, j) = (i == j) ? 1.0 : 0.0;

  // M = k and psi = sqrt(M) I is empirically orthonormal
  DenseMatrix psi(k, k);
  for (std::size_t i = 0; i < k; ++i) psi(i, i) = std::sqrt(double(k));
  DenseMatrix h = random_matrix(k, k, rng);
  Tape tape;
  auto bound = params.bind(tape, false);
  Tensor out = layer.attend(bound, tape.constant(psi), tape.constant(psi), tape.constant(h));
  CHECK(linalg::max_abs_diff(out.value(), h) < 1e-12);
}

TEST_CASE("attend matches the three-step naive computation") {
  nn::ParamSet params;
  Rng rng(10);
  OrthoAttentionLayer layer = make_layer(params, 6, 4, 3, 4, rng);
  DenseMatrix psi_out = random_matrix(7, 3, rng);
  DenseMatrix psi_in = random_matrix(5, 3, rng);
  DenseMatrix h = random_matrix(5, 4, rng);

  Tape tape;
  auto bound = params.bind(tape, false);
  Tensor out = layer.attend(bound, tape.constant(psi_out), tape.constant(psi_in),
                            tape.constant(h));

  const DenseMatrix& wv = params.entry(layer.w_v).value;
  const DenseMatrix& raw = params.entry(layer.raw_mu).value;
  DenseMatrix hv = linalg::matmul(h, wv);
  DenseMatrix contraction = linalg::matmul(psi_in.transposed(), hv);
  for (double& v : contraction.data()) v /= double(psi_in.rows());
  DenseMatrix scaled = psi_out;
  for (std::size_t r = 0; r < scaled.rows(); ++r)
    for (std::size_t c = 0; c < scaled.cols(); ++c) scaled(r, c) *= std::exp(raw(0, c));
  DenseMatrix expected = linalg::matmul(scaled, contraction);
  CHECK(linalg::max_abs_diff(out.value(), expected) < 1e-12);
}

TEST_CASE("whitening identity holds over random batches") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 1 + rng.index(8);
    const std::size_t m = k + 8 + rng.index(60);
    nn::ParamSet params;
    OrthoAttentionLayer layer = make_layer(params, 6, 4, k, 4, rng, 1.0);
    std::vector<DenseMatrix> batch;
    const std::size_t nsamples = 1 + rng.index(3);
    for (std::size_t s = 0; s < nsamples; ++s) batch.push_back(random_matrix(m, k, rng));
    layer.buffer.update(batch, Mode::train);
    std::vector<DenseMatrix> psis;
    for (const auto& g : batch) psis.push_back(layer.orthonormalize(g));
    CHECK(linalg::max_abs_diff(empirical_covariance(psis), DenseMatrix::identity(k)) < 1e-8);
  }
}

TEST_CASE("self-attention matrix is symmetric and PSD") {
  Rng rng(12);
  nn::ParamSet params;
  const std::size_t k = 5, m = 30;
  OrthoAttentionLayer layer = make_layer(params, 6, 4, k, 4, rng, 1.0);
  DenseMatrix ghat = random_matrix(m, k, rng);
  layer.buffer.update({ghat}, Mode::train);
  DenseMatrix psi = layer.orthonormalize(ghat);

  // A = psi diag(mu) psi^T with mu = exp(raw_mu)
  const DenseMatrix& raw = params.entry(layer.raw_mu).value;
  DenseMatrix scaled = psi;
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < k; ++c) scaled(r, c) *= std::exp(raw(0, c));
  DenseMatrix a = linalg::matmul(scaled, psi.transposed());

  CHECK(linalg::max_abs_diff(a, a.transposed()) < 1e-10);
  auto [vals, vecs] = linalg::sym_eig(0.5 * (a + a.transposed()));
  (void)vecs;
  for (double v : vals) CHECK(v >= -1e-8);
}

TEST_CASE("attend output lies in the span of psi_out") {
  Rng rng(13);
  nn::ParamSet params;
  const std::size_t k = 3, m = 20;
  OrthoAttentionLayer layer = make_layer(params, 6, 4, k, 4, rng, 1.0);
  DenseMatrix psi_out = random_matrix(m, k, rng);
  DenseMatrix psi_in = random_matrix(m, k, rng);
  DenseMatrix h = random_matrix(m, 4, rng);
  Tape tape;
  auto bound = params.bind(tape, false);
  DenseMatrix out =
      layer.attend(bound, tape.constant(psi_out), tape.constant(psi_in), tape.constant(h))
          .value();

  // residual after least-squares projection onto span(psi_out)
  DenseMatrix gram = linalg::matmul(psi_out.transposed(), psi_out);
  DenseMatrix rhs = linalg::matmul(psi_out.transposed(), out);
  DenseMatrix l = linalg::cholesky(gram);
  DenseMatrix coef = linalg::solve_triangular(l, linalg::solve_triangular(l, rhs, false), true);
  DenseMatrix residual = out - linalg::matmul(psi_out, coef);
  CHECK(residual.max_abs() < 1e-8);
}

TEST_CASE("layer_forward: dead attention reduces to FFN(LN(h))") {
  Rng rng(14);
  nn::ParamSet params;
  OrthoAttentionLayer layer = make_layer(params, 6, 4, 3, 4, rng);
  for (double& v : params.entry(layer.w_q).value.data()) v = 0.0;
  // white buffer so the whitening of zero features stays zero via jitter path
  layer.buffer.c = DenseMatrix::identity(3);
  layer.buffer.chol = DenseMatrix::identity(3);
  layer.buffer.initialized = true;

  DenseMatrix g = random_matrix(9, 6, rng);
  DenseMatrix h = random_matrix(9, 4, rng);
  Tape tape;
  auto bound = params.bind(tape, false);
  Tensor out = layer.forward(bound, tape.constant(g), tape.constant(h), Mode::eval);

  Tape ref;
  auto bref = params.bind(ref, false);
  Tensor hh = ref.constant(h);
  Tensor z = ad::layer_norm(hh, bref[layer.ln_g], bref[layer.ln_b]);
  Tensor mid = ad::gelu(ad::add(ad::matmul(z, bref[layer.ffn_w1]), bref[layer.ffn_b1]));
  Tensor expect = ad::add(ad::matmul(mid, bref[layer.ffn_w2]), bref[layer.ffn_b2]);
  CHECK(linalg::max_abs_diff(out.value(), expect.value()) < 1e-12);
}

TEST_CASE("layer_forward eval mode is deterministic") {
  Rng rng(15);
  nn::ParamSet params;
  OrthoAttentionLayer layer = make_layer(params, 6, 4, 3, 4, rng, 1.0);
  DenseMatrix g = random_matrix(10, 6, rng);
  DenseMatrix h = random_matrix(10, 4, rng);
  {
    Tape warm;
    auto bound = params.bind(warm, false);
    layer.forward(bound, warm.constant(g), warm.constant(h), Mode::train);
  }
  Tape t1, t2;
  DenseMatrix o1 =
      layer.forward(params.bind(t1, false), t1.constant(g), t1.constant(h), Mode::eval).value();
  DenseMatrix o2 =
      layer.forward(params.bind(t2, false), t2.constant(g), t2.constant(h), Mode::eval).value();
  CHECK(linalg::max_abs_diff(o1, o2) == 0.0);
}

TEST_CASE("layer_forward parameter gradients pass the finite-difference check") {
  Rng rng(16);
  nn::ParamSet params;
  OrthoAttentionLayer layer = make_layer(params, 5, 4, 3, 4, rng);
  DenseMatrix g = random_matrix(8, 5, rng);
  DenseMatrix h = random_matrix(8, 4, rng);
  {
    // materialize the buffer once; both the analytic and FD passes then see
    // the same frozen statistics
    Tape warm;
    auto bound = params.bind(warm, false);
    layer.forward(bound, warm.constant(g), warm.constant(h), Mode::train);
  }
  std::vector<DenseMatrix> points;
  for (std::size_t i = 0; i < params.size(); ++i) points.push_back(params.entry(int(i)).value);
  auto f = [&](Tape& t, const std::vector<Tensor>& leaves) {
    OrthoAttentionLayer frozen = layer;  // buffer state shared by value
    return ad::sum(ad::square(frozen.forward(leaves, t.constant(g), t.constant(h), Mode::eval)));
  };
  CHECK(ad::grad_check(f, points, 1e-5) < 1e-4);
}

TEST_CASE("train-mode batch whitening matches the frozen path at momentum 1") {
  // with momentum 1 the EMA equals the batch covariance, so the two whitening
  // routes agree on the forward values
  Rng rng(17);
  nn::ParamSet params;
  OrthoAttentionLayer layer = make_layer(params, 5, 4, 3, 4, rng, 1.0);
  DenseMatrix g = random_matrix(12, 5, rng);
  DenseMatrix h = random_matrix(12, 4, rng);

  OrthoAttentionLayer with_grad = layer;
  with_grad.whiten_backprop = true;
  OrthoAttentionLayer frozen = layer;
  frozen.whiten_backprop = false;

  Tape t1, t2;
  DenseMatrix o1 = with_grad
                       .forward(params.bind(t1, false), t1.constant(g), t1.constant(h),
                                Mode::train)
                       .value();
  DenseMatrix o2 =
      frozen.forward(params.bind(t2, false), t2.constant(g), t2.constant(h), Mode::train).value();
  CHECK(linalg::max_abs_diff(o1, o2) < 1e-10);
}

TEST_CASE("layer_forward wall time grows linearly in mesh size") {
  Rng rng(18);
  nn::ParamSet params;
  OrthoAttentionLayer layer = make_layer(params, 16, 16, 16, 16, rng, 1.0);
  {
    Tape warm;
    auto bound = params.bind(warm, false);
    layer.forward(bound, warm.constant(random_matrix(64, 16, rng)),
                  warm.constant(random_matrix(64, 16, rng)), Mode::train);
  }
  auto time_forward = [&](std::size_t m) {
    DenseMatrix g = random_matrix(m, 16, rng);
    DenseMatrix h = random_matrix(m, 16, rng);
    double best = 1e100;
    for (int rep = 0; rep < 5; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      Tape tape;
      auto bound = params.bind(tape, false);
      layer.forward(bound, tape.constant(g), tape.constant(h), Mode::eval);
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                              .count());
    }
    return best;
  };
  const double t256 = time_forward(256);
  const double t2048 = time_forward(2048);
  // superlinear growth would put t2048 well above 8x t256
  CHECK(t2048 < 24.0 * t256);
}
