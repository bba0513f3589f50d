#include "ono/ortho_attention.hpp"

#include <cmath>

#include "ono/errors.hpp"

namespace ono::attn {

using namespace ad;

DenseMatrix batch_covariance(const std::vector<DenseMatrix>& ghat_batch) {
  if (ghat_batch.empty()) throw ShapeMismatch("batch_covariance of an empty batch");
  const std::size_t k = ghat_batch[0].cols();
  DenseMatrix cov(k, k);
  std::size_t rows = 0;
  for (const DenseMatrix& g : ghat_batch) {
    if (g.cols() != k) throw ShapeMismatch("batch_covariance column mismatch");
    rows += g.rows();
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t q = 0; q < k; ++q) {
        double s = 0.0;
        for (std::size_t r = 0; r < g.rows(); ++r) s += g(r, p) * g(r, q);
        cov(p, q) += s;
      }
  }
  const double inv = 1.0 / static_cast<double>(rows);
  for (double& v : cov.data()) v *= inv;
  return cov;
}

void CovarianceBuffer::update(const std::vector<DenseMatrix>& ghat_batch, Mode mode) {
  if (mode == Mode::eval) return;
  DenseMatrix bc = batch_covariance(ghat_batch);
  if (!initialized) {
    c = std::move(bc);
    initialized = true;
  } else {
    for (std::size_t i = 0; i < c.size(); ++i)
      c.data()[i] = (1.0 - momentum) * c.data()[i] + momentum * bc.data()[i];
  }
  chol = linalg::cholesky(c);
}

DenseMatrix CovarianceBuffer::inverse_transpose_factor() const {
  if (!initialized) throw UninitializedBuffer("covariance buffer has no statistics yet");
  return linalg::solve_triangular(chol, DenseMatrix::identity(chol.rows()), true);
}

void OrthoAttentionLayer::build(ParamSet& params, std::size_t bottom_width, std::size_t width,
                                std::size_t eigenmaps, std::size_t out_width, std::size_t index,
                                double momentum, double mu_lr_scale, Rng& rng) {
  const std::string prefix = "ortho" + std::to_string(index) + ".";
  w_q = params.add(prefix + "wq", nn::fan_in_init(bottom_width, eigenmaps, rng), true);
  w_v = params.add(prefix + "wv", nn::fan_in_init(width, width, rng), true);
  // Staggered start (mu_i = exp(-i/2)) breaks the ordering tie between
  // eigenmaps; identical eigenvalues make the attention rotation-ambiguous.
  DenseMatrix mu0(1, eigenmaps);
  for (std::size_t i = 0; i < eigenmaps; ++i) mu0(0, i) = -0.5 * static_cast<double>(i);
  raw_mu = params.add(prefix + "raw_mu", std::move(mu0), false, mu_lr_scale);
  ln_g = params.add(prefix + "ln.gamma", DenseMatrix(1, width, 1.0), false);
  ln_b = params.add(prefix + "ln.beta", DenseMatrix(1, width), false);
  ffn_w1 = params.add(prefix + "ffn.w1", nn::fan_in_init(width, 4 * width, rng), true);
  ffn_b1 = params.add(prefix + "ffn.b1", DenseMatrix(1, 4 * width), false);
  ffn_w2 = params.add(prefix + "ffn.w2", nn::fan_in_init(4 * width, out_width, rng), true);
  ffn_b2 = params.add(prefix + "ffn.b2", DenseMatrix(1, out_width), false);
  buffer.momentum = momentum;
}

Tensor OrthoAttentionLayer::project(const std::vector<Tensor>& bound, const Tensor& g) const {
  return matmul(g, bound[w_q]);
}

DenseMatrix OrthoAttentionLayer::orthonormalize(const DenseMatrix& ghat) const {
  return linalg::matmul(ghat, buffer.inverse_transpose_factor());
}

Tensor OrthoAttentionLayer::attend(const std::vector<Tensor>& bound, const Tensor& psi_out,
                                   const Tensor& psi_in, const Tensor& h) const {
  Tensor mu = exp_t(bound[raw_mu]);
  Tensor scaled = mul(psi_out, mu);                    // psi_out diag(mu)
  Tensor hv = matmul(h, bound[w_v]);
  Tensor coef = matmul(transpose(psi_in), hv);         // k x d
  if (attn_normalization) coef = scale(coef, 1.0 / static_cast<double>(psi_in.rows()));
  return matmul(scaled, coef);
}

Tensor OrthoAttentionLayer::output_head(const std::vector<Tensor>& bound,
                                        const Tensor& pre_residual, const Tensor& h) const {
  Tensor z = layer_norm(add(pre_residual, h), bound[ln_g], bound[ln_b]);
  Tensor mid = gelu(add(matmul(z, bound[ffn_w1]), bound[ffn_b1]));
  return add(matmul(mid, bound[ffn_w2]), bound[ffn_b2]);
}

Tensor OrthoAttentionLayer::eval_eigenmaps(const std::vector<Tensor>& bound,
                                           const Tensor& g) const {
  Tensor ghat = project(bound, g);
  Tensor factor = g.tape()->constant(buffer.inverse_transpose_factor());
  return matmul(ghat, factor);
}

std::vector<Tensor> OrthoAttentionLayer::forward_batch(const std::vector<Tensor>& bound,
                                                       const std::vector<Tensor>& g_batch,
                                                       const std::vector<Tensor>& h_batch,
                                                       Mode mode) {
  if (g_batch.size() != h_batch.size() || g_batch.empty())
    throw ShapeMismatch("forward_batch needs matched, nonempty batches");

  std::vector<Tensor> ghats;
  ghats.reserve(g_batch.size());
  for (const Tensor& g : g_batch) ghats.push_back(project(bound, g));

  if (mode == Mode::train) {
    std::vector<DenseMatrix> values;
    values.reserve(ghats.size());
    for (const Tensor& g : ghats) values.push_back(g.value());
    buffer.update(values, mode);
  }

  std::vector<Tensor> psis;
  psis.reserve(ghats.size());
  if (mode == Mode::train && whiten_backprop) {
    // whiten against the batch covariance, gradients flowing through the
    // factorization (train-mode batch norm analogue)
    Tensor stacked = ghats.size() == 1 ? ghats[0] : concat_rows(ghats);
    Tensor white = whiten(stacked);
    std::size_t at = 0;
    for (const Tensor& g : ghats) {
      psis.push_back(ghats.size() == 1 ? white : slice_rows(white, at, at + g.rows()));
      at += g.rows();
    }
  } else {
    Tensor factor = g_batch[0].tape()->constant(buffer.inverse_transpose_factor());
    for (const Tensor& g : ghats) psis.push_back(matmul(g, factor));
  }

  std::vector<Tensor> out;
  out.reserve(g_batch.size());
  for (std::size_t s = 0; s < g_batch.size(); ++s) {
    Tensor att = attend(bound, psis[s], psis[s], h_batch[s]);
    out.push_back(output_head(bound, att, h_batch[s]));
  }
  return out;
}

Tensor OrthoAttentionLayer::forward(const std::vector<Tensor>& bound, const Tensor& g,
                                    const Tensor& h, Mode mode) {
  return forward_batch(bound, {g}, {h}, mode)[0];
}

}  // namespace ono::attn
