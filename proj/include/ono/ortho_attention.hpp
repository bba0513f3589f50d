#pragma once

#include <cstdint>
#include <vector>

#include "ono/autodiff.hpp"
#include "ono/nn_blocks.hpp"
#include "ono/params.hpp"

namespace ono::attn {

using ad::Tensor;
using linalg::DenseMatrix;
using nn::Mode;
using nn::ParamSet;

/// Running estimate of the k x k eigenmap covariance plus its Cholesky
/// factor. Updated once per training batch; frozen at evaluation, like the
/// running statistics of batch normalization.
struct CovarianceBuffer {
  DenseMatrix c;
  DenseMatrix chol;
  double momentum = 0.1;
  bool initialized = false;

  /// batch_cov = (1/(N M)) sum_i ghat_i^T ghat_i. The first training batch
  /// copies it outright; later batches blend with `momentum`. Eval mode is a
  /// no-op.
  void update(const std::vector<DenseMatrix>& ghat_batch, Mode mode);
  /// L^{-T}, the right-multiplier that whitens features against this buffer.
  DenseMatrix inverse_transpose_factor() const;
};

/// Computes batch_cov of a feature batch (shared helper, also the test oracle).
DenseMatrix batch_covariance(const std::vector<DenseMatrix>& ghat_batch);

/// Orthogonal attention: eigenmap projection, Cholesky-whitening
/// orthonormalization, eigenvalue-scaled attention, residual + FFN output.
struct OrthoAttentionLayer {
  int w_q = -1;
  int w_v = -1;
  int raw_mu = -1;  // mu = exp(raw_mu), so the eigenvalues stay positive
  int ln_g = -1, ln_b = -1;
  int ffn_w1 = -1, ffn_b1 = -1, ffn_w2 = -1, ffn_b2 = -1;
  CovarianceBuffer buffer;
  bool attn_normalization = true;  // 1/M quadrature factor in psi^T h
  bool whiten_backprop = true;     // train-mode whitening via batch stats

  void build(ParamSet& params, std::size_t bottom_width, std::size_t width, std::size_t eigenmaps,
             std::size_t out_width, std::size_t index, double momentum, double mu_lr_scale,
             Rng& rng);

  /// ghat = g w_q
  Tensor project(const std::vector<Tensor>& bound, const Tensor& g) const;

  /// psi = ghat L^{-T} against the frozen buffer (throws if uninitialized).
  DenseMatrix orthonormalize(const DenseMatrix& ghat) const;

  /// psi_out diag(mu) (1/M) psi_in^T h w_v. Self-attention when
  /// psi_out == psi_in.
  Tensor attend(const std::vector<Tensor>& bound, const Tensor& psi_out, const Tensor& psi_in,
                const Tensor& h) const;

  /// FFN(LN(attend + h)) over a batch that shares one covariance estimate.
  /// Train mode updates the buffer from the batch before orthonormalizing;
  /// with whiten_backprop the whitening factor comes from the batch
  /// statistics and carries gradients, otherwise the frozen buffer is used.
  std::vector<Tensor> forward_batch(const std::vector<Tensor>& bound,
                                    const std::vector<Tensor>& g_batch,
                                    const std::vector<Tensor>& h_batch, Mode mode);

  Tensor forward(const std::vector<Tensor>& bound, const Tensor& g, const Tensor& h, Mode mode);

  /// Whitened eigenmaps for one sample against the frozen buffer (eval path).
  Tensor eval_eigenmaps(const std::vector<Tensor>& bound, const Tensor& g) const;

  /// Output head: FFN(LN(x + h)).
  Tensor output_head(const std::vector<Tensor>& bound, const Tensor& pre_residual,
                     const Tensor& h) const;
};

}  // namespace ono::attn
