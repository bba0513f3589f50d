#pragma once

#include <cstdint>
#include <vector>

#include "ono/autodiff.hpp"
#include "ono/params.hpp"
#include "ono/rng.hpp"

namespace ono::nn {

using ad::Tensor;
using linalg::DenseMatrix;

/// Feature-map linear attention: phi(x) = elu(x) + 1,
/// out_i = phi(q_i) [sum_j phi(k_j)^T v_j] / (phi(q_i) . sum_j phi(k_j) + 1e-6).
/// Linear in the number of rows.
Tensor linear_attention(const Tensor& q, const Tensor& k, const Tensor& v);

/// Pointwise two-head encoder. Each mesh row (x_j, f(x_j)) maps separately
/// through two disjoint trunks to the bottom-path features g (width
/// bottom_width) and the top-path hidden state h (width width).
struct EncoderMlp {
  int g_w0 = -1, g_b0 = -1, g_w1 = -1, g_b1 = -1;
  int h_w0 = -1, h_b0 = -1, h_w1 = -1, h_b1 = -1;

  void build(ParamSet& params, std::size_t in_dim, std::size_t coord_dim,
             std::size_t bottom_width, std::size_t width, Rng& rng);
  /// returns {g, h}
  std::pair<Tensor, Tensor> encode(const std::vector<Tensor>& bound, const Tensor& input) const;
};

/// Pre-norm transformer block on the bottom path:
/// g~ = g + Attn(LN(g)); out = g~ + FFN(LN(g~)).
struct LinearAttnBlock {
  int wq = -1, wk = -1, wv = -1;
  int ln1_g = -1, ln1_b = -1, ln2_g = -1, ln2_b = -1;
  int ffn_w1 = -1, ffn_b1 = -1, ffn_w2 = -1, ffn_b2 = -1;

  void build(ParamSet& params, std::size_t width, std::size_t index, Rng& rng);
  Tensor forward(const std::vector<Tensor>& bound, const Tensor& g) const;
};

// init helpers shared by the model modules
DenseMatrix truncated_normal_matrix(std::size_t rows, std::size_t cols, double std_dev, Rng& rng);
DenseMatrix fan_in_init(std::size_t in_dim, std::size_t out_dim, Rng& rng);

}  // namespace ono::nn
