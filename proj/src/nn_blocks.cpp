#include "ono/nn_blocks.hpp"

#include <cmath>

#include "ono/errors.hpp"

namespace ono::nn {

using namespace ad;

DenseMatrix truncated_normal_matrix(std::size_t rows, std::size_t cols, double std_dev, Rng& rng) {
  DenseMatrix m(rows, cols);
  for (double& v : m.data()) v = rng.truncated_normal(std_dev);
  return m;
}

DenseMatrix fan_in_init(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
  return truncated_normal_matrix(in_dim, out_dim, std::sqrt(2.0 / double(in_dim)), rng);
}

Tensor linear_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rows() != k.rows() || k.rows() != v.rows() || q.cols() != k.cols())
    throw ShapeMismatch("linear_attention operand shapes");
  Tensor phi_q = elu1(q);
  Tensor phi_k = elu1(k);
  Tensor kv = matmul(transpose(phi_k), v);           // d' x d'
  Tensor numer = matmul(phi_q, kv);                  // M x d'
  Tensor z = col_sum(phi_k);                         // 1 x d'
  Tensor denom = matmul(phi_q, transpose(z));        // M x 1
  return row_scale(numer, reciprocal(add_scalar(denom, 1e-6)));
}

namespace {

Tensor ffn2(const std::vector<Tensor>& bound, const Tensor& x, int w1, int b1, int w2, int b2) {
  Tensor h = gelu(add(matmul(x, bound[w1]), bound[b1]));
  return add(matmul(h, bound[w2]), bound[b2]);
}

}  // namespace

void EncoderMlp::build(ParamSet& params, std::size_t in_dim, std::size_t coord_dim,
                       std::size_t bottom_width, std::size_t width, Rng& rng) {
  const std::size_t hidden = 2 * bottom_width;

  // Breakpoint-spread biases: each first-layer unit's GELU kink lands at a
  // random point of the coordinate domain instead of all of them sitting at
  // the origin. Substantially faster feature formation at desk scale.
  auto breakpoint_bias = [&](const DenseMatrix& w) {
    DenseMatrix b(1, w.cols());
    for (std::size_t u = 0; u < w.cols(); ++u) {
      double dot = 0.0;
      for (std::size_t d0 = 0; d0 < coord_dim; ++d0) dot += w(d0, u) * rng.uniform();
      b(0, u) = -dot;
    }
    return b;
  };

  DenseMatrix g0 = fan_in_init(in_dim, hidden, rng);
  // The bottom path drives the eigenmaps; starting it blind to the value
  // channels keeps the early covariance stable (it still learns to use them).
  for (std::size_t r = coord_dim; r < in_dim; ++r)
    for (std::size_t c = 0; c < hidden; ++c) g0(r, c) = 0.0;
  DenseMatrix g0b = breakpoint_bias(g0);
  g_w0 = params.add("encoder.g.w0", std::move(g0), true);
  g_b0 = params.add("encoder.g.b0", std::move(g0b), false);
  g_w1 = params.add("encoder.g.w1", fan_in_init(hidden, bottom_width, rng), true);
  g_b1 = params.add("encoder.g.b1", DenseMatrix(1, bottom_width), false);

  DenseMatrix h0 = fan_in_init(in_dim, hidden, rng);
  DenseMatrix h0b = breakpoint_bias(h0);
  h_w0 = params.add("encoder.h.w0", std::move(h0), true);
  h_b0 = params.add("encoder.h.b0", std::move(h0b), false);
  h_w1 = params.add("encoder.h.w1", fan_in_init(hidden, width, rng), true);
  h_b1 = params.add("encoder.h.b1", DenseMatrix(1, width), false);
}

std::pair<Tensor, Tensor> EncoderMlp::encode(const std::vector<Tensor>& bound,
                                             const Tensor& input) const {
  Tensor tg = gelu(add(matmul(input, bound[g_w0]), bound[g_b0]));
  Tensor g = add(matmul(tg, bound[g_w1]), bound[g_b1]);
  Tensor th = gelu(add(matmul(input, bound[h_w0]), bound[h_b0]));
  Tensor h = add(matmul(th, bound[h_w1]), bound[h_b1]);
  return {g, h};
}

void LinearAttnBlock::build(ParamSet& params, std::size_t width, std::size_t index, Rng& rng) {
  const std::string prefix = "block" + std::to_string(index) + ".";
  wq = params.add(prefix + "wq", fan_in_init(width, width, rng), true);
  wk = params.add(prefix + "wk", fan_in_init(width, width, rng), true);
  wv = params.add(prefix + "wv", fan_in_init(width, width, rng), true);
  ln1_g = params.add(prefix + "ln1.gamma", DenseMatrix(1, width, 1.0), false);
  ln1_b = params.add(prefix + "ln1.beta", DenseMatrix(1, width), false);
  ln2_g = params.add(prefix + "ln2.gamma", DenseMatrix(1, width, 1.0), false);
  ln2_b = params.add(prefix + "ln2.beta", DenseMatrix(1, width), false);
  ffn_w1 = params.add(prefix + "ffn.w1", fan_in_init(width, 4 * width, rng), true);
  ffn_b1 = params.add(prefix + "ffn.b1", DenseMatrix(1, 4 * width), false);
  ffn_w2 = params.add(prefix + "ffn.w2", fan_in_init(4 * width, width, rng), true);
  ffn_b2 = params.add(prefix + "ffn.b2", DenseMatrix(1, width), false);
}

Tensor LinearAttnBlock::forward(const std::vector<Tensor>& bound, const Tensor& g) const {
  Tensor n1 = layer_norm(g, bound[ln1_g], bound[ln1_b]);
  Tensor attn = linear_attention(matmul(n1, bound[wq]), matmul(n1, bound[wk]),
                                 matmul(n1, bound[wv]));
  Tensor gt = add(g, attn);
  Tensor n2 = layer_norm(gt, bound[ln2_g], bound[ln2_b]);
  return add(gt, ffn2(bound, n2, ffn_w1, ffn_b1, ffn_w2, ffn_b2));
}

}  // namespace ono::nn
