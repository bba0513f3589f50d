#include "ono/model.hpp"

#include "ono/errors.hpp"
#include "ono/rng.hpp"

namespace ono::model {

using namespace ad;

Normalization Normalization::identity(std::size_t df, std::size_t du) {
  Normalization n;
  n.f_mean.assign(df, 0.0);
  n.f_std.assign(df, 1.0);
  n.u_mean.assign(du, 0.0);
  n.u_std.assign(du, 1.0);
  return n;
}

OnoModel::OnoModel(const ModelConfig& config)
    : config_(config), norm_(Normalization::identity(config.in_channels, config.out_channels)) {
  if (config_.stages < 1) throw ShapeMismatch("model needs at least one stage");
  if (config_.width < 1 || config_.bottom_width < 1 || config_.eigenmaps < 1 ||
      config_.coord_dim < 1 || config_.in_channels < 1 || config_.out_channels < 1)
    throw ShapeMismatch("model config counts must be positive");
  if (!(config_.ema_momentum > 0.0 && config_.ema_momentum <= 1.0))
    throw ShapeMismatch("ema_momentum must lie in (0, 1]");
  Rng rng = Rng(config_.seed).stream("init");
  const std::size_t in_dim = config_.coord_dim + config_.in_channels;
  encoder_.build(params_, in_dim, config_.coord_dim, config_.bottom_width, config_.width, rng);
  blocks_.resize(config_.stages);
  ortho_.resize(config_.stages);
  for (std::size_t l = 0; l < config_.stages; ++l) {
    blocks_[l].build(params_, config_.bottom_width, l, rng);
    const std::size_t out_width =
        (l + 1 == config_.stages) ? config_.out_channels : config_.width;
    ortho_[l].build(params_, config_.bottom_width, config_.width, config_.eigenmaps, out_width, l,
                    config_.ema_momentum, config_.mu_lr_scale, rng);
    ortho_[l].attn_normalization = config_.attn_normalization;
    ortho_[l].whiten_backprop = config_.whiten_backprop;
  }
}

std::size_t OnoModel::expected_parameter_count(const ModelConfig& c) {
  const std::size_t in = c.coord_dim + c.in_channels;
  const std::size_t dp = c.bottom_width, d = c.width, k = c.eigenmaps;
  const std::size_t hidden = 2 * dp;
  std::size_t total = 0;
  total += in * hidden + hidden + hidden * dp + dp;  // g trunk
  total += in * hidden + hidden + hidden * d + d;    // h trunk
  for (std::size_t l = 0; l < c.stages; ++l) {
    total += 3 * dp * dp + 4 * dp;                    // qkv + two layer norms
    total += dp * 4 * dp + 4 * dp + 4 * dp * dp + dp; // block ffn
    const std::size_t dout = (l + 1 == c.stages) ? c.out_channels : d;
    total += dp * k + d * d + k + 2 * d;              // wq, wv, raw_mu, ln
    total += d * 4 * d + 4 * d + 4 * d * dout + dout; // ortho ffn
  }
  return total;
}

Tensor OnoModel::encode_input(Tape& tape, const data::Mesh& mesh,
                              const DenseMatrix& f_values) const {
  const std::size_t m = mesh.size();
  const std::size_t d0 = config_.coord_dim, df = config_.in_channels;
  if (mesh.coord_dim() != d0 || f_values.cols() != df || f_values.rows() != m)
    throw ShapeMismatch("input dims do not match the model config");
  DenseMatrix input(m, d0 + df);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < d0; ++c) input(r, c) = mesh.points(r, c);
    for (std::size_t c = 0; c < df; ++c)
      input(r, d0 + c) = (f_values(r, c) - norm_.f_mean[c]) / norm_.f_std[c];
  }
  return tape.constant(std::move(input));
}

Tensor OnoModel::decode_output(const Tensor& raw) const {
  Tape& tape = *raw.tape();
  const std::size_t du = config_.out_channels;
  DenseMatrix sd(1, du), mu(1, du);
  for (std::size_t c = 0; c < du; ++c) {
    sd(0, c) = norm_.u_std[c];
    mu(0, c) = norm_.u_mean[c];
  }
  return add(mul(raw, tape.constant(std::move(sd))), tape.constant(std::move(mu)));
}

std::vector<Tensor> OnoModel::forward_batch(Tape& tape, const std::vector<Tensor>& bound,
                                            const std::vector<const data::FunctionPair*>& batch,
                                            Mode mode) {
  if (batch.empty()) throw ShapeMismatch("empty batch");
  std::vector<Tensor> g_s, h_s;
  for (const data::FunctionPair* pair : batch) {
    if (mode == Mode::train && pair->mesh.size() < config_.eigenmaps)
      throw MeshTooSmall("mesh size " + std::to_string(pair->mesh.size()) + " < k = " +
                         std::to_string(config_.eigenmaps));
    Tensor input = encode_input(tape, pair->mesh, pair->f_values);
    auto [g, h] = encoder_.encode(bound, input);
    g_s.push_back(g);
    h_s.push_back(h);
  }
  for (std::size_t l = 0; l < config_.stages; ++l) {
    for (Tensor& g : g_s) g = blocks_[l].forward(bound, g);
    h_s = ortho_[l].forward_batch(bound, g_s, h_s, mode);
  }
  for (Tensor& h : h_s) h = decode_output(h);
  return h_s;
}

DenseMatrix OnoModel::forward(const data::FunctionPair& pair, Mode mode) {
  Tape tape;
  std::vector<Tensor> bound = bind(tape, false);
  return forward_batch(tape, bound, {&pair}, mode)[0].value();
}

DenseMatrix OnoModel::forward_query(const data::FunctionPair& pair, const data::Mesh& query_mesh) {
  Tape tape;
  std::vector<Tensor> bound = bind(tape, false);

  // The bottom path runs once on X; the eigenmaps are interpolated onto the
  // query points, making psi a function evaluable anywhere in the domain.
  // Restricting Y to mesh nodes then reproduces the node values exactly.
  Tensor input_x = encode_input(tape, pair.mesh, pair.f_values);
  auto [gx, hx] = encoder_.encode(bound, input_x);

  auto query_eigenmaps = [&](std::size_t l, const Tensor& g_stage) {
    Tensor psi_x = ortho_[l].eval_eigenmaps(bound, g_stage);
    DenseMatrix psi_y = data::interpolate_to_mesh(pair.mesh, psi_x.value(), query_mesh);
    return std::pair<Tensor, Tensor>(psi_x, tape.constant(std::move(psi_y)));
  };

  // first stage: cross attention X -> Y, no residual (the shapes differ)
  gx = blocks_[0].forward(bound, gx);
  auto [psi_x, psi_y] = query_eigenmaps(0, gx);
  Tensor att = ortho_[0].attend(bound, psi_y, psi_x, hx);
  Tensor z = layer_norm(att, bound[ortho_[0].ln_g], bound[ortho_[0].ln_b]);
  Tensor mid = gelu(add(matmul(z, bound[ortho_[0].ffn_w1]), bound[ortho_[0].ffn_b1]));
  Tensor h = add(matmul(mid, bound[ortho_[0].ffn_w2]), bound[ortho_[0].ffn_b2]);

  // later stages: self-attention on the query mesh with interpolated psi
  for (std::size_t l = 1; l < config_.stages; ++l) {
    gx = blocks_[l].forward(bound, gx);
    Tensor psi_q = query_eigenmaps(l, gx).second;
    Tensor att_l = ortho_[l].attend(bound, psi_q, psi_q, h);
    h = ortho_[l].output_head(bound, att_l, h);
  }
  return decode_output(h).value();
}

}  // namespace ono::model
