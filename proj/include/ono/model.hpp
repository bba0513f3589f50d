#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ono/data.hpp"
#include "ono/nn_blocks.hpp"
#include "ono/ortho_attention.hpp"
#include "ono/params.hpp"

namespace ono::model {

using ad::Tape;
using ad::Tensor;
using linalg::DenseMatrix;
using nn::Mode;

struct ModelConfig {
  std::size_t stages = 4;         // L
  std::size_t width = 64;         // d
  std::size_t bottom_width = 64;  // d'
  std::size_t eigenmaps = 16;     // k
  double ema_momentum = 0.1;
  bool attn_normalization = true;  // 1/M factor in psi^T h (quadrature mean)
  bool whiten_backprop = true;     // batch-stat whitening gradients in train mode
  double mu_lr_scale = 20.0;       // lr multiplier for the raw eigenvalues
  std::uint64_t seed = 0;
  std::size_t coord_dim = 1;    // d0
  std::size_t in_channels = 1;  // d_f
  std::size_t out_channels = 1; // d_u
};

/// Per-channel input/output standardization owned by the model so that a
/// checkpoint is self-contained. Identity until the trainer sets it.
struct Normalization {
  std::vector<double> f_mean, f_std, u_mean, u_std;
  static Normalization identity(std::size_t df, std::size_t du);
};

/// Stacked ONO: pointwise encoder, then per stage a bottom-path transformer
/// block followed by orthogonal attention on the top path. The final
/// orthogonal-attention FFN maps to the output channels.
class OnoModel {
public:
  explicit OnoModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }
  Normalization& normalization() { return norm_; }
  const Normalization& normalization() const { return norm_; }
  std::vector<attn::OrthoAttentionLayer>& ortho_layers() { return ortho_; }
  const std::vector<attn::OrthoAttentionLayer>& ortho_layers() const { return ortho_; }

  std::size_t parameter_count() const { return params_.scalar_count(); }
  /// Closed-form parameter count from the config alone; guards drift.
  static std::size_t expected_parameter_count(const ModelConfig& config);

  std::vector<Tensor> bind(Tape& tape, bool with_grad) const { return params_.bind(tape, with_grad); }

  /// Differentiable batched forward. Inputs are raw (un-normalized) function
  /// pairs; outputs are in physical units (normalization decoded).
  std::vector<Tensor> forward_batch(Tape& tape, const std::vector<Tensor>& bound,
                                    const std::vector<const data::FunctionPair*>& batch,
                                    Mode mode);

  /// Convenience non-differentiable forward for one pair.
  DenseMatrix forward(const data::FunctionPair& pair, Mode mode);

  /// Cross-attention query path: hidden states live on pair.mesh (X), the
  /// first stage attends from X onto the query mesh Y without a residual,
  /// later stages run self-attention on Y. Input values are interpolated
  /// onto Y for the pointwise paths.
  DenseMatrix forward_query(const data::FunctionPair& pair, const data::Mesh& query_mesh);

private:
  Tensor encode_input(Tape& tape, const data::Mesh& mesh, const DenseMatrix& f_values) const;
  Tensor decode_output(const Tensor& raw) const;

  ModelConfig config_;
  nn::ParamSet params_;
  nn::EncoderMlp encoder_;
  std::vector<nn::LinearAttnBlock> blocks_;
  std::vector<attn::OrthoAttentionLayer> ortho_;
  Normalization norm_;
};

}  // namespace ono::model
