#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ono/data.hpp"
#include "ono/model.hpp"

namespace ono::train {

using linalg::DenseMatrix;

/// ||pred - target||_2 / ||target||_2 over the flattened pair.
double relative_l2(const DenseMatrix& pred, const DenseMatrix& target);

/// Differentiable version; the target is a constant. Throws ZeroTarget when
/// ||target|| < 1e-12.
ad::Tensor relative_l2_loss(const ad::Tensor& pred, const DenseMatrix& target);

struct ScheduleConfig {
  double max_lr = 1e-3;
  std::size_t total_steps = 1;
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;
};

/// Cosine ramp from max_lr/div_factor to max_lr over pct_start*total_steps,
/// then cosine anneal to max_lr/final_div_factor.
double onecycle_lr(const ScheduleConfig& cfg, std::size_t step);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Optimizer state: first/second moments per parameter plus the step count.
struct AdamState {
  std::vector<DenseMatrix> m, v;
  std::uint64_t step = 0;

  static AdamState init(const nn::ParamSet& params);
};

/// One decoupled-weight-decay Adam step. Throws NonFiniteGradient (leaving
/// parameters untouched) if any gradient entry is not finite.
void adamw_step(nn::ParamSet& params, AdamState& state, const std::vector<DenseMatrix>& grads,
                double lr, const AdamConfig& cfg);

struct TrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  ScheduleConfig schedule;   // total_steps filled in by train()
  AdamConfig adam;
  double clip_norm = 1.0;
  std::string out_dir;       // when set: metrics.csv + best.onoc land here
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  double lr = 0.0;
  double train_rel_l2 = 0.0;
  double val_rel_l2 = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> log;
  double best_val = 0.0;
  double initial_val = 0.0;
  std::string checkpoint_path;
  std::size_t skipped_steps = 0;
};

/// Full loop: seeded split + normalization stats, per-batch covariance
/// updates inside the train-mode forward, clipping, AdamW, one-cycle
/// schedule, per-epoch metrics, best-validation checkpointing.
TrainResult train(model::OnoModel& model, const data::Dataset& dataset, const TrainOptions& opt);

struct EvalResult {
  double mean_rel_l2 = 0.0;
  double median_rel_l2 = 0.0;
  std::vector<double> per_sample;
};

/// direct: run the model on the dataset's own mesh. query: subsample each
/// pair down to the checkpoint's training resolution and cross-attend onto
/// the full mesh.
EvalResult evaluate(model::OnoModel& model, const data::Dataset& dataset, const std::string& mode,
                    std::size_t train_resolution = 0);

EvalResult evaluate_indices(model::OnoModel& model, const data::Dataset& dataset,
                            const std::vector<std::size_t>& indices);

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& log);

// ---- checkpointing ---------------------------------------------------------

struct OptimizerSnapshot {
  AdamState adam;
  ScheduleConfig schedule;
  std::uint64_t rng_state[4] = {0, 0, 0, 0};
  double best_val = 0.0;
};

struct Checkpoint {
  model::ModelConfig config;
  std::size_t trained_nx = 0, trained_ny = 0;
  std::optional<OptimizerSnapshot> optimizer;
};

void save_checkpoint(const std::string& path, const model::OnoModel& model,
                     std::size_t trained_nx, std::size_t trained_ny,
                     const OptimizerSnapshot* optimizer);

/// Restores the model (parameters, normalization, covariance buffers; the
/// Cholesky factors are recomputed) plus optimizer state when present.
Checkpoint load_checkpoint(const std::string& path, std::optional<model::OnoModel>& model_out);

}  // namespace ono::train
