#include "ono/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "ono/errors.hpp"
#include "ono/rng.hpp"
#include "ono/serialize.hpp"

namespace ono::train {

double relative_l2(const DenseMatrix& pred, const DenseMatrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw ShapeMismatch("relative_l2 shapes");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data()[i] - target.data()[i];
    num += d * d;
    den += target.data()[i] * target.data()[i];
  }
  const double tn = std::sqrt(den);
  if (tn < 1e-12) throw ZeroTarget("target norm " + std::to_string(tn));
  return std::sqrt(num) / tn;
}

ad::Tensor relative_l2_loss(const ad::Tensor& pred, const DenseMatrix& target) {
  double den = 0.0;
  for (double v : target.data()) den += v * v;
  const double tn = std::sqrt(den);
  if (tn < 1e-12) throw ZeroTarget("target norm " + std::to_string(tn));
  ad::Tape& tape = *pred.tape();
  ad::Tensor diff = ad::sub(pred, tape.constant(target));
  return ad::scale(ad::sqrt_t(ad::sum(ad::square(diff))), 1.0 / tn);
}

double onecycle_lr(const ScheduleConfig& cfg, std::size_t step) {
  if (step > cfg.total_steps) throw StepOutOfRange(std::to_string(step) + " > total " +
                                                   std::to_string(cfg.total_steps));
  const double initial = cfg.max_lr / cfg.div_factor;
  const double final_lr = cfg.max_lr / cfg.final_div_factor;
  const auto up = static_cast<std::size_t>(std::llround(cfg.pct_start * double(cfg.total_steps)));
  auto cosine = [](double from, double to, double t) {
    return from + (to - from) * 0.5 * (1.0 - std::cos(3.14159265358979323846 * t));
  };
  if (up > 0 && step <= up) return cosine(initial, cfg.max_lr, double(step) / double(up));
  if (cfg.total_steps == up) return cfg.max_lr;
  return cosine(cfg.max_lr, final_lr, double(step - up) / double(cfg.total_steps - up));
}

AdamState AdamState::init(const nn::ParamSet& params) {
  AdamState s;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = params.entry(static_cast<int>(i));
    s.m.emplace_back(e.value.rows(), e.value.cols());
    s.v.emplace_back(e.value.rows(), e.value.cols());
  }
  return s;
}

void adamw_step(nn::ParamSet& params, AdamState& state, const std::vector<DenseMatrix>& grads,
                double lr, const AdamConfig& cfg) {
  if (grads.size() != params.size()) throw ShapeMismatch("adamw grads count");
  for (const DenseMatrix& g : grads)
    if (!g.all_finite()) throw NonFiniteGradient("gradient contains NaN/Inf; step skipped");

  const std::uint64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& entry = params.entry(static_cast<int>(i));
    const double eff_lr = lr * entry.lr_scale;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < entry.value.size(); ++j) {
      double& w = entry.value.data()[j];
      if (entry.decay && cfg.weight_decay > 0.0) w -= eff_lr * cfg.weight_decay * w;
      m.data()[j] = cfg.beta1 * m.data()[j] + (1.0 - cfg.beta1) * g.data()[j];
      v.data()[j] = cfg.beta2 * v.data()[j] + (1.0 - cfg.beta2) * g.data()[j] * g.data()[j];
      const double mhat = m.data()[j] / bc1;
      const double vhat = v.data()[j] / bc2;
      w -= eff_lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
  state.step = t;
}

EvalResult evaluate_indices(model::OnoModel& model, const data::Dataset& dataset,
                            const std::vector<std::size_t>& indices) {
  EvalResult res;
  for (std::size_t i : indices) {
    const data::FunctionPair pair = dataset.pair(i);
    res.per_sample.push_back(relative_l2(model.forward(pair, nn::Mode::eval), pair.u_values));
  }
  if (!res.per_sample.empty()) {
    double s = 0.0;
    for (double v : res.per_sample) s += v;
    res.mean_rel_l2 = s / double(res.per_sample.size());
    std::vector<double> sorted = res.per_sample;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    res.median_rel_l2 = (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  }
  return res;
}

EvalResult evaluate(model::OnoModel& model, const data::Dataset& dataset, const std::string& mode,
                    std::size_t train_resolution) {
  if (mode == "direct") {
    std::vector<std::size_t> all(dataset.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return evaluate_indices(model, dataset, all);
  }
  if (mode != "query") throw Error("unknown eval mode: " + mode);
  if (!dataset.mesh.grid) throw NotAGrid("query mode needs grid metadata");
  if (train_resolution < 2) throw Error("query mode needs the training resolution");
  const std::size_t nx = dataset.mesh.grid->nx;
  if ((nx - 1) % (train_resolution - 1) != 0)
    throw IncompatibleFactor("eval resolution " + std::to_string(nx) +
                             " is not a refinement of " + std::to_string(train_resolution));
  const std::size_t factor = (nx - 1) / (train_resolution - 1);

  EvalResult res;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const data::FunctionPair fine = dataset.pair(i);
    const data::FunctionPair coarse = factor == 1 ? fine : data::subsample(fine, factor);
    DenseMatrix pred = model.forward_query(coarse, fine.mesh);
    res.per_sample.push_back(relative_l2(pred, fine.u_values));
  }
  double s = 0.0;
  for (double v : res.per_sample) s += v;
  res.mean_rel_l2 = res.per_sample.empty() ? 0.0 : s / double(res.per_sample.size());
  std::vector<double> sorted = res.per_sample;
  std::sort(sorted.begin(), sorted.end());
  if (!sorted.empty()) {
    const std::size_t n = sorted.size();
    res.median_rel_l2 = (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  }
  return res;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << "epoch,step,lr,train_rel_l2,val_rel_l2,wall_ms\n";
  char line[256];
  for (const EpochMetrics& m : log) {
    std::snprintf(line, sizeof(line), "%zu,%llu,%.12g,%.12g,%.12g,%.3f\n", m.epoch,
                  static_cast<unsigned long long>(m.step), m.lr, m.train_rel_l2, m.val_rel_l2,
                  m.wall_ms);
    out << line;
  }
}

TrainResult train(model::OnoModel& model, const data::Dataset& dataset, const TrainOptions& opt) {
  if (dataset.size() == 0) throw Error("empty dataset");
  TrainResult result;

  data::Split split = data::split_indices(dataset.size(), opt.seed);
  data::NormStats stats = data::compute_norm_stats(dataset, split.train);
  model.normalization() = {stats.f_mean, stats.f_std, stats.u_mean, stats.u_std};

  const std::size_t n_train = split.train.size();
  const std::size_t steps_per_epoch = (n_train + opt.batch_size - 1) / opt.batch_size;
  ScheduleConfig schedule = opt.schedule;
  schedule.total_steps = std::max<std::size_t>(1, opt.epochs * steps_per_epoch);

  AdamState adam = AdamState::init(model.params());
  Rng order_rng = Rng(opt.seed).stream("batch-order");
  const std::vector<std::size_t>& val_ids = split.val.empty() ? split.train : split.val;

  {
    // priming pass: the covariance buffers see their first batch here, which
    // also defines the untrained model's validation error
    std::vector<data::FunctionPair> prime;
    for (std::size_t i = 0; i < std::min(opt.batch_size, n_train); ++i)
      prime.push_back(dataset.pair(split.train[i]));
    ad::Tape tape;
    std::vector<ad::Tensor> bound = model.bind(tape, false);
    std::vector<const data::FunctionPair*> ptrs;
    for (const auto& p : prime) ptrs.push_back(&p);
    model.forward_batch(tape, bound, ptrs, nn::Mode::train);
  }
  result.initial_val = evaluate_indices(model, dataset, val_ids).mean_rel_l2;
  result.best_val = result.initial_val;

  std::string checkpoint_path, metrics_path;
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    checkpoint_path = opt.out_dir + "/best.onoc";
    metrics_path = opt.out_dir + "/metrics.csv";
  }
  const std::size_t trained_nx = dataset.mesh.grid ? dataset.mesh.grid->nx : dataset.mesh.size();
  const std::size_t trained_ny = dataset.mesh.grid ? dataset.mesh.grid->ny : 1;

  auto save_best = [&](const OptimizerSnapshot& snap) {
    if (checkpoint_path.empty()) return;
    save_checkpoint(checkpoint_path, model, trained_nx, trained_ny, &snap);
    result.checkpoint_path = checkpoint_path;
  };

  const auto t0 = std::chrono::steady_clock::now();
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::vector<std::size_t> order = split.train;
    shuffle(order, order_rng);

    double epoch_loss = 0.0;
    std::size_t batches = 0;
    double lr = opt.schedule.max_lr;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += opt.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + opt.batch_size);
      std::vector<data::FunctionPair> pairs;
      pairs.reserve(b1 - b0);
      for (std::size_t i = b0; i < b1; ++i) pairs.push_back(dataset.pair(order[i]));

      lr = onecycle_lr(schedule, step);
      ad::Tape tape;
      std::vector<ad::Tensor> bound = model.bind(tape, true);
      std::vector<const data::FunctionPair*> ptrs;
      for (const auto& p : pairs) ptrs.push_back(&p);
      std::vector<ad::Tensor> outs = model.forward_batch(tape, bound, ptrs, nn::Mode::train);

      ad::Tensor loss;
      for (std::size_t s = 0; s < outs.size(); ++s) {
        ad::Tensor term = relative_l2_loss(outs[s], pairs[s].u_values);
        loss = (s == 0) ? term : ad::add(loss, term);
      }
      loss = ad::scale(loss, 1.0 / double(outs.size()));
      epoch_loss += loss.value()(0, 0);
      ++batches;

      tape.backward(loss);
      std::vector<DenseMatrix> grads;
      grads.reserve(bound.size());
      for (const ad::Tensor& p : bound) grads.push_back(p.grad());

      double norm_sq = 0.0;
      for (const DenseMatrix& g : grads)
        for (double v : g.data()) norm_sq += v * v;
      if (std::isfinite(norm_sq) && opt.clip_norm > 0.0) {
        const double norm = std::sqrt(norm_sq);
        if (norm > opt.clip_norm) {
          const double s = opt.clip_norm / norm;
          for (DenseMatrix& g : grads)
            for (double& v : g.data()) v *= s;
        }
      }
      try {
        adamw_step(model.params(), adam, grads, lr, opt.adam);
      } catch (const NonFiniteGradient&) {
        ++result.skipped_steps;
        std::fprintf(stderr, "[train] step %llu skipped: non-finite gradient\n",
                     static_cast<unsigned long long>(step));
      }
      ++step;
    }

    const double val = evaluate_indices(model, dataset, val_ids).mean_rel_l2;
    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back({epoch, step, lr, batches ? epoch_loss / double(batches) : 0.0, val,
                          wall_ms});
    if (!metrics_path.empty()) write_metrics_csv(metrics_path, result.log);
    if (val <= result.best_val || result.checkpoint_path.empty()) {
      result.best_val = std::min(result.best_val, val);
      OptimizerSnapshot snap;
      snap.adam = adam;
      snap.schedule = schedule;
      for (int i = 0; i < 4; ++i) snap.rng_state[i] = order_rng.state_word(i);
      snap.best_val = result.best_val;
      save_best(snap);
    }
  }
  return result;
}

// ---- checkpoint io ----------------------------------------------------------

namespace {

void write_matrix(io::Writer& w, const DenseMatrix& m) {
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (double v : m.data()) w.f64(v);
}

DenseMatrix read_matrix(io::Reader& r) {
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  DenseMatrix m(rows, cols);
  for (double& v : m.data()) v = r.f64();
  return m;
}

void write_vec(io::Writer& w, const std::vector<double>& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (double x : v) w.f64(x);
}

std::vector<double> read_vec(io::Reader& r) {
  std::vector<double> v(r.u32());
  for (double& x : v) x = r.f64();
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const model::OnoModel& model,
                     std::size_t trained_nx, std::size_t trained_ny,
                     const OptimizerSnapshot* optimizer) {
  const model::ModelConfig& c = model.config();
  io::Writer body;
  body.u64(c.stages);
  body.u64(c.width);
  body.u64(c.bottom_width);
  body.u64(c.eigenmaps);
  body.f64(c.ema_momentum);
  body.u8(c.attn_normalization ? 1 : 0);
  body.u8(c.whiten_backprop ? 1 : 0);
  body.f64(c.mu_lr_scale);
  body.u64(c.seed);
  body.u64(c.coord_dim);
  body.u64(c.in_channels);
  body.u64(c.out_channels);

  const model::Normalization& n = model.normalization();
  write_vec(body, n.f_mean);
  write_vec(body, n.f_std);
  write_vec(body, n.u_mean);
  write_vec(body, n.u_std);

  body.u64(trained_nx);
  body.u64(trained_ny);

  const nn::ParamSet& params = model.params();
  body.u32(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = params.entry(static_cast<int>(i));
    body.str(e.name);
    write_matrix(body, e.value);
  }

  const auto& layers = model.ortho_layers();
  body.u32(static_cast<std::uint32_t>(layers.size()));
  for (const auto& layer : layers) {
    body.u8(layer.buffer.initialized ? 1 : 0);
    body.f64(layer.buffer.momentum);
    if (layer.buffer.initialized) write_matrix(body, layer.buffer.c);
  }

  body.u8(optimizer ? 1 : 0);
  if (optimizer) {
    body.u64(optimizer->adam.step);
    body.f64(optimizer->best_val);
    body.u32(static_cast<std::uint32_t>(optimizer->adam.m.size()));
    for (std::size_t i = 0; i < optimizer->adam.m.size(); ++i) {
      write_matrix(body, optimizer->adam.m[i]);
      write_matrix(body, optimizer->adam.v[i]);
    }
    for (int i = 0; i < 4; ++i) body.u64(optimizer->rng_state[i]);
    body.f64(optimizer->schedule.max_lr);
    body.u64(optimizer->schedule.total_steps);
    body.f64(optimizer->schedule.pct_start);
    body.f64(optimizer->schedule.div_factor);
    body.f64(optimizer->schedule.final_div_factor);
  }

  io::Writer file;
  file.bytes("ONOC", 4);
  file.u32(1);
  file.bytes(body.buffer().data(), body.size());
  file.u32(io::crc32(body.buffer().data(), body.size()));
  io::write_file(path, file.buffer());
}

Checkpoint load_checkpoint(const std::string& path, std::optional<model::OnoModel>& model_out) {
  io::Reader r(io::read_file(path));
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "ONOC", 4) != 0) throw BadMagic("not a checkpoint: " + path);
  const std::uint32_t version = r.u32();
  if (version != 1) throw VersionUnsupported("checkpoint version " + std::to_string(version));

  if (r.remaining() < 4) throw TruncatedFile("checkpoint too short");
  const std::size_t body_len = r.remaining() - 4;
  const std::uint32_t computed = io::crc32(r.buffer().data() + r.position(), body_len);
  std::uint32_t file_crc = 0;
  for (int i = 0; i < 4; ++i)
    file_crc |= static_cast<std::uint32_t>(r.buffer()[r.buffer().size() - 4 + i]) << (8 * i);
  if (file_crc != computed) throw ChecksumMismatch("checkpoint body CRC");

  Checkpoint ck;
  model::ModelConfig c;
  c.stages = r.u64();
  c.width = r.u64();
  c.bottom_width = r.u64();
  c.eigenmaps = r.u64();
  c.ema_momentum = r.f64();
  c.attn_normalization = r.u8() != 0;
  c.whiten_backprop = r.u8() != 0;
  c.mu_lr_scale = r.f64();
  c.seed = r.u64();
  c.coord_dim = r.u64();
  c.in_channels = r.u64();
  c.out_channels = r.u64();
  ck.config = c;

  model::OnoModel model(c);
  model::Normalization norm;
  norm.f_mean = read_vec(r);
  norm.f_std = read_vec(r);
  norm.u_mean = read_vec(r);
  norm.u_std = read_vec(r);
  model.normalization() = norm;

  ck.trained_nx = r.u64();
  ck.trained_ny = r.u64();

  const std::uint32_t n_params = r.u32();
  if (n_params != model.params().size()) throw Error("checkpoint parameter count mismatch");
  for (std::uint32_t i = 0; i < n_params; ++i) {
    const std::string name = r.str();
    auto& entry = model.params().entry(static_cast<int>(i));
    if (entry.name != name) throw Error("checkpoint parameter order mismatch at " + name);
    DenseMatrix m = read_matrix(r);
    if (m.rows() != entry.value.rows() || m.cols() != entry.value.cols())
      throw Error("checkpoint parameter shape mismatch at " + name);
    entry.value = std::move(m);
  }

  const std::uint32_t n_layers = r.u32();
  if (n_layers != model.ortho_layers().size()) throw Error("checkpoint layer count mismatch");
  for (auto& layer : model.ortho_layers()) {
    layer.buffer.initialized = r.u8() != 0;
    layer.buffer.momentum = r.f64();
    if (layer.buffer.initialized) {
      layer.buffer.c = read_matrix(r);
      layer.buffer.chol = linalg::cholesky(layer.buffer.c);
    }
  }

  if (r.u8() != 0) {
    OptimizerSnapshot snap;
    snap.adam.step = r.u64();
    snap.best_val = r.f64();
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      snap.adam.m.push_back(read_matrix(r));
      snap.adam.v.push_back(read_matrix(r));
    }
    for (int i = 0; i < 4; ++i) snap.rng_state[i] = r.u64();
    snap.schedule.max_lr = r.f64();
    snap.schedule.total_steps = r.u64();
    snap.schedule.pct_start = r.f64();
    snap.schedule.div_factor = r.f64();
    snap.schedule.final_div_factor = r.f64();
    ck.optimizer = std::move(snap);
  }

  model_out.emplace(std::move(model));
  return ck;
}

}  // namespace ono::train
