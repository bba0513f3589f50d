#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ono/data.hpp"
#include "ono/eigen_verify.hpp"
#include "ono/errors.hpp"
#include "ono/model.hpp"
#include "ono/nn_blocks.hpp"
#include "ono/rng.hpp"
#include "ono/training.hpp"

using json = nlohmann::json;
using namespace ono;

namespace {

constexpr const char* kVersion = "0.1.0";

// ---- run manifests ----------------------------------------------------------

/// Every subcommand records its resolved configuration before doing work;
/// `ono --manifest <path>` replays the stored argv.
json build_manifest(const std::string& subcommand, const json& config, std::uint64_t seed,
                    const std::vector<std::string>& artifacts,
                    const std::vector<std::string>& argv) {
  json m;
  m["subcommand"] = subcommand;
  m["config"] = config;
  m["seed"] = seed;
  m["artifacts"] = artifacts;
  m["tool_version"] = kVersion;
  m["wall_clock_unix"] =
      std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
          .count();
  m["argv"] = argv;
  return m;
}

/// Manifests land next to the subcommand's output; subcommands without a
/// file output print theirs to stdout instead of touching the filesystem.
void write_manifest(const std::string& path, const std::string& subcommand, const json& config,
                    std::uint64_t seed, const std::vector<std::string>& artifacts,
                    const std::vector<std::string>& argv) {
  json m = build_manifest(subcommand, config, seed, artifacts, argv);
  if (path.empty()) {
    std::printf("manifest: %s\n", m.dump().c_str());
    return;
  }
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write manifest: " + path);
  out << m.dump(2) << "\n";
}

std::vector<std::string> collect_argv(int argc, char** argv) {
  std::vector<std::string> v;
  for (int i = 1; i < argc; ++i) v.emplace_back(argv[i]);
  return v;
}

// ---- config file ------------------------------------------------------------

struct RunConfig {
  model::ModelConfig model;
  train::TrainOptions train;
};

/// JSON keys mirror the config field names; command-line flags override file
/// values (the CLI sets flags after this load).
void load_config_file(const std::string& path, RunConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config: " + path);
  json j = json::parse(in);
  auto get = [&](const char* key, auto& slot) {
    if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
  };
  get("stages", cfg.model.stages);
  get("width", cfg.model.width);
  get("bottom_width", cfg.model.bottom_width);
  get("eigenmaps", cfg.model.eigenmaps);
  get("ema_momentum", cfg.model.ema_momentum);
  get("attn_normalization", cfg.model.attn_normalization);
  get("whiten_backprop", cfg.model.whiten_backprop);
  get("mu_lr_scale", cfg.model.mu_lr_scale);
  get("seed", cfg.model.seed);
  get("max_lr", cfg.train.schedule.max_lr);
  get("pct_start", cfg.train.schedule.pct_start);
  get("div_factor", cfg.train.schedule.div_factor);
  get("final_div_factor", cfg.train.schedule.final_div_factor);
  get("weight_decay", cfg.train.adam.weight_decay);
  get("beta1", cfg.train.adam.beta1);
  get("beta2", cfg.train.adam.beta2);
  get("clip_norm", cfg.train.clip_norm);
  get("epochs", cfg.train.epochs);
  get("batch_size", cfg.train.batch_size);
}

json resolved_config_json(const RunConfig& cfg) {
  json j;
  j["stages"] = cfg.model.stages;
  j["width"] = cfg.model.width;
  j["bottom_width"] = cfg.model.bottom_width;
  j["eigenmaps"] = cfg.model.eigenmaps;
  j["ema_momentum"] = cfg.model.ema_momentum;
  j["attn_normalization"] = cfg.model.attn_normalization;
  j["whiten_backprop"] = cfg.model.whiten_backprop;
  j["mu_lr_scale"] = cfg.model.mu_lr_scale;
  j["seed"] = cfg.model.seed;
  j["coord_dim"] = cfg.model.coord_dim;
  j["in_channels"] = cfg.model.in_channels;
  j["out_channels"] = cfg.model.out_channels;
  j["max_lr"] = cfg.train.schedule.max_lr;
  j["pct_start"] = cfg.train.schedule.pct_start;
  j["div_factor"] = cfg.train.schedule.div_factor;
  j["final_div_factor"] = cfg.train.schedule.final_div_factor;
  j["weight_decay"] = cfg.train.adam.weight_decay;
  j["beta1"] = cfg.train.adam.beta1;
  j["beta2"] = cfg.train.adam.beta2;
  j["clip_norm"] = cfg.train.clip_norm;
  j["epochs"] = cfg.train.epochs;
  j["batch_size"] = cfg.train.batch_size;
  return j;
}

// ---- subcommand payloads ------------------------------------------------------

int run_generate(const std::string& problem, std::size_t n, std::size_t resolution,
                 std::uint64_t seed, const std::string& out,
                 const std::vector<std::string>& argv) {
  json cfg = {{"problem", problem}, {"n", n}, {"resolution", resolution}};
  write_manifest(out + ".manifest.json", "generate-data", cfg, seed, {out}, argv);
  data::Dataset ds;
  if (problem == "darcy2d") {
    ds = data::generate_darcy2d(n, resolution, seed);
  } else if (problem == "poisson1d") {
    ds = data::generate_poisson1d(n, resolution, seed);
  } else {
    throw Error("unknown problem: " + problem);
  }
  data::save_dataset(ds, out);
  std::printf("wrote %zu samples at resolution %zu to %s\n", ds.size(), resolution, out.c_str());
  return 0;
}

int run_train(const RunConfig& cfg_in, const std::string& data_path, const std::string& out_dir,
              const std::vector<std::string>& argv) {
  RunConfig cfg = cfg_in;
  data::Dataset ds = data::load_dataset(data_path);
  cfg.model.coord_dim = ds.mesh.coord_dim();
  cfg.model.in_channels = ds.in_channels();
  cfg.model.out_channels = ds.out_channels();
  cfg.train.out_dir = out_dir;
  cfg.train.seed = cfg.model.seed;

  json jcfg = resolved_config_json(cfg);
  jcfg["data"] = data_path;
  write_manifest(out_dir + "/manifest.json", "train", jcfg, cfg.model.seed,
                 {out_dir + "/metrics.csv", out_dir + "/best.onoc"}, argv);

  model::OnoModel m(cfg.model);
  std::printf("model parameters: %zu\n", m.parameter_count());
  train::TrainResult res = train::train(m, ds, cfg.train);
  std::printf("untrained val rel-L2 %.6g\n", res.initial_val);
  if (!res.log.empty())
    std::printf("final val rel-L2 %.6g (best %.6g) after %zu epochs\n",
                res.log.back().val_rel_l2, res.best_val, res.log.size());
  if (res.skipped_steps > 0)
    std::printf("skipped %zu non-finite steps\n", res.skipped_steps);
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& data_path, const std::string& mode,
             const std::string& report, const std::vector<std::string>& argv) {
  std::optional<model::OnoModel> m;
  train::Checkpoint ck = train::load_checkpoint(checkpoint, m);
  data::Dataset ds = data::load_dataset(data_path);

  json cfg = {{"checkpoint", checkpoint}, {"data", data_path}, {"superres_mode", mode}};
  std::vector<std::string> artifacts;
  if (!report.empty()) artifacts.push_back(report);
  write_manifest(report.empty() ? "" : report + ".manifest.json", "eval", cfg, ck.config.seed,
                 artifacts, argv);

  train::EvalResult res = train::evaluate(*m, ds, mode, ck.trained_nx);
  std::printf("mean rel-L2 %.8g  median %.8g  over %zu samples\n", res.mean_rel_l2,
              res.median_rel_l2, res.per_sample.size());
  if (!report.empty()) {
    std::ofstream out(report, std::ios::trunc);
    if (!out) throw Error("cannot write report: " + report);
    out << "index,rel_l2\n";
    for (std::size_t i = 0; i < res.per_sample.size(); ++i) {
      char line[64];
      std::snprintf(line, sizeof(line), "%zu,%.12g\n", i, res.per_sample[i]);
      out << line;
    }
  }
  return 0;
}

int run_super_res(const std::string& checkpoint, const std::string& data_path,
                  std::size_t train_res, const std::vector<std::size_t>& eval_res,
                  const std::string& report, const std::vector<std::string>& argv) {
  std::optional<model::OnoModel> m;
  train::Checkpoint ck = train::load_checkpoint(checkpoint, m);
  const std::size_t trained = train_res ? train_res : ck.trained_nx;
  data::Dataset fine = data::load_dataset(data_path);
  if (!fine.mesh.grid) throw NotAGrid("super-res needs grid data");

  json cfg = {{"checkpoint", checkpoint},
              {"data", data_path},
              {"train_res", trained},
              {"eval_res_list", eval_res}};
  write_manifest(report.empty() ? "" : report + ".manifest.json", "super-res", cfg,
                 ck.config.seed,
                 report.empty() ? std::vector<std::string>{} : std::vector<std::string>{report},
                 argv);

  std::string csv = "resolution,mode,mean_rel_l2,median_rel_l2\n";
  for (std::size_t res : eval_res) {
    if ((fine.mesh.grid->nx - 1) % (res - 1) != 0)
      throw IncompatibleFactor("resolution " + std::to_string(res) +
                               " is not a coarsening of the data grid");
    const std::size_t factor = (fine.mesh.grid->nx - 1) / (res - 1);
    data::Dataset at_res = factor == 1 ? fine : data::subsample(fine, factor);
    for (const std::string mode : {"direct", "query"}) {
      train::EvalResult r = train::evaluate(*m, at_res, mode, trained);
      char line[128];
      std::snprintf(line, sizeof(line), "%zu,%s,%.12g,%.12g\n", res, mode.c_str(), r.mean_rel_l2,
                    r.median_rel_l2);
      csv += line;
      std::printf("res %4zu  %-6s mean rel-L2 %.8g\n", res, mode.c_str(), r.mean_rel_l2);
    }
  }
  if (!report.empty()) {
    std::ofstream out(report, std::ios::trunc);
    out << csv;
  }
  return 0;
}

int run_verify_eigen(const std::string& kernel_name, std::size_t k, std::size_t grid,
                     std::size_t steps, std::uint64_t seed, const std::string& out,
                     const std::vector<std::string>& argv) {
  json cfg = {{"kernel", kernel_name}, {"k", k}, {"grid", grid}, {"steps", steps}};
  write_manifest(out.empty() ? "" : out + ".manifest.json", "verify-eigen", cfg, seed,
                 out.empty() ? std::vector<std::string>{} : std::vector<std::string>{out}, argv);

  verify::AnalyticKernel kernel = verify::AnalyticKernel::parse(kernel_name);
  verify::RecoveryOptions opt;
  opt.grid_size = grid;
  opt.k = k;
  opt.steps = steps;
  opt.seed = seed;
  verify::RecoveryReport rep = verify::recover_eigenfunctions(kernel, opt);

  std::string csv = "kernel,k,i,eigenvalue_true,eigenvalue_learned,alignment\n";
  bool ok = true;
  for (const auto& row : rep.rows) {
    char line[160];
    std::snprintf(line, sizeof(line), "%s,%zu,%zu,%.10g,%.10g,%.8g\n", kernel_name.c_str(), k,
                  row.index, row.eigenvalue_true, row.eigenvalue_learned, row.alignment);
    csv += line;
    std::printf("i=%zu  true %.6g  learned %.6g  alignment %.6g\n", row.index,
                row.eigenvalue_true, row.eigenvalue_learned, row.alignment);
    ok = ok && row.alignment > 0.99 &&
         std::fabs(row.eigenvalue_learned - row.eigenvalue_true) <= 0.10 * row.eigenvalue_true;
  }
  if (!out.empty()) {
    std::ofstream f(out, std::ios::trunc);
    f << csv;
  }
  std::printf("%s\n", ok ? "recovery PASS" : "recovery FAIL");
  return ok ? 0 : 1;
}

double model_scope_grad_check(std::uint64_t seed) {
  model::ModelConfig cfg;
  cfg.stages = 1;
  cfg.width = 8;
  cfg.bottom_width = 8;
  cfg.eigenmaps = 4;
  cfg.seed = seed;
  model::OnoModel m(cfg);

  Rng rng = Rng(seed).stream("grad-check");
  data::FunctionPair pair;
  const std::size_t mesh_n = 16;
  pair.mesh.points = linalg::DenseMatrix(mesh_n, 1);
  for (std::size_t i = 0; i < mesh_n; ++i) pair.mesh.points(i, 0) = double(i) / double(mesh_n - 1);
  pair.f_values = linalg::DenseMatrix(mesh_n, 1);
  pair.u_values = linalg::DenseMatrix(mesh_n, 1);
  for (double& v : pair.f_values.data()) v = rng.normal();
  for (double& v : pair.u_values.data()) v = rng.normal();
  m.forward(pair, nn::Mode::train);  // materialize buffers, then freeze

  std::vector<linalg::DenseMatrix> points;
  for (std::size_t i = 0; i < m.params().size(); ++i)
    points.push_back(m.params().entry(int(i)).value);
  auto f = [&](ad::Tape& t, const std::vector<ad::Tensor>& leaves) {
    model::OnoModel probe = m;
    std::vector<const data::FunctionPair*> batch = {&pair};
    std::vector<ad::Tensor> outs = probe.forward_batch(t, leaves, batch, nn::Mode::eval);
    return train::relative_l2_loss(outs[0], pair.u_values);
  };
  return ad::grad_check(f, points, 1e-5);
}

double layer_scope_grad_check(std::uint64_t seed) {
  Rng rng(seed);
  nn::ParamSet params;
  attn::OrthoAttentionLayer layer;
  layer.build(params, 5, 4, 3, 4, 0, 0.1, 1.0, rng);
  linalg::DenseMatrix g(8, 5), h(8, 4);
  for (double& v : g.data()) v = rng.normal();
  for (double& v : h.data()) v = rng.normal();
  {
    ad::Tape warm;
    auto bound = params.bind(warm, false);
    layer.forward(bound, warm.constant(g), warm.constant(h), nn::Mode::train);
  }
  std::vector<linalg::DenseMatrix> points;
  for (std::size_t i = 0; i < params.size(); ++i) points.push_back(params.entry(int(i)).value);
  auto f = [&](ad::Tape& t, const std::vector<ad::Tensor>& leaves) {
    attn::OrthoAttentionLayer frozen = layer;
    return ad::sum(
        ad::square(frozen.forward(leaves, t.constant(g), t.constant(h), nn::Mode::eval)));
  };
  return ad::grad_check(f, points, 1e-5);
}

double primitive_scope_grad_check(std::uint64_t seed) {
  Rng rng(seed);
  auto random_matrix = [&](std::size_t r, std::size_t c) {
    linalg::DenseMatrix m(r, c);
    for (double& v : m.data()) v = rng.normal();
    return m;
  };
  double worst = 0.0;
  auto check = [&](auto make, const linalg::DenseMatrix& point) {
    auto f = [&](ad::Tape& t, const std::vector<ad::Tensor>& leaves) {
      (void)t;
      return ad::sum(make(leaves[0]));
    };
    worst = std::max(worst, ad::grad_check(f, {point}, 1e-5));
  };
  linalg::DenseMatrix a = random_matrix(4, 3);
  linalg::DenseMatrix pos = random_matrix(4, 3);
  for (double& v : pos.data()) v = 0.5 + std::fabs(v);
  check([](ad::Tensor x) { return ad::gelu(x); }, a);
  check([](ad::Tensor x) { return ad::relu(x); }, a);
  check([](ad::Tensor x) { return ad::elu1(x); }, a);
  check([](ad::Tensor x) { return ad::exp_t(x); }, a);
  check([](ad::Tensor x) { return ad::square(x); }, a);
  check([](ad::Tensor x) { return ad::sqrt_t(x); }, pos);
  check([](ad::Tensor x) { return ad::reciprocal(x); }, pos);
  check([](ad::Tensor x) { return ad::mean(ad::square(x)); }, a);
  return worst;
}

int run_grad_check(const std::string& scope, std::size_t trials, std::uint64_t seed,
                   const std::string& manifest_out, const std::vector<std::string>& argv) {
  json cfg = {{"scope", scope}, {"trials", trials}};
  write_manifest(manifest_out, "grad-check", cfg, seed, {}, argv);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    double err = 0.0;
    if (scope == "primitive") {
      err = primitive_scope_grad_check(seed + t);
    } else if (scope == "layer") {
      err = layer_scope_grad_check(seed + t);
    } else if (scope == "model") {
      err = model_scope_grad_check(seed + t);
    } else {
      throw Error("unknown scope: " + scope);
    }
    std::printf("trial %zu: max relative error %.3g\n", t, err);
    worst = std::max(worst, err);
  }
  const double gate = scope == "primitive" ? 1e-6 : 1e-4;
  std::printf("max relative error %.6g (gate %.0e)\n", worst, gate);
  return worst < gate ? 0 : 1;
}

int run_bench_linear(const std::vector<std::size_t>& m_list, std::size_t k,
                     const std::string& report, const std::vector<std::string>& argv) {
  json cfg = {{"m_list", m_list}, {"k", k}};
  write_manifest(report.empty() ? "" : report + ".manifest.json", "bench-linear", cfg, 0,
                 report.empty() ? std::vector<std::string>{} : std::vector<std::string>{report},
                 argv);

  Rng rng(0);
  nn::ParamSet params;
  attn::OrthoAttentionLayer layer;
  layer.build(params, 16, 16, k, 16, 0, 1.0, 1.0, rng);
  auto random_matrix = [&](std::size_t r, std::size_t c) {
    linalg::DenseMatrix m(r, c);
    for (double& v : m.data()) v = rng.normal();
    return m;
  };
  {
    ad::Tape warm;
    auto bound = params.bind(warm, false);
    layer.forward(bound, warm.constant(random_matrix(64, 16)),
                  warm.constant(random_matrix(64, 16)), nn::Mode::train);
  }
  std::string csv = "m,seconds\n";
  for (std::size_t m : m_list) {
    linalg::DenseMatrix g = random_matrix(m, 16), h = random_matrix(m, 16);
    double best = 1e100;
    for (int rep = 0; rep < 7; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      ad::Tape tape;
      auto bound = params.bind(tape, false);
      layer.forward(bound, tape.constant(g), tape.constant(h), nn::Mode::eval);
      best = std::min(
          best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    char line[64];
    std::snprintf(line, sizeof(line), "%zu,%.6g\n", m, best);
    csv += line;
    std::printf("M = %5zu   wall %.6f s\n", m, best);
  }
  if (!report.empty()) {
    std::ofstream out(report, std::ios::trunc);
    out << csv;
  }
  return 0;
}

int replay_manifest(const std::string& path);

int dispatch(int argc, char** argv) {
  CLI::App app{"orthogonal-attention neural operator toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(0, 1);

  std::string manifest_path;
  app.add_option("--manifest", manifest_path, "replay a recorded run manifest");

  const std::vector<std::string> raw_argv = collect_argv(argc, argv);

  // generate-data
  auto* gen = app.add_subcommand("generate-data", "synthesize a PDE dataset");
  std::string gen_problem = "poisson1d", gen_out = "data.onod";
  std::size_t gen_n = 100, gen_res = 64;
  std::uint64_t gen_seed = 0;
  gen->add_option("--problem", gen_problem, "darcy2d|poisson1d");
  gen->add_option("--n", gen_n, "number of samples");
  gen->add_option("--resolution", gen_res, "grid resolution per axis");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output dataset path")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a model on a dataset");
  RunConfig cfg;
  std::string tr_data, tr_config, tr_out = "run";
  tr->add_option("--data", tr_data, "dataset path")->required();
  std::string config_path;
  tr->add_option("--config", config_path, "JSON config (flags override file values)");
  tr->add_option("--epochs", cfg.train.epochs, "training epochs");
  tr->add_option("--batch-size", cfg.train.batch_size, "batch size");
  tr->add_option("--seed", cfg.model.seed, "master seed");
  tr->add_option("--out-dir", tr_out, "output directory");
  tr->add_option("--max-lr", cfg.train.schedule.max_lr, "one-cycle peak learning rate");
  tr->add_option("--stages", cfg.model.stages, "attention stages (L)");
  tr->add_option("--width", cfg.model.width, "hidden width (d)");
  tr->add_option("--bottom-width", cfg.model.bottom_width, "feature width (d')");
  tr->add_option("--eigenmaps", cfg.model.eigenmaps, "eigenmap count (k)");
  bool no_attn_norm = false;
  tr->add_flag("--no-attn-normalization", no_attn_norm,
               "drop the 1/M factor in the attention contraction");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_mode = "direct", ev_report;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--superres-mode", ev_mode, "direct|query");
  ev->add_option("--report", ev_report, "per-sample CSV path");

  // super-res
  auto* sr = app.add_subcommand("super-res", "zero-shot super-resolution sweep");
  std::string sr_ckpt, sr_data, sr_report;
  std::size_t sr_train_res = 0;
  std::vector<std::size_t> sr_res_list;
  sr->add_option("--checkpoint", sr_ckpt)->required();
  sr->add_option("--data", sr_data, "fine-resolution dataset")->required();
  sr->add_option("--train-res", sr_train_res, "training resolution (default: from checkpoint)");
  sr->add_option("--eval-res-list", sr_res_list, "resolutions to evaluate")
      ->required()
      ->delimiter(',');
  sr->add_option("--report", sr_report, "CSV output path");

  // verify-eigen
  auto* vf = app.add_subcommand("verify-eigen", "numeric eigenfunction recovery check");
  std::string vf_kernel = "min", vf_out;
  std::size_t vf_k = 3, vf_grid = 256, vf_steps = 6000;
  std::uint64_t vf_seed = 0;
  vf->add_option("--kernel", vf_kernel, "min|rbf");
  vf->add_option("--k", vf_k, "eigenfunctions to recover");
  vf->add_option("--grid", vf_grid, "grid size");
  vf->add_option("--steps", vf_steps, "optimizer steps");
  vf->add_option("--seed", vf_seed);
  vf->add_option("--out", vf_out, "report CSV path");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient verification");
  std::string gc_scope = "model", gc_manifest;
  std::size_t gc_trials = 3;
  std::uint64_t gc_seed = 0;
  gc->add_option("--scope", gc_scope, "primitive|layer|model");
  gc->add_option("--trials", gc_trials);
  gc->add_option("--seed", gc_seed);
  gc->add_option("--manifest-out", gc_manifest);

  // bench-linear
  auto* bl = app.add_subcommand("bench-linear", "layer forward wall time vs mesh size");
  std::vector<std::size_t> bl_list = {256, 512, 1024, 2048};
  std::size_t bl_k = 16;
  std::string bl_report;
  bl->add_option("--m-list", bl_list, "mesh sizes")->delimiter(',');
  bl->add_option("--k", bl_k);
  bl->add_option("--report", bl_report, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the message and usage hint to stderr
    return 2;
  }

  if (!manifest_path.empty()) return replay_manifest(manifest_path);

  if (*gen) return run_generate(gen_problem, gen_n, gen_res, gen_seed, gen_out, raw_argv);
  if (*tr) {
    RunConfig file_cfg;
    if (!config_path.empty()) load_config_file(config_path, file_cfg);
    // flags override file values
    RunConfig merged = file_cfg;
    if (tr->count("--epochs")) merged.train.epochs = cfg.train.epochs;
    if (tr->count("--batch-size")) merged.train.batch_size = cfg.train.batch_size;
    if (tr->count("--seed")) merged.model.seed = cfg.model.seed;
    if (tr->count("--max-lr")) merged.train.schedule.max_lr = cfg.train.schedule.max_lr;
    if (tr->count("--stages")) merged.model.stages = cfg.model.stages;
    if (tr->count("--width")) merged.model.width = cfg.model.width;
    if (tr->count("--bottom-width")) merged.model.bottom_width = cfg.model.bottom_width;
    if (tr->count("--eigenmaps")) merged.model.eigenmaps = cfg.model.eigenmaps;
    if (no_attn_norm) merged.model.attn_normalization = false;
    return run_train(merged, tr_data, tr_out, raw_argv);
  }
  if (*ev) return run_eval(ev_ckpt, ev_data, ev_mode, ev_report, raw_argv);
  if (*sr) return run_super_res(sr_ckpt, sr_data, sr_train_res, sr_res_list, sr_report, raw_argv);
  if (*vf) return run_verify_eigen(vf_kernel, vf_k, vf_grid, vf_steps, vf_seed, vf_out, raw_argv);
  if (*gc) return run_grad_check(gc_scope, gc_trials, gc_seed, gc_manifest, raw_argv);
  if (*bl) return run_bench_linear(bl_list, bl_k, bl_report, raw_argv);

  std::cerr << app.help() << "\n";
  return 2;
}

int replay_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest: " + path);
  json m = json::parse(in);
  std::vector<std::string> args = m.at("argv").get<std::vector<std::string>>();
  std::vector<char*> argv;
  std::string prog = "ono";
  argv.push_back(prog.data());
  for (std::string& a : args) argv.push_back(a.data());
  return dispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const CLI::ParseError& e) {
    return e.get_exit_code() == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
