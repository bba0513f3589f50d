#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "ono/data.hpp"
#include "ono/eigen_verify.hpp"
#include "ono/linalg.hpp"
#include "ono/model.hpp"
#include "ono/training.hpp"

namespace py = pybind11;
using namespace ono;
using linalg::DenseMatrix;

namespace {

DenseMatrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() == 1) {
    DenseMatrix m(static_cast<std::size_t>(arr.shape(0)), 1);
    std::copy(arr.data(), arr.data() + arr.size(), m.data().begin());
    return m;
  }
  if (arr.ndim() != 2) throw std::invalid_argument("expected a 1-D or 2-D array");
  DenseMatrix m(static_cast<std::size_t>(arr.shape(0)), static_cast<std::size_t>(arr.shape(1)));
  std::copy(arr.data(), arr.data() + arr.size(), m.data().begin());
  return m;
}

py::array_t<double> to_numpy(const DenseMatrix& m) {
  py::array_t<double> arr({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), arr.mutable_data());
  return arr;
}

data::FunctionPair pair_from_arrays(const data::Mesh& mesh, const py::array_t<double>& f,
                                    const py::array_t<double>& u) {
  return {mesh, to_matrix(f), to_matrix(u)};
}

}  // namespace

PYBIND11_MODULE(_ono, m) {
  m.doc() = "orthogonal-attention neural operator core";
  m.attr("__version__") = "0.1.0";

  // ---- linear algebra -------------------------------------------------------
  m.def("cholesky", [](py::array_t<double> a) { return to_numpy(linalg::cholesky(to_matrix(a))); },
        py::arg("matrix"), "Lower-triangular Cholesky factor of an SPD matrix");
  m.def(
      "solve_triangular",
      [](py::array_t<double> l, py::array_t<double> b, bool transpose) {
        return to_numpy(linalg::solve_triangular(to_matrix(l), to_matrix(b), transpose));
      },
      py::arg("l"), py::arg("b"), py::arg("transpose") = false);
  m.def("sym_eig", [](py::array_t<double> a) {
    auto [vals, vecs] = linalg::sym_eig(to_matrix(a));
    return py::make_tuple(vals, to_numpy(vecs));
  });

  // ---- data -----------------------------------------------------------------
  py::class_<data::Mesh>(m, "Mesh")
      .def_property_readonly("points", [](const data::Mesh& mesh) { return to_numpy(mesh.points); })
      .def_property_readonly("size", [](const data::Mesh& mesh) { return mesh.size(); })
      .def_property_readonly("grid_shape", [](const data::Mesh& mesh) -> py::object {
        if (!mesh.grid) return py::none();
        return py::make_tuple(mesh.grid->nx, mesh.grid->ny, mesh.grid->spacing);
      });

  py::class_<data::Dataset>(m, "Dataset")
      .def_property_readonly("size", [](const data::Dataset& ds) { return ds.size(); })
      .def_property_readonly("mesh", [](const data::Dataset& ds) { return ds.mesh; })
      .def("f", [](const data::Dataset& ds, std::size_t i) { return to_numpy(ds.f.at(i)); })
      .def("u", [](const data::Dataset& ds, std::size_t i) { return to_numpy(ds.u.at(i)); })
      .def("save", [](const data::Dataset& ds, const std::string& path) {
        data::save_dataset(ds, path);
      })
      .def("subsample",
           [](const data::Dataset& ds, std::size_t factor) { return data::subsample(ds, factor); });

  m.def("generate_poisson1d", &data::generate_poisson1d, py::arg("n"), py::arg("resolution"),
        py::arg("seed"));
  m.def("generate_darcy2d", &data::generate_darcy2d, py::arg("n"), py::arg("resolution"),
        py::arg("seed"));
  m.def("load_dataset", &data::load_dataset, py::arg("path"));

  // ---- model ----------------------------------------------------------------
  py::class_<model::ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("stages", &model::ModelConfig::stages)
      .def_readwrite("width", &model::ModelConfig::width)
      .def_readwrite("bottom_width", &model::ModelConfig::bottom_width)
      .def_readwrite("eigenmaps", &model::ModelConfig::eigenmaps)
      .def_readwrite("ema_momentum", &model::ModelConfig::ema_momentum)
      .def_readwrite("attn_normalization", &model::ModelConfig::attn_normalization)
      .def_readwrite("whiten_backprop", &model::ModelConfig::whiten_backprop)
      .def_readwrite("mu_lr_scale", &model::ModelConfig::mu_lr_scale)
      .def_readwrite("seed", &model::ModelConfig::seed)
      .def_readwrite("coord_dim", &model::ModelConfig::coord_dim)
      .def_readwrite("in_channels", &model::ModelConfig::in_channels)
      .def_readwrite("out_channels", &model::ModelConfig::out_channels);

  py::class_<model::OnoModel>(m, "Model")
      .def(py::init<const model::ModelConfig&>())
      .def_property_readonly("parameter_count", &model::OnoModel::parameter_count)
      .def_property_readonly("config", &model::OnoModel::config)
      .def("forward",
           [](model::OnoModel& self, const data::Mesh& mesh, py::array_t<double> f, bool train) {
             data::FunctionPair pair{mesh, to_matrix(f),
                                     DenseMatrix(mesh.size(), self.config().out_channels)};
             return to_numpy(self.forward(pair, train ? nn::Mode::train : nn::Mode::eval));
           },
           py::arg("mesh"), py::arg("f"), py::arg("train") = false)
      .def("forward_query",
           [](model::OnoModel& self, const data::Mesh& mesh, py::array_t<double> f,
              const data::Mesh& query) {
             data::FunctionPair pair{mesh, to_matrix(f),
                                     DenseMatrix(mesh.size(), self.config().out_channels)};
             return to_numpy(self.forward_query(pair, query));
           },
           py::arg("mesh"), py::arg("f"), py::arg("query_mesh"));

  m.def("expected_parameter_count", &model::OnoModel::expected_parameter_count);

  // ---- training -------------------------------------------------------------
  m.def("relative_l2", [](py::array_t<double> pred, py::array_t<double> target) {
    return train::relative_l2(to_matrix(pred), to_matrix(target));
  });
  m.def(
      "onecycle_lr",
      [](double max_lr, std::size_t total_steps, double pct_start, double div_factor,
         double final_div_factor, std::size_t step) {
        train::ScheduleConfig cfg;
        cfg.max_lr = max_lr;
        cfg.total_steps = total_steps;
        cfg.pct_start = pct_start;
        cfg.div_factor = div_factor;
        cfg.final_div_factor = final_div_factor;
        return train::onecycle_lr(cfg, step);
      },
      py::arg("max_lr"), py::arg("total_steps"), py::arg("pct_start") = 0.3,
      py::arg("div_factor") = 25.0, py::arg("final_div_factor") = 1e4, py::arg("step") = 0);

  py::class_<train::EpochMetrics>(m, "EpochMetrics")
      .def_readonly("epoch", &train::EpochMetrics::epoch)
      .def_readonly("step", &train::EpochMetrics::step)
      .def_readonly("lr", &train::EpochMetrics::lr)
      .def_readonly("train_rel_l2", &train::EpochMetrics::train_rel_l2)
      .def_readonly("val_rel_l2", &train::EpochMetrics::val_rel_l2);

  py::class_<train::TrainResult>(m, "TrainResult")
      .def_readonly("log", &train::TrainResult::log)
      .def_readonly("best_val", &train::TrainResult::best_val)
      .def_readonly("initial_val", &train::TrainResult::initial_val)
      .def_readonly("checkpoint_path", &train::TrainResult::checkpoint_path);

  m.def(
      "train",
      [](model::OnoModel& mdl, const data::Dataset& ds, std::size_t epochs, std::size_t batch_size,
         std::uint64_t seed, double max_lr, const std::string& out_dir) {
        train::TrainOptions opt;
        opt.epochs = epochs;
        opt.batch_size = batch_size;
        opt.seed = seed;
        opt.schedule.max_lr = max_lr;
        opt.out_dir = out_dir;
        return train::train(mdl, ds, opt);
      },
      py::arg("model"), py::arg("dataset"), py::arg("epochs") = 30, py::arg("batch_size") = 8,
      py::arg("seed") = 0, py::arg("max_lr") = 1e-3, py::arg("out_dir") = "");

  py::class_<train::EvalResult>(m, "EvalResult")
      .def_readonly("mean_rel_l2", &train::EvalResult::mean_rel_l2)
      .def_readonly("median_rel_l2", &train::EvalResult::median_rel_l2)
      .def_readonly("per_sample", &train::EvalResult::per_sample);

  m.def(
      "evaluate",
      [](model::OnoModel& mdl, const data::Dataset& ds, const std::string& mode,
         std::size_t train_resolution) { return train::evaluate(mdl, ds, mode, train_resolution); },
      py::arg("model"), py::arg("dataset"), py::arg("mode") = "direct",
      py::arg("train_resolution") = 0);

  m.def("load_checkpoint", [](const std::string& path) {
    std::optional<model::OnoModel> mdl;
    train::Checkpoint ck = train::load_checkpoint(path, mdl);
    return py::make_tuple(std::move(*mdl), ck.trained_nx, ck.trained_ny);
  });
  m.def("save_checkpoint",
        [](const std::string& path, const model::OnoModel& mdl, std::size_t nx, std::size_t ny) {
          train::save_checkpoint(path, mdl, nx, ny, nullptr);
        });

  // ---- verification ---------------------------------------------------------
  m.def(
      "spectral_truth",
      [](const std::string& kernel, std::size_t grid, std::size_t k, double length_scale) {
        auto truth =
            verify::spectral_truth(verify::AnalyticKernel::parse(kernel, length_scale), grid, k);
        return py::make_tuple(truth.eigenvalues, to_numpy(truth.eigenfunctions));
      },
      py::arg("kernel"), py::arg("grid"), py::arg("k"), py::arg("length_scale") = 0.2);

  m.def(
      "recover_eigenfunctions",
      [](const std::string& kernel, std::size_t grid, std::size_t k, std::size_t steps,
         std::uint64_t seed) {
        verify::RecoveryOptions opt;
        opt.grid_size = grid;
        opt.k = k;
        opt.steps = steps;
        opt.seed = seed;
        verify::RecoveryReport rep =
            verify::recover_eigenfunctions(verify::AnalyticKernel::parse(kernel), opt);
        py::list rows;
        for (const auto& r : rep.rows)
          rows.append(py::make_tuple(r.index, r.eigenvalue_true, r.eigenvalue_learned,
                                     r.alignment));
        return py::make_tuple(rows, to_numpy(rep.psi));
      },
      py::arg("kernel") = "min", py::arg("grid") = 256, py::arg("k") = 3, py::arg("steps") = 6000,
      py::arg("seed") = 0);
}
