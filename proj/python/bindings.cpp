#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mmmie/gradcheck.hpp"
#include "mmmie/mi_bench.hpp"
#include "mmmie/training.hpp"

namespace py = pybind11;
using namespace mmmie;

namespace {

py::dict losses_dict(const LossBundle& l) {
  py::dict d;
  d["task"] = l.task;
  d["mi"] = l.mi;
  d["msi"] = l.msi;
  d["total"] = l.total;
  d["alpha"] = l.alpha;
  d["beta"] = l.beta;
  return d;
}

py::dict metric_dict(const MetricRecord& m) {
  py::dict d;
  d["epoch"] = m.epoch;
  d["split"] = m.split == Split::train ? "train" : "eval";
  d["accuracy"] = m.accuracy;
  d["weighted_f1"] = m.weighted_f1;
  d["losses"] = losses_dict(m.losses);
  return d;
}

py::dict train_py(const RunConfig& config, const std::function<void(py::dict)>& progress) {
  config.validate();
  const Dataset data = make_dataset(config);
  ProgressCallback cb;
  if (progress) cb = [&](const MetricRecord& m) {
    py::gil_scoped_acquire acquire;
    progress(metric_dict(m));
  };
  TrainResult r;
  {
    // Trainer runs without the GIL; the callback reacquires it.
    py::gil_scoped_release release;
    r = train(config, data, cb);
  }
  py::dict out;
  out["best_epoch"] = r.best_epoch;
  out["best_eval_accuracy"] = r.best_eval_accuracy;
  out["best_eval_f1"] = r.best_eval_f1;
  out["final_eval_accuracy"] = r.final_eval_accuracy;
  out["final_eval_f1"] = r.final_eval_f1;
  py::list metrics, steps, curves;
  for (const auto& m : r.metrics) metrics.append(metric_dict(m));
  for (const auto& s : r.steps) {
    py::dict d = losses_dict(s.losses);
    d["step"] = s.step;
    d["epoch"] = s.epoch;
    steps.append(d);
  }
  for (const auto& c : r.curves.rows) curves.append(py::make_tuple(c.step, curve_kind_name(c.kind), c.tag, c.value));
  out["metrics"] = metrics;
  out["steps"] = steps;
  out["curves"] = curves;
  out["train_conversations"] = data.train.size();
  out["eval_conversations"] = data.eval.size();
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multimodal fusion trained with mutual-information bounds";

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_readwrite("alpha", &RunConfig::alpha)
      .def_readwrite("beta", &RunConfig::beta)
      .def_readwrite("learning_rate", &RunConfig::learning_rate)
      .def_readwrite("batch_size", &RunConfig::batch_size)
      .def_readwrite("max_epochs", &RunConfig::max_epochs)
      .def_readwrite("seed", &RunConfig::seed)
      .def_readwrite("data_seed", &RunConfig::data_seed)
      .def_readwrite("conversations", &RunConfig::conversations)
      .def_readwrite("mmax_on", &RunConfig::mmax_on)
      .def_readwrite("mmin_on", &RunConfig::mmin_on)
      .def_readwrite("ie_on", &RunConfig::ie_on)
      .def_readwrite("modalities", &RunConfig::modalities)
      .def_readwrite("log_curves", &RunConfig::log_curves)
      .def_readwrite("data_csv", &RunConfig::data_csv)
      .def("set", [](RunConfig& c, const std::string& a) { apply_override(c, a); }, py::arg("assignment"),
           "Apply one key=value override.")
      .def("validate", &RunConfig::validate)
      .def("to_text", [](const RunConfig& c) { return config_to_text(c); })
      .def_static("from_text", [](const std::string& t) { return parse_config(t); }, py::arg("text"))
      .def_static("load", [](const std::string& p) { return load_config(p); }, py::arg("path"))
      .def("__repr__", [](const RunConfig& c) {
        return "<RunConfig seed=" + std::to_string(c.seed) + " max_epochs=" + std::to_string(c.max_epochs) + ">";
      });

  m.def("config_keys", &config_keys);

  m.def("analytic_mi", [](double rho, std::size_t dim) {
    GaussianPairSpec spec{rho, dim};
    spec.validate();
    return spec.analytic_mi();
  }, py::arg("rho"), py::arg("dim") = 1);

  m.def("mi_bench", [](double rho, std::size_t dim, std::size_t steps, std::uint64_t seed, double tolerance) {
    GaussianPairSpec spec{rho, dim};
    spec.validate();
    MiBenchOptions options;
    options.steps = steps;
    options.seed = seed;
    MiBenchRow row;
    {
      py::gil_scoped_release release;
      row = run_mi_bench(spec, options);
    }
    const MiBenchVerdict v = judge_mi_bench(row, tolerance);
    py::dict d;
    d["rho"] = row.rho;
    d["dim"] = row.dim;
    d["analytic_mi"] = row.analytic_mi;
    d["dv_estimate"] = row.dv_estimate;
    d["vclub_estimate"] = row.vclub_estimate;
    d["dv_eps_stat"] = row.dv_eps_stat();
    d["passed"] = v.passed();
    return d;
  }, py::arg("rho"), py::arg("dim") = 1, py::arg("steps") = 2000, py::arg("seed") = 100, py::arg("tolerance") = 0.1);

  m.def("weighted_f1", [](const std::vector<std::size_t>& preds, const std::vector<std::size_t>& truth,
                          std::size_t num_classes) { return weighted_f1(preds, truth, num_classes); },
        py::arg("preds"), py::arg("truth"), py::arg("num_classes"));
  m.def("accuracy", [](const std::vector<std::size_t>& preds, const std::vector<std::size_t>& truth) {
    return accuracy(preds, truth);
  }, py::arg("preds"), py::arg("truth"));

  m.def("gradcheck", [](std::uint64_t seed, std::optional<std::string> corrupt) {
    GradcheckOptions options;
    options.seed = seed;
    options.corrupt_block = std::move(corrupt);
    std::vector<GradcheckEntry> entries;
    {
      py::gil_scoped_release release;
      entries = run_gradcheck(options);
    }
    py::list out;
    for (const auto& e : entries) out.append(py::make_tuple(e.block, e.worst_relative_error, e.passed));
    return out;
  }, py::arg("seed") = 100, py::arg("corrupt") = py::none());
  m.def("gradcheck_blocks", &gradcheck_blocks);

  m.def("train", &train_py, py::arg("config"), py::arg("progress") = py::none(),
        "Train on the configured data; returns metrics, per-step losses and curves.");

  m.def("ablate", [](const RunConfig& base, const std::vector<std::uint64_t>& seeds) {
    base.validate();
    std::vector<AblationRow> rows;
    {
      py::gil_scoped_release release;
      rows = run_ablation(base, seeds);
    }
    py::list out;
    for (const auto& r : rows) {
      py::dict d;
      d["row_kind"] = r.row_kind;
      d["name"] = r.name;
      d["seeds"] = r.seeds;
      d["accuracies"] = r.accuracies;
      d["acc_mean"] = r.acc_mean;
      d["acc_std"] = r.acc_std;
      d["f1_mean"] = r.f1_mean;
      d["f1_std"] = r.f1_std;
      out.append(d);
    }
    return out;
  }, py::arg("config"), py::arg("seeds"));
  m.def("component_combinations", &component_combinations);
  m.def("modality_subsets", &modality_subsets);

  py::register_exception<TrainingAbort>(m, "TrainingAbort", PyExc_RuntimeError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
}
