#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "manismooth/baselines.hpp"
#include "manismooth/error.hpp"
#include "manismooth/ingest.hpp"
#include "manismooth/pipeline.hpp"
#include "manismooth/protocol.hpp"
#include "manismooth/smoothness.hpp"
#include "manismooth/stats.hpp"
#include "manismooth/synthbench.hpp"

namespace py = pybind11;
using namespace manismooth;

namespace {

TauVariant tau_of(const std::string& s) {
  if (s == "b") return TauVariant::b;
  if (s == "a") return TauVariant::a;
  throw ValidationError("tau variant must be 'a' or 'b'");
}

SmoothnessVariant variant_of(const std::string& s) {
  if (s == "majority") return SmoothnessVariant::majority;
  if (s == "entropy") return SmoothnessVariant::neg_entropy;
  throw ValidationError("variant must be 'majority' or 'entropy'");
}

DenseMatrix to_matrix(const std::vector<std::vector<double>>& rows) {
  DenseMatrix m;
  m.rows = rows.size();
  m.cols = rows.empty() ? 0 : rows[0].size();
  for (const auto& r : rows) {
    if (r.size() != m.cols) throw ValidationError("ragged matrix");
    m.values.insert(m.values.end(), r.begin(), r.end());
  }
  validate(m);
  return m;
}

py::dict score_dict(const SmoothnessScore& s) {
  py::dict d;
  d["mu"] = s.mu;
  d["dominant_label"] = s.dominant_label;
  d["dominant_count"] = s.dominant_count;
  d["n"] = s.n;
  d["neg_entropy"] = s.neg_entropy;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Manifold-smoothness measures and the evaluation protocol";
  m.attr("__version__") = kToolVersion;

  static py::exception<Error> error(m, "Error", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, (std::string(e.category()) + ": " + e.what()).c_str());
    }
  });

  m.def(
      "smoothness",
      [](const std::vector<ClassIndex>& predictions, int num_classes) {
        return score_dict(smoothness(predictions, num_classes));
      },
      py::arg("predictions"), py::arg("num_classes"),
      "Smoothness of one neighborhood: mu, dominant label and negative entropy.");

  m.def(
      "decision_distribution",
      [](const std::vector<ClassIndex>& predictions, int num_classes) {
        return decision_distribution(predictions, num_classes).probs;
      },
      py::arg("predictions"), py::arg("num_classes"));

  m.def(
      "dataset_smoothness",
      [](const std::filesystem::path& log_path, const std::string& variant) {
        return dataset_smoothness(parse_prediction_log(log_path), variant_of(variant));
      },
      py::arg("log_path"), py::arg("variant") = "majority", "Mean smoothness of a prediction log file.");

  m.def(
      "kendall_tau",
      [](std::vector<double> xs, std::vector<double> ys, const std::string& variant) {
        return kendall_tau(PairedSample(std::move(xs), std::move(ys)), tau_of(variant));
      },
      py::arg("xs"), py::arg("ys"), py::arg("variant") = "b");

  m.def(
      "ols_fit",
      [](std::vector<double> xs, std::vector<double> ys) {
        const auto f = ols_fit(PairedSample(std::move(xs), std::move(ys)));
        return py::make_tuple(f.a, f.b);
      },
      py::arg("xs"), py::arg("ys"), "Least-squares (slope, intercept).");

  m.def(
      "r_squared", [](const std::vector<double>& p, const std::vector<double>& a) { return r_squared(p, a); },
      py::arg("predicted"), py::arg("actual"));
  m.def(
      "mean_absolute_error",
      [](const std::vector<double>& p, const std::vector<double>& a) { return mean_absolute_error(p, a); },
      py::arg("predicted"), py::arg("actual"));

  m.def(
      "spectral_norm", [](const std::vector<std::vector<double>>& rows) { return spectral_norm(to_matrix(rows)); },
      py::arg("matrix"));

  m.def(
      "atc_threshold",
      [](const std::vector<double>& scores, const std::vector<bool>& correct) {
        return atc_fit(scores, correct, ScoreKind::max_confidence).threshold;
      },
      py::arg("scores"), py::arg("correct"));

  m.def(
      "atc_predict",
      [](const std::vector<double>& validation_scores, const std::vector<bool>& correct,
         const std::vector<double>& test_scores) {
        const auto t = atc_fit(validation_scores, correct, ScoreKind::max_confidence);
        return atc_predict(ScoreColumn{ScoreKind::max_confidence, test_scores}, t);
      },
      py::arg("validation_scores"), py::arg("correct"), py::arg("test_scores"),
      "Fit a threshold on validation scores and predict accuracy on test scores.");

  m.def(
      "default_experiment", [](std::uint64_t seed) { return experiment_config_json(default_experiment(seed)); },
      py::arg("seed") = 7, "The built-in benchmark configuration as JSON text.");

  m.def(
      "synth",
      [](const std::string& config_json, const std::filesystem::path& out_dir) {
        const auto config = parse_experiment_config(config_json);
        const auto text = experiment_config_json(config);
        PoolStats stats;
        {
          py::gil_scoped_release release;
          stats = run_pool_to_directory(config, out_dir, {kToolVersion, hash_text(text), config.seed});
          write_file_atomic(out_dir / "experiment.json", text);
        }
        py::dict d;
        d["trained"] = stats.trained;
        d["converged"] = stats.converged;
        d["diverged"] = stats.diverged;
        return d;
      },
      py::arg("config_json"), py::arg("out_dir"), "Train a pool and write its logs under out_dir.");

  m.def(
      "evaluate",
      [](const std::string& scores_csv, const std::string& accuracies_csv, const std::string& manifest_jsonl,
         const std::string& tau) {
        const auto manifest = parse_manifest_text(manifest_jsonl);
        const auto matrix = build_matrix(manifest, parse_score_csv(scores_csv), parse_accuracy_csv(accuracies_csv));
        Provenance prov{kToolVersion, hash_text(scores_csv + accuracies_csv + manifest_jsonl), 0};
        if (manifest.provenance) prov.seed = manifest.provenance->seed;
        return report_json(build_report(matrix, tau_of(tau)), prov);
      },
      py::arg("scores_csv"), py::arg("accuracies_csv"), py::arg("manifest_jsonl"), py::arg("tau") = "b",
      "Metric report JSON from CSV and manifest text.");
}
