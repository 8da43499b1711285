#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "manismooth/baselines.hpp"
#include "manismooth/ingest.hpp"
#include "manismooth/protocol.hpp"
#include "manismooth/smoothness.hpp"
#include "manismooth/synthbench.hpp"

namespace manismooth {

inline constexpr const char* kToolVersion = "0.1.0";

// FNV-1a, printed as 16 hex digits.
std::string hash_text(const std::string& text);

struct ScoreRow {
  std::string model_id;
  std::string train_domain;
  std::string test_domain;
  std::string measure;
  double value = 0.0;

  bool operator==(const ScoreRow&) const = default;
};

struct AccuracyRow {
  std::string model_id;
  std::string test_domain;
  double accuracy = 0.0;

  bool operator==(const AccuracyRow&) const = default;
};

// "ms_<tag>" for the majority variant, "mse_<tag>" for negative entropy.
std::string smoothness_measure_name(SmoothnessVariant variant, const std::string& tag);

// One row per requested variant. `train_domain` may be empty when unknown.
std::vector<ScoreRow> smoothness_rows(const NeighborhoodPredictionLog& log, const std::string& train_domain,
                                      const std::vector<SmoothnessVariant>& variants);

// atc_mc / atc_ne for every test log, thresholds fitted on `validation`.
std::vector<ScoreRow> atc_rows(const ScoreLog& validation, const std::vector<ScoreLog>& tests,
                               const std::string& train_domain);

// norm_spectral / norm_frobenius (log of the layer products), repeated for each test domain.
std::vector<ScoreRow> norm_rows(const WeightDump& weights, const std::string& train_domain,
                                const std::vector<std::string>& test_domains);

// Rows sorted by their key columns, duplicates rejected.
void sort_rows(std::vector<ScoreRow>& rows);
void sort_rows(std::vector<AccuracyRow>& rows);

// CSV files start with a '#' comment line carrying the provenance, then the
// column header. Reals are written with 17 significant digits.
std::string format_score_csv(const std::vector<ScoreRow>& rows, const Provenance& provenance);
std::string format_accuracy_csv(const std::vector<AccuracyRow>& rows, const Provenance& provenance);
std::vector<ScoreRow> parse_score_csv(const std::string& text);
std::vector<AccuracyRow> parse_accuracy_csv(const std::string& text);
std::string provenance_comment(const Provenance& provenance);

enum class CsvKind { scores, accuracies };
// Decided by the header row.
CsvKind detect_csv_kind(const std::string& text);

// Training domains are those named by converged models; every other domain
// seen in the accuracies is test-only.
EvaluationMatrix build_matrix(const Manifest& manifest, const std::vector<ScoreRow>& scores,
                              const std::vector<AccuracyRow>& accuracies);

// Receives pool output and keeps only derived rows, plus the logs the
// caller asks to retain. Validation score logs must arrive before the test
// logs of the same model, which run_pool guarantees. Train domains are filled
// in when the manifest arrives.
class ScoringSink : public PoolSink {
 public:
  explicit ScoringSink(std::vector<SmoothnessVariant> variants = {SmoothnessVariant::majority,
                                                                  SmoothnessVariant::neg_entropy},
                       std::function<bool(const NeighborhoodPredictionLog&)> retain = {});

  void prediction_log(NeighborhoodPredictionLog log) override;
  void score_log(ScoreLog log) override;
  void weights(WeightDump dump) override;
  void manifest(Manifest manifest) override;

  // Sorted copies.
  std::vector<ScoreRow> scores() const;
  std::vector<AccuracyRow> accuracies() const;
  const Manifest& manifest_out() const { return manifest_; }
  // Retained logs, sorted by (model, domain, tag).
  std::vector<NeighborhoodPredictionLog> retained() const;

 private:
  std::vector<SmoothnessVariant> variants_;
  std::function<bool(const NeighborhoodPredictionLog&)> retain_;
  mutable std::mutex mutex_;
  std::vector<ScoreRow> scores_;
  std::vector<AccuracyRow> accuracies_;
  std::map<std::string, ScoreLog> validation_;
  std::vector<NeighborhoodPredictionLog> retained_;
  Manifest manifest_;
};

struct AblationRow {
  double value = 0.0;
  std::size_t repeats = 0;          // rows averaged into tau
  std::optional<double> tau;        // mean over repeats with a defined tau
  std::optional<double> tau_std;    // population std over those repeats
  std::size_t n_models = 0;
  std::string status = "ok";
};

struct AblationInput {
  std::vector<ModelRecord> models;  // converged only
  std::string test_domain;
  std::map<std::string, double> accuracy;  // model_id -> accuracy on test_domain
};

// Micro tau on one test domain, pooling models not trained on it.
std::optional<double> micro_tau_from_scores(const AblationInput& input, const std::map<std::string, double>& scores,
                                            TauVariant tau, std::size_t* n_models = nullptr);

// logs: one per model, same neighborhood tag. Subsamples of one repeat share a
// seed across models so every model is scored on the same examples.
std::vector<AblationRow> ablate_dataset_size(const AblationInput& input,
                                             const std::vector<NeighborhoodPredictionLog>& logs,
                                             const std::vector<std::size_t>& sizes, std::size_t repeats,
                                             std::uint64_t seed, SmoothnessVariant variant, TauVariant tau);

std::vector<AblationRow> ablate_n_samples(const AblationInput& input,
                                          const std::vector<NeighborhoodPredictionLog>& logs,
                                          const std::vector<std::size_t>& counts, SmoothnessVariant variant,
                                          TauVariant tau);

// One score map (model -> smoothness) per sweep value.
std::vector<AblationRow> ablate_from_scores(const AblationInput& input,
                                            const std::vector<std::pair<double, std::map<std::string, double>>>& sweep,
                                            TauVariant tau);

std::string format_ablation_csv(const std::string& kind, const std::vector<AblationRow>& rows,
                                const Provenance& provenance);

// Neighborhood tags used for the size sweep encode the size: "<prefix><size_r>".
std::string sweep_tag(const std::string& prefix, double size_r);
std::optional<double> parse_sweep_tag(const std::string& prefix, const std::string& tag);

// Stable key order, nulls for undefined values.
std::string report_json(const MetricReport& report, const Provenance& provenance);
std::string pairs_csv(const MetricReport& report, const Provenance& provenance);
std::string domains_csv(const MetricReport& report, const Provenance& provenance);
std::string models_csv(const MetricReport& report, const Provenance& provenance);
// Fixed-width text table of the headline metrics read back from report JSON.
std::string summary_table(const std::string& report_json_text);

// JSON experiment file <-> config. Unknown keys are rejected.
ExperimentConfig parse_experiment_config(const std::string& json_text);
std::string experiment_config_json(const ExperimentConfig& config);

// The configuration used by the end-to-end benchmark: five training domains
// 20 degrees apart, a far-shift domain at 140 degrees, a 36-point grid, and
// the ablation sweeps on the first domain.
ExperimentConfig default_experiment(std::uint64_t seed = 7);

// Sizes of the neighborhood-size sweep (radians).
std::vector<double> default_size_sweep();

}  // namespace manismooth
