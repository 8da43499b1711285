#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "manismooth/ingest.hpp"
#include "manismooth/stats.hpp"

namespace manismooth {

struct DomainInfo {
  std::string id;
  bool is_training = false;
};

// Measure values and accuracies for a pool of converged models over a set of
// test domains. Missing cells are NaN internally and surface as nullopt.
class EvaluationMatrix {
 public:
  // Records with converged == false are dropped.
  EvaluationMatrix(std::vector<ModelRecord> models, std::vector<DomainInfo> domains);

  void set_measure(const std::string& model_id, const std::string& domain, const std::string& measure, double value);
  void set_accuracy(const std::string& model_id, const std::string& domain, double value);

  std::optional<double> measure(std::size_t model, std::size_t domain, const std::string& measure) const;
  std::optional<double> accuracy(std::size_t model, std::size_t domain) const;

  const std::vector<ModelRecord>& models() const { return models_; }
  const std::vector<DomainInfo>& domains() const { return domains_; }
  std::vector<std::string> measure_names() const;
  std::vector<std::string> archs() const;  // sorted, distinct
  std::optional<std::size_t> domain_index(const std::string& id) const;
  std::optional<std::size_t> model_index(const std::string& id) const;
  std::size_t train_domain_index(std::size_t model) const { return train_domain_[model]; }

  // Every measured (model, domain) has an accuracy; throws ValidationError listing offenders.
  void check_complete() const;

 private:
  std::size_t cell(std::size_t model, std::size_t domain) const { return model * domains_.size() + domain; }
  std::size_t require_model(const std::string& id) const;
  std::size_t require_domain(const std::string& id) const;

  std::vector<ModelRecord> models_;
  std::vector<DomainInfo> domains_;
  std::vector<std::size_t> train_domain_;
  std::map<std::string, std::size_t> model_ids_;
  std::map<std::string, std::size_t> domain_ids_;
  std::map<std::string, std::vector<double>> measures_;
  std::vector<double> accuracies_;
};

// ATC-style measures are accuracy predictions and are scored directly instead
// of through a fitted linear map.
bool is_direct_predictor(const std::string& measure);

struct ProtocolOptions {
  TauVariant tau = TauVariant::b;
  // Restrict single-architecture metrics to this arch tag (all models when unset).
  std::optional<std::string> arch;
};

struct TransferFit {
  std::optional<LinearFit> fit;
  std::size_t pool_size = 0;
  std::string skip_reason;  // empty when fit is set
};

// Fits g = a*mu + b on models trained on neither `train_domain` nor `test_domain`,
// evaluated on `test_domain`.
TransferFit fit_transfer_model(const EvaluationMatrix& m, const std::string& measure, const std::string& train_domain,
                               const std::string& test_domain, const ProtocolOptions& options = {});

struct PairRow {
  std::string train_domain;
  std::string test_domain;
  std::size_t pool_size = 0;
  std::size_t n_models = 0;
  std::optional<LinearFit> fit;
  std::optional<double> r2;
  std::optional<double> mae_pct;
  std::string status = "ok";
};

struct R2MaeResult {
  std::optional<double> r2;       // mean over pairs with a defined R^2
  std::optional<double> mae_pct;  // mean over pairs with a defined MAE, in percentage points
  std::vector<PairRow> pairs;
  std::size_t skipped = 0;
};

// One row per group a tau was computed for: a domain, a (train, test) pair, or a model.
struct TauRow {
  std::string key;
  std::string key2;
  std::string arch;
  std::size_t n = 0;
  std::optional<double> tau;
  std::string status = "ok";
};

struct TauResult {
  std::optional<double> value;  // unweighted mean of the rows with a defined tau
  std::vector<TauRow> rows;
  std::size_t skipped = 0;
};

R2MaeResult evaluate_r2_mae(const EvaluationMatrix& m, const std::string& measure, const ProtocolOptions& options = {});
TauResult id_tau(const EvaluationMatrix& m, const std::string& measure, const ProtocolOptions& options = {});
TauResult macro_tau(const EvaluationMatrix& m, const std::string& measure, const ProtocolOptions& options = {});
TauResult micro_tau(const EvaluationMatrix& m, const std::string& measure, const ProtocolOptions& options = {});
// Micro tau over pools spanning every architecture. Absent (nullopt) with fewer than two arch tags.
std::optional<TauResult> arch_tau(const EvaluationMatrix& m, const std::string& measure,
                                  const ProtocolOptions& options = {});

struct CrossDomainResult {
  std::map<std::string, double> per_arch;  // arch -> mean per-model tau
  std::vector<TauRow> rows;                // one per model
  std::size_t skipped = 0;
};

// Per-model tau across the model's out-of-domain test domains.
CrossDomainResult cross_domain_tau(const EvaluationMatrix& m, const std::string& measure,
                                   const ProtocolOptions& options = {});

// Micro tau restricted to one test domain (the ablation metric).
std::optional<double> micro_tau_on(const EvaluationMatrix& m, const std::string& measure, const std::string& test_domain,
                                   const ProtocolOptions& options = {});

struct ArchMetrics {
  std::string arch;
  R2MaeResult r2_mae;
  TauResult macro;
  TauResult micro;
  TauResult id;
  std::optional<double> cross_domain_tau;
};

struct MeasureReport {
  std::string measure;
  std::vector<ArchMetrics> per_arch;  // sorted by arch
  std::optional<TauResult> arch;
  CrossDomainResult cross_domain;
};

struct MetricReport {
  TauVariant tau = TauVariant::b;
  std::vector<MeasureReport> measures;  // sorted by measure name
};

// Evaluates every measure in the matrix. Measures are processed on up to
// `threads` workers; the result does not depend on the thread count.
MetricReport build_report(const EvaluationMatrix& m, TauVariant tau = TauVariant::b, unsigned threads = 1);

}  // namespace manismooth
