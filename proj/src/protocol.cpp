#include "manismooth/protocol.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <set>

#include "manismooth/error.hpp"
#include "manismooth/parallel.hpp"

namespace manismooth {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

std::optional<double> mean_of(const std::vector<TauRow>& rows) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.tau) {
      total += *r.tau;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

bool arch_matches(const ModelRecord& r, const ProtocolOptions& o) { return !o.arch || r.arch == *o.arch; }

struct Points {
  std::vector<double> mu;
  std::vector<double> g;
};

// (mu, g) for the given models on domain `o`; models without both values are left out.
Points collect(const EvaluationMatrix& m, const std::string& measure, const std::vector<std::size_t>& models,
               std::size_t o) {
  Points p;
  for (std::size_t k : models) {
    auto mu = m.measure(k, o, measure);
    auto g = m.accuracy(k, o);
    if (mu && g) {
      p.mu.push_back(*mu);
      p.g.push_back(*g);
    }
  }
  return p;
}

TauRow tau_row(std::string key, std::string key2, std::string arch, const Points& p, TauVariant variant) {
  TauRow row{std::move(key), std::move(key2), std::move(arch), p.mu.size(), std::nullopt, "ok"};
  if (p.mu.size() < 2) {
    row.status = "skipped: fewer than 2 models";
    return row;
  }
  try {
    row.tau = kendall_tau(PairedSample(p.mu, p.g), variant);
  } catch (const UndefinedError&) {
    row.status = "skipped: all ties";
  }
  return row;
}

TauResult finish(std::vector<TauRow> rows) {
  TauResult r;
  r.skipped = static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const TauRow& t) { return !t.tau; }));
  r.value = mean_of(rows);
  r.rows = std::move(rows);
  return r;
}

std::string arch_label(const ProtocolOptions& o) { return o.arch ? *o.arch : "*"; }

}  // namespace

EvaluationMatrix::EvaluationMatrix(std::vector<ModelRecord> models, std::vector<DomainInfo> domains)
    : domains_(std::move(domains)) {
  for (std::size_t d = 0; d < domains_.size(); ++d) {
    if (!domain_ids_.emplace(domains_[d].id, d).second) {
      throw ValidationError("duplicate domain '" + domains_[d].id + "'");
    }
  }
  for (auto& r : models) {
    if (!r.converged) continue;
    auto it = domain_ids_.find(r.train_domain);
    if (it == domain_ids_.end()) {
      throw ValidationError("model '" + r.model_id + "' trained on unknown domain '" + r.train_domain + "'");
    }
    if (!model_ids_.emplace(r.model_id, models_.size()).second) {
      throw ValidationError("duplicate model_id '" + r.model_id + "'");
    }
    train_domain_.push_back(it->second);
    models_.push_back(std::move(r));
  }
  accuracies_.assign(models_.size() * domains_.size(), kMissing);
}

std::size_t EvaluationMatrix::require_model(const std::string& id) const {
  auto it = model_ids_.find(id);
  if (it == model_ids_.end()) throw ValidationError("unknown or unconverged model '" + id + "'");
  return it->second;
}

std::size_t EvaluationMatrix::require_domain(const std::string& id) const {
  auto it = domain_ids_.find(id);
  if (it == domain_ids_.end()) throw ValidationError("unknown domain '" + id + "'");
  return it->second;
}

void EvaluationMatrix::set_measure(const std::string& model_id, const std::string& domain, const std::string& measure,
                                   double value) {
  if (!std::isfinite(value)) throw ValidationError("non-finite value for measure '" + measure + "'");
  const auto c = cell(require_model(model_id), require_domain(domain));
  auto [it, inserted] = measures_.try_emplace(measure);
  if (inserted) it->second.assign(models_.size() * domains_.size(), kMissing);
  it->second[c] = value;
}

void EvaluationMatrix::set_accuracy(const std::string& model_id, const std::string& domain, double value) {
  if (!(value >= 0.0 && value <= 1.0)) throw ValidationError("accuracy outside [0, 1] for model '" + model_id + "'");
  accuracies_[cell(require_model(model_id), require_domain(domain))] = value;
}

std::optional<double> EvaluationMatrix::measure(std::size_t model, std::size_t domain, const std::string& measure) const {
  auto it = measures_.find(measure);
  if (it == measures_.end()) return std::nullopt;
  const double v = it->second[cell(model, domain)];
  if (std::isnan(v)) return std::nullopt;
  return v;
}

std::optional<double> EvaluationMatrix::accuracy(std::size_t model, std::size_t domain) const {
  const double v = accuracies_[cell(model, domain)];
  if (std::isnan(v)) return std::nullopt;
  return v;
}

std::vector<std::string> EvaluationMatrix::measure_names() const {
  std::vector<std::string> names;
  for (const auto& [name, _] : measures_) names.push_back(name);
  return names;
}

std::vector<std::string> EvaluationMatrix::archs() const {
  std::set<std::string> s;
  for (const auto& r : models_) s.insert(r.arch);
  return {s.begin(), s.end()};
}

std::optional<std::size_t> EvaluationMatrix::domain_index(const std::string& id) const {
  auto it = domain_ids_.find(id);
  if (it == domain_ids_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> EvaluationMatrix::model_index(const std::string& id) const {
  auto it = model_ids_.find(id);
  if (it == model_ids_.end()) return std::nullopt;
  return it->second;
}

void EvaluationMatrix::check_complete() const {
  std::vector<std::string> missing;
  for (const auto& [name, values] : measures_) {
    for (std::size_t k = 0; k < models_.size(); ++k) {
      for (std::size_t d = 0; d < domains_.size(); ++d) {
        if (!std::isnan(values[cell(k, d)]) && std::isnan(accuracies_[cell(k, d)])) {
          missing.push_back(models_[k].model_id + "/" + domains_[d].id);
        }
      }
    }
  }
  if (missing.empty()) return;
  std::sort(missing.begin(), missing.end());
  missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
  std::string msg = "missing accuracy for scored (model, test_domain) pairs:";
  for (const auto& k : missing) msg += " " + k;
  throw ValidationError(msg);
}

bool is_direct_predictor(const std::string& measure) { return measure.rfind("atc_", 0) == 0; }

namespace {

std::vector<std::size_t> models_where(const EvaluationMatrix& m, const ProtocolOptions& o, auto pred) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < m.models().size(); ++k) {
    if (arch_matches(m.models()[k], o) && pred(k)) out.push_back(k);
  }
  return out;
}

TransferFit fit_transfer(const EvaluationMatrix& m, const std::string& measure, std::size_t i, std::size_t o,
                         const ProtocolOptions& options) {
  const auto pool =
      models_where(m, options, [&](std::size_t k) { return m.train_domain_index(k) != i && m.train_domain_index(k) != o; });
  const Points p = collect(m, measure, pool, o);
  TransferFit t;
  t.pool_size = p.mu.size();
  if (p.mu.size() < 2) {
    t.skip_reason = "skipped: transfer pool has fewer than 2 models";
    return t;
  }
  try {
    t.fit = ols_fit(PairedSample(p.mu, p.g));
  } catch (const UndefinedError&) {
    t.skip_reason = "skipped: transfer pool has constant measure";
  }
  return t;
}

}  // namespace

TransferFit fit_transfer_model(const EvaluationMatrix& m, const std::string& measure, const std::string& train_domain,
                               const std::string& test_domain, const ProtocolOptions& options) {
  auto i = m.domain_index(train_domain);
  auto o = m.domain_index(test_domain);
  if (!i || !o) throw ValidationError("unknown domain in transfer fit");
  if (*i == *o) throw ValidationError("transfer fit needs distinct train and test domains");
  return fit_transfer(m, measure, *i, *o, options);
}

R2MaeResult evaluate_r2_mae(const EvaluationMatrix& m, const std::string& measure, const ProtocolOptions& options) {
  R2MaeResult result;
  const bool direct = is_direct_predictor(measure);
  double r2_total = 0.0, mae_total = 0.0;
  std::size_t r2_n = 0, mae_n = 0;
  for (std::size_t i = 0; i < m.domains().size(); ++i) {
    if (!m.domains()[i].is_training) continue;
    const auto own = models_where(m, options, [&](std::size_t k) { return m.train_domain_index(k) == i; });
    if (own.empty()) continue;
    for (std::size_t o = 0; o < m.domains().size(); ++o) {
      if (o == i) continue;
      PairRow row;
      row.train_domain = m.domains()[i].id;
      row.test_domain = m.domains()[o].id;
      const Points p = collect(m, measure, own, o);
      row.n_models = p.mu.size();
      if (p.mu.empty()) {
        row.status = "skipped: no evaluated models";
      } else {
        std::vector<double> predicted = p.mu;
        if (!direct) {
          const TransferFit t = fit_transfer(m, measure, i, o, options);
          row.pool_size = t.pool_size;
          row.fit = t.fit;
          if (!t.fit) {
            row.status = t.skip_reason;
          } else {
            for (auto& x : predicted) x = t.fit->predict(x);
          }
        }
        if (row.status == "ok") {
          row.mae_pct = 100.0 * mean_absolute_error(predicted, p.g);
          if (p.g.size() < 2) {
            row.status = "partial: R^2 needs 2 models";
          } else {
            try {
              row.r2 = r_squared(predicted, p.g);
            } catch (const UndefinedError&) {
              row.status = "partial: constant accuracy, R^2 undefined";
            }
          }
        }
      }
      if (row.r2) {
        r2_total += *row.r2;
        ++r2_n;
      }
      if (row.mae_pct) {
        mae_total += *row.mae_pct;
        ++mae_n;
      }
      if (!row.r2) ++result.skipped;
      result.pairs.push_back(std::move(row));
    }
  }
  if (r2_n) result.r2 = r2_total / static_cast<double>(r2_n);
  if (mae_n) result.mae_pct = mae_total / static_cast<double>(mae_n);
  return result;
}

TauResult id_tau(const EvaluationMatrix& m, const std::string& measure, const ProtocolOptions& options) {
  std::vector<TauRow> rows;
  for (std::size_t i = 0; i < m.domains().size(); ++i) {
    if (!m.domains()[i].is_training) continue;
    const auto own = models_where(m, options, [&](std::size_t k) { return m.train_domain_index(k) == i; });
    if (own.empty()) continue;
    rows.push_back(tau_row(m.domains()[i].id, m.domains()[i].id, arch_label(options), collect(m, measure, own, i),
                           options.tau));
  }
  return finish(std::move(rows));
}

TauResult macro_tau(const EvaluationMatrix& m, const std::string& measure, const ProtocolOptions& options) {
  std::vector<TauRow> rows;
  for (std::size_t i = 0; i < m.domains().size(); ++i) {
    if (!m.domains()[i].is_training) continue;
    const auto own = models_where(m, options, [&](std::size_t k) { return m.train_domain_index(k) == i; });
    if (own.empty()) continue;
    for (std::size_t o = 0; o < m.domains().size(); ++o) {
      if (o == i) continue;
      rows.push_back(tau_row(m.domains()[i].id, m.domains()[o].id, arch_label(options), collect(m, measure, own, o),
                             options.tau));
    }
  }
  return finish(std::move(rows));
}

namespace {
TauRow micro_row(const EvaluationMatrix& m, const std::string& measure, std::size_t o, const ProtocolOptions& options) {
  const auto pool = models_where(m, options, [&](std::size_t k) { return m.train_domain_index(k) != o; });
  return tau_row(m.domains()[o].id, "", arch_label(options), collect(m, measure, pool, o), options.tau);
}
}  // namespace

TauResult micro_tau(const EvaluationMatrix& m, const std::string& measure, const ProtocolOptions& options) {
  std::vector<TauRow> rows;
  for (std::size_t o = 0; o < m.domains().size(); ++o) {
    auto row = micro_row(m, measure, o, options);
    if (row.n == 0) continue;  // nobody evaluated here
    rows.push_back(std::move(row));
  }
  return finish(std::move(rows));
}

std::optional<double> micro_tau_on(const EvaluationMatrix& m, const std::string& measure, const std::string& test_domain,
                                   const ProtocolOptions& options) {
  auto o = m.domain_index(test_domain);
  if (!o) throw ValidationError("unknown domain '" + test_domain + "'");
  return micro_row(m, measure, *o, options).tau;
}

std::optional<TauResult> arch_tau(const EvaluationMatrix& m, const std::string& measure, const ProtocolOptions& options) {
  if (m.archs().size() < 2) return std::nullopt;
  ProtocolOptions all = options;
  all.arch.reset();
  return micro_tau(m, measure, all);
}

CrossDomainResult cross_domain_tau(const EvaluationMatrix& m, const std::string& measure,
                                   const ProtocolOptions& options) {
  CrossDomainResult result;
  std::map<std::string, std::pair<double, std::size_t>> sums;
  for (std::size_t k = 0; k < m.models().size(); ++k) {
    const auto& model = m.models()[k];
    if (!arch_matches(model, options)) continue;
    Points p;
    for (std::size_t o = 0; o < m.domains().size(); ++o) {
      if (o == m.train_domain_index(k)) continue;
      auto mu = m.measure(k, o, measure);
      auto g = m.accuracy(k, o);
      if (mu && g) {
        p.mu.push_back(*mu);
        p.g.push_back(*g);
      }
    }
    auto row = tau_row(model.model_id, model.train_domain, model.arch, p, options.tau);
    if (row.tau) {
      auto& s = sums[model.arch];
      s.first += *row.tau;
      ++s.second;
    } else {
      ++result.skipped;
    }
    result.rows.push_back(std::move(row));
  }
  for (const auto& [arch, s] : sums) result.per_arch[arch] = s.first / static_cast<double>(s.second);
  return result;
}

MetricReport build_report(const EvaluationMatrix& m, TauVariant tau, unsigned threads) {
  m.check_complete();
  MetricReport report;
  report.tau = tau;
  const auto names = m.measure_names();
  const auto archs = m.archs();
  report.measures.resize(names.size());

  auto evaluate = [&](std::size_t idx) {
    MeasureReport mr;
    mr.measure = names[idx];
    ProtocolOptions all{tau, std::nullopt};
    mr.cross_domain = cross_domain_tau(m, mr.measure, all);
    for (const auto& arch : archs) {
      ProtocolOptions o{tau, arch};
      ArchMetrics a;
      a.arch = arch;
      a.r2_mae = evaluate_r2_mae(m, mr.measure, o);
      a.macro = macro_tau(m, mr.measure, o);
      a.micro = micro_tau(m, mr.measure, o);
      a.id = id_tau(m, mr.measure, o);
      if (auto it = mr.cross_domain.per_arch.find(arch); it != mr.cross_domain.per_arch.end()) {
        a.cross_domain_tau = it->second;
      }
      mr.per_arch.push_back(std::move(a));
    }
    mr.arch = arch_tau(m, mr.measure, all);
    report.measures[idx] = std::move(mr);
  };

  parallel_for(names.size(), threads, evaluate);
  return report;
}

}  // namespace manismooth
