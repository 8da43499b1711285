#include "manismooth/pipeline.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "json.hpp"
#include "manismooth/error.hpp"

namespace manismooth {

using ojson = nlohmann::ordered_json;

namespace {

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") != std::string::npos) {
    throw ValidationError("CSV field '" + s + "' contains a comma, quote or newline");
  }
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_real(const std::string& s, std::size_t line) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("not a number: '" + s + "'", line);
  }
}

// Yields (line number, fields) of the data rows after the header.
template <typename Fn>
void for_each_csv_row(const std::string& text, const std::vector<std::string>& header, Fn&& fn) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool seen_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_line(line);
    if (!seen_header) {
      if (fields != header) throw ParseError("unexpected CSV header '" + line + "'", lineno);
      seen_header = true;
      continue;
    }
    if (fields.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " fields", lineno);
    }
    fn(lineno, fields);
  }
  if (!seen_header) throw ParseError("missing CSV header", lineno);
}

const std::vector<std::string> kScoreHeader = {"model_id", "train_domain", "test_domain", "measure", "value"};
const std::vector<std::string> kAccuracyHeader = {"model_id", "test_domain", "accuracy"};

ojson opt(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

std::string opt_csv(const std::optional<double>& v) { return v ? format_real(*v) : ""; }

ojson provenance_json(const Provenance& p) {
  ojson j;
  j["tool_version"] = p.tool_version;
  j["config_hash"] = p.config_hash;
  j["seed"] = p.seed;
  return j;
}

}  // namespace

std::string hash_text(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

std::string smoothness_measure_name(SmoothnessVariant variant, const std::string& tag) {
  return (variant == SmoothnessVariant::majority ? "ms_" : "mse_") + tag;
}

std::vector<ScoreRow> smoothness_rows(const NeighborhoodPredictionLog& log, const std::string& train_domain,
                                      const std::vector<SmoothnessVariant>& variants) {
  std::vector<ScoreRow> rows;
  for (auto v : variants) {
    rows.push_back({log.model_id, train_domain, log.test_domain, smoothness_measure_name(v, log.neighborhood),
                    dataset_smoothness(log, v)});
  }
  return rows;
}

std::vector<ScoreRow> atc_rows(const ScoreLog& validation, const std::vector<ScoreLog>& tests,
                               const std::string& train_domain) {
  if (validation.split != Split::validation) throw ValidationError("ATC thresholds need a validation split");
  const auto mc = atc_fit(validation, ScoreKind::max_confidence);
  const auto ne = atc_fit(validation, ScoreKind::neg_entropy);
  std::vector<ScoreRow> rows;
  for (const auto& t : tests) {
    rows.push_back({t.model_id, train_domain, t.domain, "atc_mc", atc_predict(t, mc)});
    rows.push_back({t.model_id, train_domain, t.domain, "atc_ne", atc_predict(t, ne)});
  }
  return rows;
}

std::vector<ScoreRow> norm_rows(const WeightDump& weights, const std::string& train_domain,
                                const std::vector<std::string>& test_domains) {
  const auto n = norm_measures(weights);
  std::vector<ScoreRow> rows;
  for (const auto& d : test_domains) {
    rows.push_back({weights.model_id, train_domain, d, "norm_spectral", n.log_spectral});
    rows.push_back({weights.model_id, train_domain, d, "norm_frobenius", n.log_frobenius});
  }
  return rows;
}

void sort_rows(std::vector<ScoreRow>& rows) {
  auto key = [](const ScoreRow& r) { return std::tie(r.model_id, r.test_domain, r.measure); };
  std::sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) { return key(a) < key(b); });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (key(rows[i - 1]) == key(rows[i])) {
      throw ValidationError("duplicate score for (" + rows[i].model_id + ", " + rows[i].test_domain + ", " +
                            rows[i].measure + ")");
    }
  }
}

void sort_rows(std::vector<AccuracyRow>& rows) {
  auto key = [](const AccuracyRow& r) { return std::tie(r.model_id, r.test_domain); };
  std::sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) { return key(a) < key(b); });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (key(rows[i - 1]) == key(rows[i])) {
      throw ValidationError("duplicate accuracy for (" + rows[i].model_id + ", " + rows[i].test_domain + ")");
    }
  }
}

std::string provenance_comment(const Provenance& p) {
  return "# tool_version=" + p.tool_version + " config_hash=" + p.config_hash + " seed=" + std::to_string(p.seed) +
         "\n";
}

std::string format_score_csv(const std::vector<ScoreRow>& rows, const Provenance& provenance) {
  std::string out = provenance_comment(provenance);
  out += "model_id,train_domain,test_domain,measure,value\n";
  for (const auto& r : rows) {
    for (const auto* f : {&r.model_id, &r.train_domain, &r.test_domain, &r.measure}) check_field(*f);
    out += r.model_id + "," + r.train_domain + "," + r.test_domain + "," + r.measure + "," + format_real(r.value) + "\n";
  }
  return out;
}

std::string format_accuracy_csv(const std::vector<AccuracyRow>& rows, const Provenance& provenance) {
  std::string out = provenance_comment(provenance);
  out += "model_id,test_domain,accuracy\n";
  for (const auto& r : rows) {
    check_field(r.model_id);
    check_field(r.test_domain);
    out += r.model_id + "," + r.test_domain + "," + format_real(r.accuracy) + "\n";
  }
  return out;
}

std::vector<ScoreRow> parse_score_csv(const std::string& text) {
  std::vector<ScoreRow> rows;
  for_each_csv_row(text, kScoreHeader, [&](std::size_t line, const std::vector<std::string>& f) {
    rows.push_back({f[0], f[1], f[2], f[3], parse_real(f[4], line)});
  });
  return rows;
}

std::vector<AccuracyRow> parse_accuracy_csv(const std::string& text) {
  std::vector<AccuracyRow> rows;
  for_each_csv_row(text, kAccuracyHeader, [&](std::size_t line, const std::vector<std::string>& f) {
    const double a = parse_real(f[2], line);
    if (!(a >= 0.0 && a <= 1.0)) throw ParseError("accuracy outside [0, 1]", line);
    rows.push_back({f[0], f[1], a});
  });
  return rows;
}

CsvKind detect_csv_kind(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_line(line);
    if (fields == kScoreHeader) return CsvKind::scores;
    if (fields == kAccuracyHeader) return CsvKind::accuracies;
    break;
  }
  throw ParseError("not a score or accuracy CSV", 0);
}

EvaluationMatrix build_matrix(const Manifest& manifest, const std::vector<ScoreRow>& scores,
                              const std::vector<AccuracyRow>& accuracies) {
  const auto models = converged_models(manifest);
  std::set<std::string> training;
  for (const auto& m : models) training.insert(m.train_domain);
  std::set<std::string> all = training;
  for (const auto& a : accuracies) all.insert(a.test_domain);
  for (const auto& s : scores) all.insert(s.test_domain);
  std::vector<DomainInfo> domains;
  for (const auto& d : all) domains.push_back({d, training.count(d) > 0});

  EvaluationMatrix m(models, domains);
  std::set<std::string> known;
  for (const auto& r : models) known.insert(r.model_id);
  for (const auto& s : scores) {
    if (!known.count(s.model_id)) continue;  // unconverged or not in the manifest
    m.set_measure(s.model_id, s.test_domain, s.measure, s.value);
  }
  for (const auto& a : accuracies) {
    if (!known.count(a.model_id)) continue;
    m.set_accuracy(a.model_id, a.test_domain, a.accuracy);
  }
  return m;
}

ScoringSink::ScoringSink(std::vector<SmoothnessVariant> variants,
                         std::function<bool(const NeighborhoodPredictionLog&)> retain)
    : variants_(std::move(variants)), retain_(std::move(retain)) {}

void ScoringSink::prediction_log(NeighborhoodPredictionLog log) {
  auto rows = smoothness_rows(log, "", variants_);
  const bool keep = retain_ && retain_(log);
  std::lock_guard lock(mutex_);
  scores_.insert(scores_.end(), rows.begin(), rows.end());
  if (keep) retained_.push_back(std::move(log));
}

void ScoringSink::score_log(ScoreLog log) {
  if (log.split == Split::validation) {
    std::lock_guard lock(mutex_);
    validation_[log.model_id] = std::move(log);
    return;
  }
  const double acc = compute_accuracy(log);
  ScoreLog validation;
  {
    std::lock_guard lock(mutex_);
    auto it = validation_.find(log.model_id);
    if (it == validation_.end()) throw ValidationError("no validation scores for model '" + log.model_id + "'");
    validation = it->second;
  }
  auto rows = atc_rows(validation, {log}, "");
  std::lock_guard lock(mutex_);
  accuracies_.push_back({log.model_id, log.domain, acc});
  scores_.insert(scores_.end(), rows.begin(), rows.end());
}

void ScoringSink::weights(WeightDump dump) {
  const auto n = norm_measures(dump);
  std::lock_guard lock(mutex_);
  // Norm rows are expanded per test domain once the domains are known.
  scores_.push_back({dump.model_id, "", "", "norm_spectral", n.log_spectral});
  scores_.push_back({dump.model_id, "", "", "norm_frobenius", n.log_frobenius});
}

void ScoringSink::manifest(Manifest manifest) {
  std::lock_guard lock(mutex_);
  manifest_ = std::move(manifest);
  std::map<std::string, std::string> train;
  for (const auto& r : manifest_.models) train[r.model_id] = r.train_domain;
  std::map<std::string, std::vector<std::string>> domains_of;
  for (const auto& a : accuracies_) domains_of[a.model_id].push_back(a.test_domain);

  std::vector<ScoreRow> expanded;
  expanded.reserve(scores_.size());
  for (auto& s : scores_) {
    s.train_domain = train[s.model_id];
    if (!s.test_domain.empty()) {
      expanded.push_back(std::move(s));
      continue;
    }
    for (const auto& d : domains_of[s.model_id]) {
      ScoreRow r = s;
      r.test_domain = d;
      expanded.push_back(std::move(r));
    }
  }
  scores_ = std::move(expanded);
  validation_.clear();
}

std::vector<ScoreRow> ScoringSink::scores() const {
  std::lock_guard lock(mutex_);
  auto rows = scores_;
  sort_rows(rows);
  return rows;
}

std::vector<AccuracyRow> ScoringSink::accuracies() const {
  std::lock_guard lock(mutex_);
  auto rows = accuracies_;
  sort_rows(rows);
  return rows;
}

std::vector<NeighborhoodPredictionLog> ScoringSink::retained() const {
  std::lock_guard lock(mutex_);
  auto logs = retained_;
  std::sort(logs.begin(), logs.end(), [](const auto& a, const auto& b) {
    return std::tie(a.model_id, a.test_domain, a.neighborhood) < std::tie(b.model_id, b.test_domain, b.neighborhood);
  });
  return logs;
}

std::optional<double> micro_tau_from_scores(const AblationInput& input, const std::map<std::string, double>& scores,
                                            TauVariant tau, std::size_t* n_models) {
  std::vector<double> mu, g;
  for (const auto& m : input.models) {
    if (m.train_domain == input.test_domain) continue;
    auto s = scores.find(m.model_id);
    auto a = input.accuracy.find(m.model_id);
    if (s == scores.end() || a == input.accuracy.end()) continue;
    mu.push_back(s->second);
    g.push_back(a->second);
  }
  if (n_models) *n_models = mu.size();
  if (mu.size() < 2) return std::nullopt;
  try {
    return kendall_tau(PairedSample(mu, g), tau);
  } catch (const UndefinedError&) {
    return std::nullopt;
  }
}

namespace {

AblationRow summarize(double value, const std::vector<std::optional<double>>& taus, std::size_t n_models) {
  AblationRow row;
  row.value = value;
  row.n_models = n_models;
  std::vector<double> ok;
  for (const auto& t : taus) {
    if (t) ok.push_back(*t);
  }
  row.repeats = ok.size();
  if (ok.empty()) {
    row.status = "skipped: tau undefined";
    return row;
  }
  double mean = 0.0;
  for (double t : ok) mean += t;
  mean /= static_cast<double>(ok.size());
  double var = 0.0;
  for (double t : ok) var += (t - mean) * (t - mean);
  row.tau = mean;
  row.tau_std = std::sqrt(var / static_cast<double>(ok.size()));
  if (ok.size() < taus.size()) row.status = "partial: tau undefined in some repeats";
  return row;
}

}  // namespace

std::vector<AblationRow> ablate_dataset_size(const AblationInput& input,
                                             const std::vector<NeighborhoodPredictionLog>& logs,
                                             const std::vector<std::size_t>& sizes, std::size_t repeats,
                                             std::uint64_t seed, SmoothnessVariant variant, TauVariant tau) {
  if (repeats < 1) throw ValidationError("repeats must be >= 1");
  std::size_t available = std::numeric_limits<std::size_t>::max();
  for (const auto& l : logs) available = std::min(available, l.examples.size());
  std::vector<AblationRow> rows;
  for (std::size_t size : sizes) {
    if (logs.empty() || size < 1 || size > available) {
      AblationRow row;
      row.value = static_cast<double>(size);
      row.status = "skipped: size exceeds available examples";
      rows.push_back(row);
      continue;
    }
    std::vector<std::optional<double>> taus;
    std::size_t n_models = 0;
    for (std::size_t r = 0; r < repeats; ++r) {
      std::map<std::string, double> scores;
      const auto s = derive_seed(seed, r);
      for (const auto& l : logs) scores[l.model_id] = dataset_smoothness(subsample_examples(l, size, s), variant);
      taus.push_back(micro_tau_from_scores(input, scores, tau, &n_models));
    }
    rows.push_back(summarize(static_cast<double>(size), taus, n_models));
  }
  return rows;
}

std::vector<AblationRow> ablate_n_samples(const AblationInput& input,
                                          const std::vector<NeighborhoodPredictionLog>& logs,
                                          const std::vector<std::size_t>& counts, SmoothnessVariant variant,
                                          TauVariant tau) {
  std::size_t available = std::numeric_limits<std::size_t>::max();
  for (const auto& l : logs) {
    for (const auto& e : l.examples) available = std::min(available, e.neighborhood_predictions.size());
  }
  std::vector<AblationRow> rows;
  for (std::size_t n : counts) {
    if (logs.empty() || n < 1 || n > available) {
      AblationRow row;
      row.value = static_cast<double>(n);
      row.status = "skipped: more samples than logged";
      rows.push_back(row);
      continue;
    }
    std::map<std::string, double> scores;
    for (const auto& l : logs) scores[l.model_id] = dataset_smoothness(truncate_neighborhood(l, n), variant);
    std::size_t n_models = 0;
    auto t = micro_tau_from_scores(input, scores, tau, &n_models);
    rows.push_back(summarize(static_cast<double>(n), {t}, n_models));
  }
  return rows;
}

std::vector<AblationRow> ablate_from_scores(const AblationInput& input,
                                            const std::vector<std::pair<double, std::map<std::string, double>>>& sweep,
                                            TauVariant tau) {
  std::vector<AblationRow> rows;
  for (const auto& [value, scores] : sweep) {
    std::size_t n_models = 0;
    auto t = micro_tau_from_scores(input, scores, tau, &n_models);
    rows.push_back(summarize(value, {t}, n_models));
  }
  return rows;
}

std::string format_ablation_csv(const std::string& kind, const std::vector<AblationRow>& rows,
                                const Provenance& provenance) {
  std::string out = provenance_comment(provenance);
  out += "kind,value,tau,tau_std,repeats,n_models,skipped,status\n";
  for (const auto& r : rows) {
    const bool skipped = r.status.rfind("skipped", 0) == 0;
    out += kind + "," + format_real(r.value) + "," + opt_csv(r.tau) + "," + opt_csv(r.tau_std) + "," +
           std::to_string(r.repeats) + "," + std::to_string(r.n_models) + "," + (skipped ? "1" : "0") + "," +
           r.status + "\n";
  }
  return out;
}

std::string sweep_tag(const std::string& prefix, double size_r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", size_r);
  return prefix + buf;
}

std::optional<double> parse_sweep_tag(const std::string& prefix, const std::string& tag) {
  if (tag.size() <= prefix.size() || tag.compare(0, prefix.size(), prefix) != 0) return std::nullopt;
  try {
    std::size_t pos = 0;
    const std::string rest = tag.substr(prefix.size());
    const double v = std::stod(rest, &pos);
    if (pos != rest.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::string report_json(const MetricReport& report, const Provenance& provenance) {
  ojson root;
  root["provenance"] = provenance_json(provenance);
  root["tau_variant"] = report.tau == TauVariant::b ? "b" : "a";
  ojson measures = ojson::array();
  for (const auto& mr : report.measures) {
    ojson m;
    m["measure"] = mr.measure;
    m["direct_predictor"] = is_direct_predictor(mr.measure);
    ojson per_arch = ojson::array();
    for (const auto& a : mr.per_arch) {
      ojson j;
      j["arch"] = a.arch;
      j["r2"] = opt(a.r2_mae.r2);
      j["mae_pct"] = opt(a.r2_mae.mae_pct);
      j["macro_tau"] = opt(a.macro.value);
      j["micro_tau"] = opt(a.micro.value);
      j["id_tau"] = opt(a.id.value);
      j["cross_domain_tau"] = opt(a.cross_domain_tau);
      ojson counts;
      counts["pairs"] = a.r2_mae.pairs.size();
      counts["pairs_skipped"] = a.r2_mae.skipped;
      counts["macro_rows"] = a.macro.rows.size();
      counts["macro_skipped"] = a.macro.skipped;
      counts["micro_rows"] = a.micro.rows.size();
      counts["micro_skipped"] = a.micro.skipped;
      counts["id_rows"] = a.id.rows.size();
      counts["id_skipped"] = a.id.skipped;
      j["counts"] = counts;
      per_arch.push_back(j);
    }
    m["per_arch"] = per_arch;
    m["arch_tau"] = mr.arch ? opt(mr.arch->value) : ojson(nullptr);
    m["cross_domain_models"] = mr.cross_domain.rows.size();
    m["cross_domain_skipped"] = mr.cross_domain.skipped;
    measures.push_back(m);
  }
  root["measures"] = measures;
  return root.dump(2) + "\n";
}

std::string pairs_csv(const MetricReport& report, const Provenance& provenance) {
  std::string out = provenance_comment(provenance);
  out += "measure,arch,train_domain,test_domain,pool_size,n_models,slope,intercept,r2,mae_pct,macro_tau,status\n";
  for (const auto& mr : report.measures) {
    for (const auto& a : mr.per_arch) {
      std::map<std::pair<std::string, std::string>, std::optional<double>> macro;
      for (const auto& r : a.macro.rows) macro[{r.key, r.key2}] = r.tau;
      for (const auto& p : a.r2_mae.pairs) {
        auto it = macro.find({p.train_domain, p.test_domain});
        const std::optional<double> tau = it == macro.end() ? std::nullopt : it->second;
        out += mr.measure + "," + a.arch + "," + p.train_domain + "," + p.test_domain + "," +
               std::to_string(p.pool_size) + "," + std::to_string(p.n_models) + "," +
               (p.fit ? format_real(p.fit->a) : "") + "," + (p.fit ? format_real(p.fit->b) : "") + "," +
               opt_csv(p.r2) + "," + opt_csv(p.mae_pct) + "," + opt_csv(tau) + "," + p.status + "\n";
      }
    }
  }
  return out;
}

std::string domains_csv(const MetricReport& report, const Provenance& provenance) {
  std::string out = provenance_comment(provenance);
  out += "measure,arch,metric,domain,n_models,tau,status\n";
  auto emit = [&](const std::string& measure, const std::string& arch, const char* metric, const TauResult& t) {
    for (const auto& r : t.rows) {
      out += measure + "," + arch + "," + metric + "," + r.key + "," + std::to_string(r.n) + "," + opt_csv(r.tau) +
             "," + r.status + "\n";
    }
  };
  for (const auto& mr : report.measures) {
    for (const auto& a : mr.per_arch) {
      emit(mr.measure, a.arch, "id", a.id);
      emit(mr.measure, a.arch, "micro", a.micro);
    }
    if (mr.arch) emit(mr.measure, "*", "arch", *mr.arch);
  }
  return out;
}

std::string models_csv(const MetricReport& report, const Provenance& provenance) {
  std::string out = provenance_comment(provenance);
  out += "measure,arch,model_id,n_domains,tau,status\n";
  for (const auto& mr : report.measures) {
    for (const auto& r : mr.cross_domain.rows) {
      out += mr.measure + "," + r.arch + "," + r.key + "," + std::to_string(r.n) + "," + opt_csv(r.tau) + "," +
             r.status + "\n";
    }
  }
  return out;
}

std::string summary_table(const std::string& report_json_text) {
  const auto root = ojson::parse(report_json_text);
  auto cell = [](const ojson& v, bool pct = false) {
    char buf[32];
    if (v.is_null()) return std::string("      -");
    std::snprintf(buf, sizeof buf, pct ? "%7.2f" : "%7.3f", v.get<double>());
    return std::string(buf);
  };
  std::string out;
  char head[160];
  std::snprintf(head, sizeof head, "%-22s %-8s %7s %7s %7s %7s %7s %7s %7s\n", "measure", "arch", "R2", "MAE",
                "macro", "micro", "ID", "arch", "xdom");
  out += head;
  for (const auto& m : root.at("measures")) {
    for (const auto& a : m.at("per_arch")) {
      char name[64];
      std::snprintf(name, sizeof name, "%-22s %-8s", m.at("measure").get<std::string>().c_str(),
                    a.at("arch").get<std::string>().c_str());
      out += std::string(name) + " " + cell(a.at("r2")) + " " + cell(a.at("mae_pct"), true) + " " +
             cell(a.at("macro_tau")) + " " + cell(a.at("micro_tau")) + " " + cell(a.at("id_tau")) + " " +
             cell(m.at("arch_tau")) + " " + cell(a.at("cross_domain_tau")) + "\n";
    }
  }
  const auto& p = root.at("provenance");
  out += "tau-" + root.at("tau_variant").get<std::string>() + ", tool " + p.at("tool_version").get<std::string>() +
         ", config " + p.at("config_hash").get<std::string>() + ", seed " + std::to_string(p.at("seed").get<std::uint64_t>()) +
         "\n";
  return out;
}

namespace {

using json = nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* key : keys) ok = ok || k == key;
    if (!ok) throw ValidationError("unknown key '" + k + "' in " + where);
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

NeighborhoodSpec parse_neighborhood(const json& j) {
  reject_unknown(j, {"kind", "size_r", "n_samples", "seed", "tag"}, "neighborhood");
  NeighborhoodSpec n;
  n.kind = neighborhood_kind_from_string(get_or<std::string>(j, "kind", "manifold"));
  n.size_r = get_or(j, "size_r", n.size_r);
  n.n_samples = get_or(j, "n_samples", n.n_samples);
  n.seed = get_or<std::uint64_t>(j, "seed", 0);
  n.tag = get_or<std::string>(j, "tag", "");
  validate(n);
  return n;
}

ojson neighborhood_json(const NeighborhoodSpec& n) {
  ojson j;
  j["kind"] = to_string(n.kind);
  j["size_r"] = n.size_r;
  j["n_samples"] = n.n_samples;
  j["seed"] = n.seed;
  j["tag"] = n.effective_tag();
  return j;
}

// Binary entropy of the flip probability the label noise induces, in nats.
double noise_floor(double label_noise, int num_classes) {
  const double q = label_noise * static_cast<double>(num_classes - 1) / static_cast<double>(num_classes);
  if (q <= 0.0) return 0.0;
  // Entropy of (1 - q, q / (k - 1) each for the other classes).
  const double other = q / static_cast<double>(num_classes - 1);
  return -(1.0 - q) * std::log(1.0 - q) - q * std::log(other);
}

TrainConfig parse_train_config(const json& j) {
  reject_unknown(j,
                 {"depth", "width", "weight_decay", "label_noise", "batch_size", "learning_rate", "ce_stop",
                  "max_epochs", "seed"},
                 "grid entry");
  TrainConfig c;
  c.depth = get_or(j, "depth", c.depth);
  c.width = get_or(j, "width", c.width);
  c.weight_decay = get_or(j, "weight_decay", c.weight_decay);
  c.label_noise = get_or(j, "label_noise", c.label_noise);
  c.batch_size = get_or(j, "batch_size", c.batch_size);
  c.learning_rate = get_or(j, "learning_rate", c.learning_rate);
  c.ce_stop = get_or(j, "ce_stop", c.ce_stop);
  c.max_epochs = get_or(j, "max_epochs", c.max_epochs);
  c.seed = get_or<std::uint64_t>(j, "seed", 0);
  validate(c);
  return c;
}

template <typename T>
std::vector<T> values_of(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return {fallback};
  const auto& v = j.at(key);
  if (v.is_array()) {
    if (v.empty()) throw ValidationError(std::string("grid axis '") + key + "' is empty");
    return v.get<std::vector<T>>();
  }
  return {v.get<T>()};
}

// Cartesian product in a fixed axis order: depth, width, label_noise,
// weight_decay, batch_size, learning_rate, max_epochs.
std::vector<TrainConfig> expand_grid(const json& g, int num_classes) {
  reject_unknown(g,
                 {"depth", "width", "label_noise", "weight_decay", "batch_size", "learning_rate", "max_epochs",
                  "ce_stop", "ce_stop_margin"},
                 "grid");
  if (g.contains("ce_stop") == g.contains("ce_stop_margin")) {
    throw ValidationError("grid needs exactly one of ce_stop or ce_stop_margin");
  }
  TrainConfig d;
  std::vector<TrainConfig> out;
  for (int depth : values_of(g, "depth", d.depth))
    for (int width : values_of(g, "width", d.width))
      for (double noise : values_of(g, "label_noise", d.label_noise))
        for (double wd : values_of(g, "weight_decay", d.weight_decay))
          for (int bs : values_of(g, "batch_size", d.batch_size))
            for (double lr : values_of(g, "learning_rate", d.learning_rate))
              for (int epochs : values_of(g, "max_epochs", d.max_epochs)) {
                TrainConfig c;
                c.depth = depth;
                c.width = width;
                c.label_noise = noise;
                c.weight_decay = wd;
                c.batch_size = bs;
                c.learning_rate = lr;
                c.max_epochs = epochs;
                c.ce_stop = g.contains("ce_stop") ? g.at("ce_stop").get<double>()
                                                  : noise_floor(noise, num_classes) + g.at("ce_stop_margin").get<double>();
                validate(c);
                out.push_back(c);
              }
  return out;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("experiment config: ") + e.what(), 0);
  }
  try {
    reject_unknown(root,
                   {"seed", "arch", "threads", "m_train", "m_test", "m_validation", "domains", "grid", "configs",
                    "neighborhoods", "ablation"},
                   "experiment config");
    ExperimentConfig c;
    c.seed = get_or<std::uint64_t>(root, "seed", c.seed);
    c.arch = get_or<std::string>(root, "arch", c.arch);
    c.threads = get_or<unsigned>(root, "threads", c.threads);
    c.m_train = get_or<std::size_t>(root, "m_train", c.m_train);
    c.m_test = get_or<std::size_t>(root, "m_test", c.m_test);
    c.m_validation = get_or<std::size_t>(root, "m_validation", c.m_validation);
    for (const auto& d : root.at("domains")) {
      reject_unknown(d, {"id", "rotation_deg", "translation", "noise_std", "far_shift"}, "domain");
      auto spec = make_domain(d.at("id").get<std::string>(), get_or(d, "rotation_deg", 0.0), get_or(d, "noise_std", 0.0),
                              get_or(d, "far_shift", false));
      if (d.contains("translation")) {
        const auto t = d.at("translation").get<std::vector<double>>();
        if (t.size() != 2) throw ValidationError("translation must have two components");
        spec.translation = {t[0], t[1]};
      }
      c.domains.push_back(std::move(spec));
    }
    if (c.domains.empty()) throw ValidationError("experiment config has no domains");
    if (root.contains("grid") == root.contains("configs")) {
      throw ValidationError("experiment config needs exactly one of grid or configs");
    }
    if (root.contains("grid")) {
      c.grid = expand_grid(root.at("grid"), c.domains.front().num_classes());
    } else {
      for (const auto& t : root.at("configs")) c.grid.push_back(parse_train_config(t));
    }
    if (root.contains("neighborhoods")) {
      for (const auto& n : root.at("neighborhoods")) c.neighborhoods.push_back(parse_neighborhood(n));
    }
    if (root.contains("ablation")) {
      const auto& a = root.at("ablation");
      reject_unknown(a, {"test_domain", "m_test", "neighborhoods", "size_sweep"}, "ablation");
      c.ablation.test_domain = a.at("test_domain").get<std::string>();
      c.ablation.m_test = get_or<std::size_t>(a, "m_test", c.ablation.m_test);
      if (a.contains("neighborhoods")) {
        for (const auto& n : a.at("neighborhoods")) c.ablation.neighborhoods.push_back(parse_neighborhood(n));
      }
      if (a.contains("size_sweep")) {
        const auto& s = a.at("size_sweep");
        reject_unknown(s, {"kind", "sizes", "n_samples", "seed", "prefix"}, "size_sweep");
        const auto prefix = get_or<std::string>(s, "prefix", "sweep_r");
        for (double r : s.at("sizes").get<std::vector<double>>()) {
          NeighborhoodSpec n;
          n.kind = neighborhood_kind_from_string(get_or<std::string>(s, "kind", "manifold"));
          n.size_r = r;
          n.n_samples = get_or(s, "n_samples", 10);
          n.seed = get_or<std::uint64_t>(s, "seed", 0);
          n.tag = sweep_tag(prefix, r);
          validate(n);
          c.ablation.neighborhoods.push_back(n);
        }
      }
    }
    validate(c);
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("experiment config: ") + e.what());
  }
}

std::string experiment_config_json(const ExperimentConfig& c) {
  nlohmann::ordered_json root;
  root["seed"] = c.seed;
  root["arch"] = c.arch;
  root["threads"] = c.threads;
  root["m_train"] = c.m_train;
  root["m_test"] = c.m_test;
  root["m_validation"] = c.m_validation;
  auto domains = nlohmann::ordered_json::array();
  for (const auto& d : c.domains) {
    nlohmann::ordered_json j;
    j["id"] = d.domain_id;
    j["rotation_deg"] = d.rotation * 180.0 / M_PI;
    j["translation"] = {d.translation.x, d.translation.y};
    j["noise_std"] = d.noise_std;
    j["far_shift"] = d.far_shift;
    domains.push_back(j);
  }
  root["domains"] = domains;
  auto configs = nlohmann::ordered_json::array();
  for (const auto& t : c.grid) {
    nlohmann::ordered_json j;
    j["depth"] = t.depth;
    j["width"] = t.width;
    j["weight_decay"] = t.weight_decay;
    j["label_noise"] = t.label_noise;
    j["batch_size"] = t.batch_size;
    j["learning_rate"] = t.learning_rate;
    j["ce_stop"] = t.ce_stop;
    j["max_epochs"] = t.max_epochs;
    j["seed"] = t.seed;
    configs.push_back(j);
  }
  root["configs"] = configs;
  auto ns = nlohmann::ordered_json::array();
  for (const auto& n : c.neighborhoods) ns.push_back(neighborhood_json(n));
  root["neighborhoods"] = ns;
  if (!c.ablation.test_domain.empty()) {
    nlohmann::ordered_json a;
    a["test_domain"] = c.ablation.test_domain;
    a["m_test"] = c.ablation.m_test;
    auto an = nlohmann::ordered_json::array();
    for (const auto& n : c.ablation.neighborhoods) an.push_back(neighborhood_json(n));
    a["neighborhoods"] = an;
    root["ablation"] = a;
  }
  return root.dump(2) + "\n";
}

std::vector<double> default_size_sweep() {
  std::vector<double> sizes;
  for (int i = 0; i < 9; ++i) sizes.push_back((0.05 + 0.1 * i) * M_PI);
  return sizes;
}

ExperimentConfig default_experiment(std::uint64_t seed) {
  ExperimentConfig c;
  c.seed = seed;
  for (int i = 0; i < 5; ++i) {
    char id[8];
    std::snprintf(id, sizeof id, "d%02d", 20 * i);
    c.domains.push_back(make_domain(id, 20.0 * i, 0.1));
  }
  c.domains.push_back(make_domain("far140", 140.0, 0.1, true));
  for (int depth : {1, 2, 3})
    for (int width : {8, 16})
      for (double noise : {0.0, 0.2, 0.4})
        for (double wd : {0.0, 1e-3}) {
          TrainConfig t;
          t.depth = depth;
          t.width = width;
          t.label_noise = noise;
          t.weight_decay = wd;
          t.learning_rate = 0.1;
          t.batch_size = 32;
          t.max_epochs = 500;
          t.ce_stop = noise_floor(noise, 2) + 0.08;
          c.grid.push_back(t);
        }
  NeighborhoodSpec manifold{NeighborhoodKind::manifold, 1.0, 10, derive_seed(seed, 11), "manifold"};
  NeighborhoodSpec isotropic{NeighborhoodKind::isotropic, 0.25, 10, derive_seed(seed, 12), "isotropic"};
  c.neighborhoods = {manifold, isotropic};
  c.ablation.test_domain = "d00";
  c.ablation.m_test = 2000;
  NeighborhoodSpec wide = manifold;
  wide.n_samples = 100;
  wide.seed = derive_seed(seed, 13);
  wide.tag = "manifold_n100";
  c.ablation.neighborhoods.push_back(wide);
  for (double r : default_size_sweep()) {
    NeighborhoodSpec s{NeighborhoodKind::manifold, r, 10, derive_seed(seed, 14), sweep_tag("sweep_r", r)};
    c.ablation.neighborhoods.push_back(s);
  }
  return c;
}

}  // namespace manismooth
