// manismooth command-line tool.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "manismooth/baselines.hpp"
#include "manismooth/error.hpp"
#include "manismooth/ingest.hpp"
#include "manismooth/parallel.hpp"
#include "manismooth/pipeline.hpp"
#include "manismooth/protocol.hpp"
#include "manismooth/smoothness.hpp"
#include "manismooth/synthbench.hpp"

namespace fs = std::filesystem;
using namespace manismooth;

namespace {

// One structured line per failed key; callers exit nonzero afterwards.
struct Failure {
  std::string key;
  std::string category;
  std::string message;
};

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

void report_failure(const std::string& command, const Failure& f) {
  std::cerr << "error command=" << command << " key=" << quoted(f.key) << " category=" << f.category
            << " message=" << quoted(f.message) << "\n";
}

class Failed : public std::exception {
 public:
  const char* what() const noexcept override { return "failed"; }
};

void fail_all(const std::string& command, const std::vector<Failure>& failures) {
  for (const auto& f : failures) report_failure(command, f);
  if (!failures.empty()) throw Failed();
}

template <typename Fn>
std::optional<Failure> attempt(const std::string& key, Fn&& fn) {
  try {
    fn();
    return std::nullopt;
  } catch (const Error& e) {
    return Failure{key, e.category(), e.what()};
  } catch (const std::exception& e) {
    return Failure{key, "io", e.what()};
  }
}

unsigned resolve_threads(unsigned requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<fs::path> files_in(const fs::path& dir, const std::string& extension) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == extension) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Directories expand to the JSONL files under `sub` (or directly inside them).
std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs, const std::string& sub) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      auto files = files_in(fs::is_directory(p / sub) ? p / sub : p, ".jsonl");
      out.insert(out.end(), files.begin(), files.end());
    } else if (fs::exists(p)) {
      out.push_back(p);
    } else {
      throw ValidationError("input does not exist: " + in);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::optional<fs::path> find_manifest(const std::vector<std::string>& inputs, const std::string& explicit_path) {
  if (!explicit_path.empty()) return fs::path(explicit_path);
  for (const auto& in : inputs) {
    if (fs::is_directory(in) && fs::exists(fs::path(in) / "manifest.jsonl")) return fs::path(in) / "manifest.jsonl";
  }
  return std::nullopt;
}

// Provenance of derived outputs: the producer's config hash and seed when
// the inputs agree on one, otherwise a hash over the input contents.
Provenance derived_provenance(const std::vector<std::optional<Provenance>>& sources, const std::string& fallback_text,
                              std::optional<std::uint64_t> seed) {
  std::set<std::pair<std::string, std::uint64_t>> seen;
  for (const auto& p : sources) {
    if (p) seen.insert({p->config_hash, p->seed});
  }
  Provenance out{kToolVersion, hash_text(fallback_text), 0};
  if (seen.size() == 1) {
    out.config_hash = seen.begin()->first;
    out.seed = seen.begin()->second;
  }
  if (seed) out.seed = *seed;
  return out;
}

std::map<std::string, std::string> train_domains_of(const std::optional<Manifest>& manifest) {
  std::map<std::string, std::string> out;
  if (manifest) {
    for (const auto& m : manifest->models) out[m.model_id] = m.train_domain;
  }
  return out;
}

std::vector<SmoothnessVariant> parse_variants(const std::vector<std::string>& names) {
  std::vector<SmoothnessVariant> out;
  for (const auto& n : names) {
    const auto v = n == "majority" ? SmoothnessVariant::majority : SmoothnessVariant::neg_entropy;
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  }
  return out;
}

TauVariant parse_tau(const std::string& s) { return s == "a" ? TauVariant::a : TauVariant::b; }

// ---- synth ----

struct SynthArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  bool print_config = false;
};

int run_synth(const SynthArgs& a) {
  ExperimentConfig config = a.config.empty() ? default_experiment(a.seed.value_or(7))
                                             : parse_experiment_config(read_file(a.config));
  if (a.seed) config.seed = *a.seed;
  config.threads = resolve_threads(a.threads ? a.threads : config.threads);
  const auto config_text = experiment_config_json(config);
  if (a.print_config) {
    std::cout << config_text;
    return 0;
  }
  const Provenance prov{kToolVersion, hash_text(config_text), config.seed};
  const auto stats = run_pool_to_directory(config, a.out, prov);
  write_file_atomic(fs::path(a.out) / "experiment.json", config_text);
  std::cout << "trained " << stats.trained << " converged " << stats.converged << " diverged " << stats.diverged
            << " -> " << a.out << "\n";
  return 0;
}

// ---- score ----

struct ScoreArgs {
  std::vector<std::string> inputs;
  std::string out;
  std::string manifest;
  std::vector<std::string> variants;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
};

int run_score(const ScoreArgs& a) {
  const auto files = expand_inputs(a.inputs, "predictions");
  if (files.empty()) throw ValidationError("no prediction logs found");
  const auto manifest_path = find_manifest(a.inputs, a.manifest);
  std::optional<Manifest> manifest;
  if (manifest_path) manifest = parse_manifest(*manifest_path);
  const auto train = train_domains_of(manifest);
  const auto variants = parse_variants(a.variants);

  struct Slot {
    std::vector<ScoreRow> rows;
    std::optional<AccuracyRow> accuracy;
    std::optional<Provenance> provenance;
    std::optional<Failure> failure;
  };
  std::vector<Slot> slots(files.size());
  parallel_for(files.size(), resolve_threads(a.threads), [&](std::size_t i) {
    slots[i].failure = attempt(files[i].string(), [&] {
      const auto log = parse_prediction_log(files[i]);
      const auto it = train.find(log.model_id);
      slots[i].rows = smoothness_rows(log, it == train.end() ? "" : it->second, variants);
      slots[i].provenance = log.provenance;
      bool labeled = !log.examples.empty();
      for (const auto& e : log.examples) labeled = labeled && e.true_label && e.base_prediction;
      if (labeled) slots[i].accuracy = AccuracyRow{log.model_id, log.test_domain, compute_accuracy(log)};
    });
  });

  std::vector<Failure> failures;
  std::vector<ScoreRow> rows;
  std::map<std::pair<std::string, std::string>, double> accuracy;
  std::vector<std::optional<Provenance>> provs;
  std::string fingerprint;
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (slots[i].failure) {
      failures.push_back(*slots[i].failure);
      continue;
    }
    rows.insert(rows.end(), slots[i].rows.begin(), slots[i].rows.end());
    provs.push_back(slots[i].provenance);
    fingerprint += files[i].filename().string() + "\n";
    if (const auto& acc = slots[i].accuracy) {
      const auto key = std::make_pair(acc->model_id, acc->test_domain);
      auto [it, inserted] = accuracy.emplace(key, acc->accuracy);
      if (!inserted && it->second != acc->accuracy) {
        failures.push_back({acc->model_id + "/" + acc->test_domain, "validation",
                            "logs of one (model, domain) disagree on accuracy"});
      }
    }
  }
  fail_all("score", failures);

  std::vector<AccuracyRow> acc_rows;
  for (const auto& [key, v] : accuracy) acc_rows.push_back({key.first, key.second, v});
  sort_rows(rows);
  sort_rows(acc_rows);
  const auto prov = derived_provenance(provs, fingerprint, a.seed);
  fs::create_directories(a.out);
  write_file_atomic(fs::path(a.out) / "scores.csv", format_score_csv(rows, prov));
  write_file_atomic(fs::path(a.out) / "accuracies.csv", format_accuracy_csv(acc_rows, prov));
  std::cout << rows.size() << " score rows, " << acc_rows.size() << " accuracy rows -> " << a.out << "\n";
  return 0;
}

// ---- baseline ----

struct BaselineArgs {
  std::string input;
  std::string out;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
};

int run_baseline(const BaselineArgs& a) {
  const fs::path root(a.input);
  const auto manifest = parse_manifest(root / "manifest.jsonl");
  const auto models = converged_models(manifest);

  // scores/<model>__<domain>__<split>.jsonl
  std::map<std::string, std::vector<fs::path>> test_files;
  std::map<std::string, fs::path> validation_files;
  for (const auto& f : files_in(root / "scores", ".jsonl")) {
    const auto stem = f.stem().string();
    const auto cut = stem.find("__");
    if (cut == std::string::npos) continue;
    const auto model = stem.substr(0, cut);
    if (stem.size() > 12 && stem.compare(stem.size() - 12, 12, "__validation") == 0) {
      validation_files[model] = f;
    } else {
      test_files[model].push_back(f);
    }
  }

  struct Slot {
    std::vector<ScoreRow> rows;
    std::optional<Failure> failure;
  };
  std::vector<Slot> slots(models.size());
  parallel_for(models.size(), resolve_threads(a.threads), [&](std::size_t i) {
    const auto& m = models[i];
    slots[i].failure = attempt(m.model_id, [&] {
      auto v = validation_files.find(m.model_id);
      if (v == validation_files.end()) throw ValidationError("no validation score log");
      const auto validation = parse_score_log(v->second);
      std::vector<ScoreLog> tests;
      std::vector<std::string> domains;
      for (const auto& f : test_files[m.model_id]) {
        tests.push_back(parse_score_log(f));
        domains.push_back(tests.back().domain);
      }
      if (tests.empty()) throw ValidationError("no test score logs");
      slots[i].rows = atc_rows(validation, tests, m.train_domain);
      const auto weights = parse_weight_dump(root / "weights" / (m.model_id + ".bin"));
      const auto norms = norm_rows(weights, m.train_domain, domains);
      slots[i].rows.insert(slots[i].rows.end(), norms.begin(), norms.end());
    });
  });

  std::vector<Failure> failures;
  std::vector<ScoreRow> rows;
  for (auto& s : slots) {
    if (s.failure) failures.push_back(*s.failure);
    rows.insert(rows.end(), s.rows.begin(), s.rows.end());
  }
  fail_all("baseline", failures);
  sort_rows(rows);
  const auto prov = derived_provenance({manifest.provenance}, read_file(root / "manifest.jsonl"), a.seed);
  fs::create_directories(a.out);
  write_file_atomic(fs::path(a.out) / "baseline_scores.csv", format_score_csv(rows, prov));
  std::cout << rows.size() << " baseline rows -> " << a.out << "\n";
  return 0;
}

// ---- evaluate ----

struct EvaluateArgs {
  std::vector<std::string> inputs;
  std::string manifest;
  std::string out;
  std::string tau = "b";
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
};

int run_evaluate(const EvaluateArgs& a) {
  const auto manifest = parse_manifest(a.manifest);
  std::vector<ScoreRow> scores;
  std::vector<AccuracyRow> accuracies;
  std::string fingerprint = read_file(a.manifest);
  for (const auto& in : a.inputs) {
    const auto text = read_file(in);
    fingerprint += text;
    if (detect_csv_kind(text) == CsvKind::scores) {
      auto rows = parse_score_csv(text);
      scores.insert(scores.end(), rows.begin(), rows.end());
    } else {
      auto rows = parse_accuracy_csv(text);
      accuracies.insert(accuracies.end(), rows.begin(), rows.end());
    }
  }
  sort_rows(scores);
  sort_rows(accuracies);
  if (accuracies.empty()) throw ValidationError("no accuracy rows among the inputs");
  const auto matrix = build_matrix(manifest, scores, accuracies);
  matrix.check_complete();
  const auto report = build_report(matrix, parse_tau(a.tau), resolve_threads(a.threads));
  Provenance prov{kToolVersion, hash_text(fingerprint), 0};
  if (manifest.provenance) prov.seed = manifest.provenance->seed;
  if (a.seed) prov.seed = *a.seed;
  const fs::path out(a.out);
  fs::create_directories(out);
  write_file_atomic(out / "report.json", report_json(report, prov));
  write_file_atomic(out / "pairs.csv", pairs_csv(report, prov));
  write_file_atomic(out / "domains.csv", domains_csv(report, prov));
  write_file_atomic(out / "models.csv", models_csv(report, prov));
  std::cout << report.measures.size() << " measures evaluated -> " << a.out << "\n";
  return 0;
}

// ---- ablate ----

struct AblateArgs {
  std::string input;
  std::string out;
  std::string kind;
  std::string domain;
  std::string tag;
  std::string variant = "majority";
  std::string tau = "b";
  std::vector<double> values;
  std::size_t repeats = 5;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
};

std::string default_ablation_domain(const fs::path& root) {
  const auto path = root / "experiment.json";
  if (fs::exists(path)) {
    const auto config = parse_experiment_config(read_file(path));
    if (!config.ablation.test_domain.empty()) return config.ablation.test_domain;
  }
  throw ValidationError("--domain is required when the pool has no ablation domain");
}

int run_ablate(const AblateArgs& a) {
  const fs::path root(a.input);
  const auto manifest = parse_manifest(root / "manifest.jsonl");
  const std::string domain = a.domain.empty() ? default_ablation_domain(root) : a.domain;
  const auto variant = a.variant == "majority" ? SmoothnessVariant::majority : SmoothnessVariant::neg_entropy;
  const auto tau = parse_tau(a.tau);

  AblationInput input;
  input.models = converged_models(manifest);
  input.test_domain = domain;

  // Every log of the pool on the ablation domain, keyed by tag.
  std::vector<fs::path> files;
  for (const auto& f : files_in(root / "predictions", ".jsonl")) {
    const auto stem = f.stem().string();
    if (stem.find("__" + domain + "__") != std::string::npos) files.push_back(f);
  }
  std::vector<std::optional<NeighborhoodPredictionLog>> parsed(files.size());
  std::vector<std::optional<Failure>> errors(files.size());
  parallel_for(files.size(), resolve_threads(a.threads), [&](std::size_t i) {
    errors[i] = attempt(files[i].string(), [&] {
      auto log = parse_prediction_log(files[i]);
      if (log.test_domain == domain) parsed[i] = std::move(log);
    });
  });
  std::vector<Failure> failures;
  for (auto& e : errors) {
    if (e) failures.push_back(*e);
  }
  fail_all("ablate", failures);

  std::set<std::string> converged;
  for (const auto& m : input.models) converged.insert(m.model_id);
  std::map<std::string, std::vector<NeighborhoodPredictionLog>> by_tag;
  for (auto& p : parsed) {
    if (!p || !converged.count(p->model_id)) continue;
    input.accuracy[p->model_id] = compute_accuracy(*p);
    by_tag[p->neighborhood].push_back(std::move(*p));
  }
  const auto logs_for = [&](const std::string& tag) {
    auto it = by_tag.find(tag);
    if (it == by_tag.end()) throw ValidationError("no logs tagged '" + tag + "' on domain '" + domain + "'");
    return it->second;
  };

  std::vector<AblationRow> rows;
  std::uint64_t seed = a.seed.value_or(manifest.provenance ? manifest.provenance->seed : 0);
  if (a.kind == "dataset_size") {
    std::vector<std::size_t> sizes;
    for (double v : a.values) sizes.push_back(static_cast<std::size_t>(v));
    if (sizes.empty()) sizes = {10, 20, 50, 100, 200, 500, 1000, 2000};
    rows = ablate_dataset_size(input, logs_for(a.tag.empty() ? "manifold" : a.tag), sizes, a.repeats,
                               derive_seed(seed, 21), variant, tau);
  } else if (a.kind == "n_samples") {
    std::vector<std::size_t> counts;
    for (double v : a.values) counts.push_back(static_cast<std::size_t>(v));
    if (counts.empty()) counts = {1, 2, 5, 10, 25, 50, 100};
    rows = ablate_n_samples(input, logs_for(a.tag.empty() ? "manifold_n100" : a.tag), counts, variant, tau);
  } else {
    const std::string prefix = a.tag.empty() ? "sweep_r" : a.tag;
    std::map<double, std::map<std::string, double>> sweep;
    for (const auto& [tag, logs] : by_tag) {
      const auto r = parse_sweep_tag(prefix, tag);
      if (!r) continue;
      for (const auto& l : logs) sweep[*r][l.model_id] = dataset_smoothness(l, variant);
    }
    if (sweep.empty()) throw ValidationError("no logs tagged '" + prefix + "<size>' on domain '" + domain + "'");
    std::vector<std::pair<double, std::map<std::string, double>>> ordered(sweep.begin(), sweep.end());
    if (!a.values.empty()) {
      std::vector<std::pair<double, std::map<std::string, double>>> chosen;
      for (double v : a.values) {
        auto it = std::find_if(ordered.begin(), ordered.end(),
                               [&](const auto& e) { return sweep_tag("", e.first) == sweep_tag("", v); });
        if (it != ordered.end()) {
          chosen.push_back(*it);
        } else {
          chosen.push_back({v, {}});
        }
      }
      ordered = std::move(chosen);
    }
    rows = ablate_from_scores(input, ordered, tau);
    for (auto& r : rows) {
      if (r.n_models == 0) r.status = "skipped: no logs at this size";
    }
  }

  Provenance prov{kToolVersion, hash_text(read_file(root / "manifest.jsonl") + a.kind + domain), seed};
  if (manifest.provenance) prov.config_hash = manifest.provenance->config_hash;
  fs::create_directories(a.out);
  const auto path = fs::path(a.out) / ("ablation_" + a.kind + ".csv");
  write_file_atomic(path, format_ablation_csv(a.kind, rows, prov));
  std::cout << rows.size() << " sweep rows -> " << path.string() << "\n";
  return 0;
}

// ---- report ----

int run_report(const std::string& input, const std::string& out) {
  const auto table = summary_table(read_file(input));
  if (!out.empty()) {
    write_file_atomic(out, table);
  } else {
    std::cout << table;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Manifold-smoothness measures for predicting out-of-distribution accuracy"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  const auto variant_check = CLI::IsMember({"majority", "entropy"});
  const auto tau_check = CLI::IsMember({"b", "a"});

  SynthArgs synth;
  auto* cmd_synth = app.add_subcommand("synth", "Train a model pool on synthetic domains and write its logs");
  cmd_synth->add_option("--config", synth.config, "Experiment JSON (default: built-in benchmark)")
      ->check(CLI::ExistingFile);
  cmd_synth->add_option("--out", synth.out, "Output pool directory");
  cmd_synth->add_option("--seed", synth.seed, "Override the experiment seed");
  cmd_synth->add_option("--threads", synth.threads, "Worker threads (0: all cores)");
  cmd_synth->add_flag("--print-config", synth.print_config, "Print the resolved experiment and exit");
  cmd_synth->callback([&] {
    if (!synth.print_config && synth.out.empty()) throw CLI::RequiredError("--out");
  });

  ScoreArgs score;
  score.variants = {"majority", "entropy"};
  auto* cmd_score = app.add_subcommand("score", "Smoothness scores from neighborhood prediction logs");
  cmd_score->add_option("--input", score.inputs, "Prediction logs, or directories holding them")->required();
  cmd_score->add_option("--out", score.out, "Output directory")->required();
  cmd_score->add_option("--manifest", score.manifest, "Manifest supplying train domains")->check(CLI::ExistingFile);
  cmd_score->add_option("--variant", score.variants, "Smoothness variant(s)")->check(variant_check);
  cmd_score->add_option("--seed", score.seed, "Seed recorded in the output header");
  cmd_score->add_option("--threads", score.threads, "Worker threads (0: all cores)");

  BaselineArgs baseline;
  auto* cmd_baseline = app.add_subcommand("baseline", "ATC and weight-norm scores from a pool directory");
  cmd_baseline->add_option("--input", baseline.input, "Pool directory")->required()->check(CLI::ExistingDirectory);
  cmd_baseline->add_option("--out", baseline.out, "Output directory")->required();
  cmd_baseline->add_option("--seed", baseline.seed, "Seed recorded in the output header");
  cmd_baseline->add_option("--threads", baseline.threads, "Worker threads (0: all cores)");

  EvaluateArgs evaluate;
  auto* cmd_evaluate = app.add_subcommand("evaluate", "Metric report from score and accuracy CSVs");
  cmd_evaluate->add_option("--input", evaluate.inputs, "Score and accuracy CSV files")
      ->required()
      ->check(CLI::ExistingFile);
  cmd_evaluate->add_option("--manifest", evaluate.manifest, "Pool manifest")->required()->check(CLI::ExistingFile);
  cmd_evaluate->add_option("--out", evaluate.out, "Output directory")->required();
  cmd_evaluate->add_option("--tau", evaluate.tau, "Kendall tau variant")->check(tau_check);
  cmd_evaluate->add_option("--seed", evaluate.seed, "Seed recorded in the output header");
  cmd_evaluate->add_option("--threads", evaluate.threads, "Worker threads (0: all cores)");

  AblateArgs ablate;
  auto* cmd_ablate = app.add_subcommand("ablate", "Sweep tables over test-set size, sample count or neighborhood size");
  cmd_ablate->add_option("--input", ablate.input, "Pool directory")->required()->check(CLI::ExistingDirectory);
  cmd_ablate->add_option("--out", ablate.out, "Output directory")->required();
  cmd_ablate->add_option("--kind", ablate.kind, "Sweep kind")
      ->required()
      ->check(CLI::IsMember({"dataset_size", "n_samples", "neighborhood_size"}));
  cmd_ablate->add_option("--domain", ablate.domain, "Test domain (default: the pool's ablation domain)");
  cmd_ablate->add_option("--tag", ablate.tag, "Neighborhood tag, or tag prefix for neighborhood_size");
  cmd_ablate->add_option("--values", ablate.values, "Sweep values");
  cmd_ablate->add_option("--repeats", ablate.repeats, "Subsampling repeats for dataset_size")
      ->check(CLI::PositiveNumber);
  cmd_ablate->add_option("--variant", ablate.variant, "Smoothness variant")->check(variant_check);
  cmd_ablate->add_option("--tau", ablate.tau, "Kendall tau variant")->check(tau_check);
  cmd_ablate->add_option("--seed", ablate.seed, "Subsampling seed");
  cmd_ablate->add_option("--threads", ablate.threads, "Worker threads (0: all cores)");

  std::string report_input, report_out;
  auto* cmd_report = app.add_subcommand("report", "Print the headline table of a report.json");
  cmd_report->add_option("--input", report_input, "report.json")->required()->check(CLI::ExistingFile);
  cmd_report->add_option("--out", report_out, "Write the table here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  const auto* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  try {
    if (chosen == cmd_synth) return run_synth(synth);
    if (chosen == cmd_score) return run_score(score);
    if (chosen == cmd_baseline) return run_baseline(baseline);
    if (chosen == cmd_evaluate) return run_evaluate(evaluate);
    if (chosen == cmd_ablate) return run_ablate(ablate);
    if (chosen == cmd_report) return run_report(report_input, report_out);
  } catch (const Failed&) {
    return 1;
  } catch (const Error& e) {
    report_failure(name, {"-", e.category(), e.what()});
    return 1;
  } catch (const std::exception& e) {
    report_failure(name, {"-", "io", e.what()});
    return 1;
  }
  return 1;
}
