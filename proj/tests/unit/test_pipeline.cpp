#include <doctest.h>

#include <json.hpp>

#include "manismooth/error.hpp"
#include "manismooth/pipeline.hpp"
#include "manismooth/random.hpp"

using namespace manismooth;

namespace {

const Provenance kProv{"0.1.0", "00ff", 7};

NeighborhoodPredictionLog log_with(const std::string& model, const std::string& domain, const std::string& tag,
                                   std::vector<std::vector<ClassIndex>> neighborhoods, std::vector<int> correct) {
  NeighborhoodPredictionLog log;
  log.model_id = model;
  log.test_domain = domain;
  log.neighborhood = tag;
  log.num_classes = 2;
  for (std::size_t i = 0; i < neighborhoods.size(); ++i) {
    log.examples.push_back({"x" + std::to_string(i), 0, correct[i] ? 0 : 1, neighborhoods[i]});
  }
  return log;
}

const char* kMinimalConfig = R"({
  "seed": 1,
  "domains": [{"id": "a"}, {"id": "b", "rotation_deg": 30}],
  "configs": [{"depth": 1, "width": 4, "ce_stop": 0.3}]
})";

}  // namespace

TEST_CASE("hash_text is FNV-1a") {
  CHECK(hash_text("") == "cbf29ce484222325");
  CHECK(hash_text("a") == "af63dc4c8601ec8c");
  CHECK(hash_text("a") != hash_text("b"));
}

TEST_CASE("smoothness rows per variant") {
  const auto log = log_with("m", "d", "manifold", {{0, 0, 1, 0}}, {1});
  auto rows = smoothness_rows(log, "t", {SmoothnessVariant::majority});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].measure == "ms_manifold");
  CHECK(rows[0].value == 0.75);
  rows = smoothness_rows(log, "t", {SmoothnessVariant::majority, SmoothnessVariant::neg_entropy});
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].measure == "mse_manifold");
  CHECK(rows[1].value == doctest::Approx(0.75 * std::log(0.75) + 0.25 * std::log(0.25)));
}

TEST_CASE("score CSV round-trips exactly and carries provenance") {
  Rng rng(1);
  std::vector<ScoreRow> rows;
  for (int i = 0; i < 20; ++i) {
    rows.push_back({"m" + std::to_string(i % 4), "a", "d" + std::to_string(i / 4), "ms_x", rng.normal() * 1e-3});
  }
  sort_rows(rows);
  const auto text = format_score_csv(rows, kProv);
  CHECK(text.rfind("# tool_version=0.1.0 config_hash=00ff seed=7\n", 0) == 0);
  CHECK(detect_csv_kind(text) == CsvKind::scores);
  CHECK(parse_score_csv(text) == rows);

  std::vector<AccuracyRow> acc{{"m", "d", 1.0 / 3}};
  const auto acc_text = format_accuracy_csv(acc, kProv);
  CHECK(detect_csv_kind(acc_text) == CsvKind::accuracies);
  CHECK(parse_accuracy_csv(acc_text) == acc);
}

TEST_CASE("CSV errors") {
  std::vector<ScoreRow> dup{{"m", "a", "b", "ms", 1}, {"m", "a", "b", "ms", 2}};
  CHECK_THROWS_AS(sort_rows(dup), ValidationError);
  std::vector<ScoreRow> comma{{"m,1", "a", "b", "ms", 1}};
  CHECK_THROWS_AS(format_score_csv(comma, kProv), ValidationError);
  CHECK_THROWS_AS(parse_score_csv("model_id,train_domain,test_domain,measure,value\nm,a,b,ms,abc\n"), ParseError);
  CHECK_THROWS_AS(parse_score_csv("wrong,header\n"), ParseError);
  CHECK_THROWS(detect_csv_kind("a,b,c\n"));
}

TEST_CASE("build_matrix splits training and test-only domains") {
  Manifest man;
  man.models = {{"a1", "mlp", "A", {}, true}, {"a2", "mlp", "A", {}, false}};
  std::vector<ScoreRow> scores{{"a1", "A", "A", "ms", 0.9}, {"a1", "A", "Z", "ms", 0.5}, {"a2", "A", "Z", "ms", 0.1}};
  std::vector<AccuracyRow> acc{{"a1", "A", 0.95}, {"a1", "Z", 0.6}};
  const auto m = build_matrix(man, scores, acc);
  CHECK(m.models().size() == 1);
  REQUIRE(m.domains().size() == 2);
  CHECK(m.domains()[*m.domain_index("A")].is_training);
  CHECK_FALSE(m.domains()[*m.domain_index("Z")].is_training);
  CHECK_NOTHROW(m.check_complete());
}

TEST_CASE("ScoringSink joins logs, scores and weights") {
  ScoringSink sink({SmoothnessVariant::majority}, [](const NeighborhoodPredictionLog& l) { return l.neighborhood == "keep"; });
  ScoreLog val;
  val.model_id = "m";
  val.domain = "A";
  val.split = Split::validation;
  val.num_classes = 2;
  val.entries = {{"v0", 0, 0, 0.9, -0.3}, {"v1", 1, 0, 0.6, -0.6}};
  sink.score_log(val);
  ScoreLog test = val;
  test.split = Split::test;
  test.domain = "B";
  sink.score_log(test);
  sink.prediction_log(log_with("m", "B", "keep", {{0, 0}}, {1}));
  sink.prediction_log(log_with("m", "B", "drop", {{0, 1}}, {1}));
  sink.weights({"m", {{1, 1, {2.0}}}});
  Manifest man;
  man.models = {{"m", "mlp", "A", {}, true}};
  sink.manifest(man);

  const auto acc = sink.accuracies();
  REQUIRE(acc.size() == 1);
  CHECK(acc[0].accuracy == 0.5);
  std::map<std::string, ScoreRow> by_measure;
  for (const auto& r : sink.scores()) by_measure[r.measure] = r;
  CHECK(by_measure.size() == 6);  // atc_mc, atc_ne, ms_keep, ms_drop, norm_frobenius, norm_spectral
  CHECK(by_measure.at("ms_keep").train_domain == "A");
  CHECK(by_measure.at("norm_spectral").test_domain == "B");
  CHECK(by_measure.at("norm_spectral").value == doctest::Approx(2 * std::log(2.0)));
  CHECK(by_measure.at("atc_mc").value == 0.5);
  REQUIRE(sink.retained().size() == 1);
  CHECK(sink.retained()[0].neighborhood == "keep");
}

TEST_CASE("ablations over logs") {
  // Three models off the test domain; smoothness tracks accuracy exactly.
  AblationInput input;
  input.test_domain = "T";
  std::vector<NeighborhoodPredictionLog> logs;
  for (int k = 0; k < 3; ++k) {
    const std::string id = "m" + std::to_string(k);
    input.models.push_back({id, "mlp", "S", {}, true});
    std::vector<std::vector<ClassIndex>> nb;
    std::vector<int> correct;
    for (int i = 0; i < 30; ++i) {
      const bool noisy = i < 5 * k;
      nb.push_back(noisy ? std::vector<ClassIndex>{0, 1, 1, 0} : std::vector<ClassIndex>{0, 0, 0, 0});
      correct.push_back(noisy ? 0 : 1);
    }
    logs.push_back(log_with(id, "T", "t", nb, correct));
    input.accuracy[id] = compute_accuracy(logs.back());
  }
  const auto sizes = ablate_dataset_size(input, logs, {30, 31}, 2, 5, SmoothnessVariant::majority, TauVariant::b);
  REQUIRE(sizes.size() == 2);
  CHECK(*sizes[0].tau == 1.0);
  CHECK(sizes[0].repeats == 2);
  CHECK(sizes[0].n_models == 3);
  CHECK_FALSE(sizes[1].tau);
  CHECK(sizes[1].status.rfind("skipped", 0) == 0);

  const auto counts = ablate_n_samples(input, logs, {1, 4, 5}, SmoothnessVariant::majority, TauVariant::b);
  CHECK_FALSE(counts[0].tau);  // one sample: every mu is 1, tau undefined
  CHECK(*counts[1].tau == 1.0);
  CHECK(counts[2].status.rfind("skipped", 0) == 0);

  const auto csv = format_ablation_csv("n_samples", counts, kProv);
  CHECK(csv.find("kind,value,tau,tau_std,repeats,n_models,skipped,status\n") != std::string::npos);
  CHECK(csv.find("n_samples,5,,,0,0,1,skipped") != std::string::npos);

  // Models trained on the test domain are excluded.
  input.models[0].train_domain = "T";
  std::size_t n = 0;
  std::map<std::string, double> scores{{"m0", 0.1}, {"m1", 0.2}, {"m2", 0.3}};
  micro_tau_from_scores(input, scores, TauVariant::b, &n);
  CHECK(n == 2);
}

TEST_CASE("sweep tags") {
  CHECK(sweep_tag("sweep_r", 0.15707963) == "sweep_r0.1571");
  CHECK(*parse_sweep_tag("sweep_r", "sweep_r0.1571") == doctest::Approx(0.1571));
  CHECK_FALSE(parse_sweep_tag("sweep_r", "manifold"));
  CHECK_FALSE(parse_sweep_tag("sweep_r", "sweep_rx"));
  const auto sizes = default_size_sweep();
  REQUIRE(sizes.size() == 9);
  CHECK(sizes.front() == doctest::Approx(0.05 * M_PI));
  CHECK(sizes.back() == doctest::Approx(0.85 * M_PI));
}

TEST_CASE("report JSON has a stable key order and nulls for undefined values") {
  MetricReport r;
  MeasureReport m;
  m.measure = "ms_x";
  ArchMetrics a;
  a.arch = "mlp";
  a.macro.value = 0.5;
  m.per_arch.push_back(a);
  r.measures.push_back(m);
  const auto text = report_json(r, kProv);
  CHECK(text == report_json(r, kProv));
  const auto j = nlohmann::ordered_json::parse(text);
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"provenance", "tau_variant", "measures"});
  const auto& pa = j["measures"][0]["per_arch"][0];
  CHECK(pa["r2"].is_null());
  CHECK(pa["macro_tau"].get<double>() == 0.5);
  CHECK(j["measures"][0]["arch_tau"].is_null());
  CHECK(summary_table(text).find("ms_x") != std::string::npos);
}

TEST_CASE("experiment config parsing") {
  const auto c = parse_experiment_config(kMinimalConfig);
  CHECK(c.domains.size() == 2);
  CHECK(c.grid.size() == 1);
  CHECK(c.domains[1].rotation == doctest::Approx(30 * M_PI / 180));

  const auto again = parse_experiment_config(experiment_config_json(c));
  CHECK(experiment_config_json(again) == experiment_config_json(c));

  CHECK_THROWS_AS(parse_experiment_config(R"({"domains": [{"id": "a"}], "configs": [{}], "bogus": 1})"),
                  ValidationError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"domains": [{"id": "a"}], "grid": {"depth": [1]}})"), ValidationError);
  CHECK_THROWS_AS(parse_experiment_config("{"), ParseError);

  const auto grid = parse_experiment_config(
      R"({"domains": [{"id": "a"}], "grid": {"depth": [1, 2], "label_noise": [0, 0.2], "ce_stop_margin": 0.1}})");
  REQUIRE(grid.grid.size() == 4);
  CHECK(grid.grid[0].ce_stop == doctest::Approx(0.1));
  // Noise 0.2 over two classes flips with probability 0.1.
  CHECK(grid.grid[1].ce_stop == doctest::Approx(0.1 - 0.9 * std::log(0.9) - 0.1 * std::log(0.1)));
}

TEST_CASE("default experiment") {
  const auto c = default_experiment(7);
  CHECK(c.domains.size() == 6);
  CHECK(c.domains.back().far_shift);
  CHECK(c.grid.size() == 36);
  CHECK(c.neighborhoods.size() == 2);
  CHECK(c.ablation.test_domain == "d00");
  CHECK(c.ablation.neighborhoods.size() == 10);
  CHECK_NOTHROW(validate(c));
  CHECK(experiment_config_json(parse_experiment_config(experiment_config_json(c))) == experiment_config_json(c));
}
