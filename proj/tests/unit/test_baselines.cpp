#include <doctest.h>

#include <cmath>

#include "../oracles.hpp"
#include "manismooth/baselines.hpp"
#include "manismooth/error.hpp"
#include "manismooth/random.hpp"

using namespace manismooth;

namespace {

DenseMatrix matrix(std::size_t rows, std::size_t cols, std::vector<double> v) { return {rows, cols, std::move(v)}; }

DenseMatrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  DenseMatrix m{rows, cols, {}};
  for (std::size_t i = 0; i < rows * cols; ++i) m.values.push_back(rng.normal());
  return m;
}

ScoreLog score_log(const std::vector<double>& conf, const std::vector<bool>& correct, Split split = Split::validation) {
  ScoreLog log;
  log.model_id = "m";
  log.domain = "d";
  log.split = split;
  log.num_classes = 2;
  for (std::size_t i = 0; i < conf.size(); ++i) {
    const ClassIndex predicted = 0;
    log.entries.push_back({"x" + std::to_string(i), correct[i] ? 0 : 1, predicted, conf[i], -0.1});
  }
  return log;
}

}  // namespace

TEST_CASE("atc threshold is the (err+1)-th smallest validation score") {
  const std::vector<double> s{0.9, 0.8, 0.6, 0.4};
  const auto t = atc_fit(s, {true, true, true, false}, ScoreKind::max_confidence);
  CHECK(t.threshold == 0.6);
  const ScoreColumn col{ScoreKind::max_confidence, s};
  CHECK(atc_predict(col, t) == 0.75);

  // Every candidate threshold that leaves exactly one score below it lies in (0.4, 0.6].
  int below = 0;
  for (double v : s) below += v < t.threshold;
  CHECK(below == 1);
}

TEST_CASE("atc boundary cases") {
  const std::vector<double> s{0.9, 0.8, 0.6, 0.4};
  const ScoreColumn col{ScoreKind::max_confidence, s};
  auto t = atc_fit(s, {true, true, true, true}, ScoreKind::max_confidence);
  CHECK(t.threshold <= 0.4);
  CHECK(atc_predict(col, t) == 1.0);
  t = atc_fit(s, {false, false, false, false}, ScoreKind::max_confidence);
  CHECK(t.threshold > 0.9);
  CHECK(atc_predict(col, t) == 0.0);
}

TEST_CASE("atc predict counts scores at or above the threshold") {
  AtcThreshold t;
  t.threshold = 0.6;
  const std::vector<double> test{0.7, 0.5, 0.9, 0.3};
  CHECK(atc_predict(ScoreColumn{ScoreKind::max_confidence, test}, t) == 0.5);
  const std::vector<double> high{0.7, 0.8};
  CHECK(atc_predict(ScoreColumn{ScoreKind::max_confidence, high}, t) == 1.0);
  CHECK_THROWS_AS(atc_predict(ScoreColumn{ScoreKind::neg_entropy, test}, t), ValidationError);
}

TEST_CASE("atc from score logs and error paths") {
  const auto v = score_log({0.95, 0.85, 0.7, 0.55}, {true, true, true, false});
  const auto t = atc_fit(v, ScoreKind::max_confidence);
  CHECK(atc_predict(v, t) == compute_accuracy(v));
  ScoreLog empty = v;
  empty.entries.clear();
  CHECK_THROWS(atc_fit(empty, ScoreKind::max_confidence));
  ScoreLog unlabeled = v;
  unlabeled.entries[0].true_label.reset();
  CHECK_THROWS_AS(atc_fit(unlabeled, ScoreKind::max_confidence), ValidationError);
}

TEST_CASE("property: atc reproduces validation accuracy exactly, even under ties") {
  Rng rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(60);
    std::vector<double> s(n);
    std::vector<bool> correct(n);
    std::size_t right = 0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = 0.5 + 0.1 * static_cast<double>(rng.below(5));  // heavy ties
      correct[i] = rng.below(3) != 0;
      right += correct[i];
    }
    const auto t = atc_fit(s, correct, ScoreKind::max_confidence);
    CHECK(atc_predict(ScoreColumn{ScoreKind::max_confidence, s}, t) ==
          doctest::Approx(static_cast<double>(right) / n).epsilon(1e-12));
  }
}

TEST_CASE("property: atc prediction is non-increasing in the threshold") {
  Rng rng(22);
  std::vector<double> s(200);
  for (auto& v : s) v = rng.uniform();
  const ScoreColumn col{ScoreKind::max_confidence, s};
  double prev = 2.0;
  for (double th = -0.1; th <= 1.1; th += 0.01) {
    AtcThreshold t;
    t.threshold = th;
    const double p = atc_predict(col, t);
    CHECK(p <= prev);
    prev = p;
  }
}

TEST_CASE("atc on a calibrated synthetic source") {
  Rng rng(23);
  auto draw = [&](std::size_t n, std::vector<double>& s, std::vector<bool>& c) {
    s.resize(n);
    c.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = rng.uniform();
      c[i] = rng.uniform() < s[i];
    }
  };
  std::vector<double> vs, ts;
  std::vector<bool> vc, tc;
  draw(10000, vs, vc);
  draw(10000, ts, tc);
  const auto t = atc_fit(vs, vc, ScoreKind::max_confidence);
  double actual = 0;
  for (bool b : tc) actual += b;
  actual /= tc.size();
  CHECK(std::abs(atc_predict(ScoreColumn{ScoreKind::max_confidence, ts}, t) - actual) < 0.03);
}

TEST_CASE("spectral norm") {
  CHECK(spectral_norm(matrix(2, 2, {3, 0, 0, 1})) == doctest::Approx(3.0).epsilon(1e-10));
  DenseMatrix eye = matrix(4, 4, std::vector<double>(16, 0.0));
  for (int i = 0; i < 4; ++i) eye.values[i * 5] = 1.0;
  CHECK(spectral_norm(eye) == doctest::Approx(1.0).epsilon(1e-10));

  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const auto w = random_matrix(5, 4, rng);
    const double want = oracle::max_singular_value(w.values, 5, 4);
    CHECK(std::abs(spectral_norm(w) - want) < 1e-8);
  }
}

TEST_CASE("property: spectral norm scales with |c|") {
  Rng rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    auto w = random_matrix(3, 6, rng);
    const double base = spectral_norm(w);
    const double c = rng.uniform(-5, 5);
    for (auto& v : w.values) v *= c;
    CHECK(spectral_norm(w) == doctest::Approx(std::abs(c) * base).epsilon(1e-8));
  }
}

TEST_CASE("spectral norm reports non-convergence") {
  Rng rng(33);
  const auto w = random_matrix(6, 6, rng);
  PowerIterationOptions o;
  o.max_iters = 1;
  o.tol = 1e-15;
  CHECK_THROWS_AS(spectral_norm(w, o), ConvergenceError);
}

TEST_CASE("norm measures") {
  WeightDump single{"m", {matrix(2, 2, {2, 0, 0, 2})}};
  auto n = norm_measures(single);
  CHECK(n.spectral == doctest::Approx(4.0));
  CHECK(n.frobenius == doctest::Approx(8.0));

  WeightDump two{"m", {matrix(2, 2, {1, 0, 0, 1}), matrix(2, 2, {1, 0, 0, 1})}};
  n = norm_measures(two);
  CHECK(n.spectral == doctest::Approx(1.0));
  CHECK(n.frobenius == doctest::Approx(4.0));

  Rng rng(34);
  WeightDump three{"m", {random_matrix(4, 2, rng), random_matrix(3, 4, rng), random_matrix(2, 3, rng)}};
  double spec = 1.0, frob = 1.0;
  for (const auto& l : three.layers) {
    const double s = oracle::max_singular_value(l.values, l.rows, l.cols);
    double f = 0;
    for (double v : l.values) f += v * v;
    spec *= s * s;
    frob *= f;
  }
  n = norm_measures(three);
  CHECK(n.spectral == doctest::Approx(spec).epsilon(1e-6));
  CHECK(n.frobenius == doctest::Approx(frob).epsilon(1e-6));
  CHECK(n.frobenius >= n.spectral);

  WeightDump reversed = three;
  std::reverse(reversed.layers.begin(), reversed.layers.end());
  CHECK(norm_measures(reversed).log_spectral == doctest::Approx(n.log_spectral).epsilon(1e-12));
}
