#include <doctest.h>

#include <cmath>

#include "../oracles.hpp"
#include "manismooth/error.hpp"
#include "manismooth/random.hpp"
#include "manismooth/stats.hpp"

using namespace manismooth;

TEST_CASE("paired sample validation") {
  CHECK_THROWS_AS(PairedSample({1.0}, {1.0}), ValidationError);
  CHECK_THROWS_AS(PairedSample({1.0, 2.0}, {1.0}), ValidationError);
  CHECK_THROWS_AS(PairedSample({1.0, NAN}, {1.0, 2.0}), ValidationError);
}

TEST_CASE("kendall tau small cases") {
  CHECK(kendall_tau(PairedSample({1, 2, 3}, {1, 2, 3})) == 1.0);
  CHECK(kendall_tau(PairedSample({1, 2, 3}, {3, 2, 1})) == -1.0);
  CHECK(kendall_tau(PairedSample({1, 2, 3}, {1, 3, 2})) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK_THROWS_AS(kendall_tau(PairedSample({1, 1, 1}, {1, 2, 3})), UndefinedError);
}

TEST_CASE("kendall tau-a keeps the full pair count in the denominator") {
  // Pairs: (1,2) tied in x, others concordant: C=2, D=0, n0=3.
  const PairedSample s({1, 1, 2}, {1, 2, 3});
  CHECK(kendall_tau(s, TauVariant::a) == doctest::Approx(2.0 / 3));
  CHECK(kendall_tau(s, TauVariant::b) == doctest::Approx(2.0 / std::sqrt(2.0 * 3.0)));
}

TEST_CASE("property: tau counts match pair enumeration with ties") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(120);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(rng.below(1 + rng.below(8) + 1));
      y[i] = static_cast<double>(rng.below(10));
    }
    const auto got = kendall_counts(PairedSample(x, y));
    const auto want = oracle::enumerate_pairs(x, y);
    CHECK(got.concordant == want.concordant);
    CHECK(got.discordant == want.discordant);
    CHECK(got.ties_x == want.ties_x);
    CHECK(got.ties_y == want.ties_y);
    CHECK(got.ties_xy == want.ties_xy);
    CHECK(got.n0 == want.n0);
  }
}

TEST_CASE("property: tau is antisymmetric and invariant to increasing transforms") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(30), y(30), neg(30), fx(30);
    for (int i = 0; i < 30; ++i) {
      x[i] = rng.uniform();
      y[i] = x[i] + rng.normal(0, 0.3);
      neg[i] = -y[i];
      fx[i] = std::exp(3 * x[i]) - 2;
    }
    const double t = kendall_tau(PairedSample(x, y));
    CHECK(kendall_tau(PairedSample(x, neg)) == -t);
    CHECK(kendall_tau(PairedSample(fx, y)) == t);
  }
}

TEST_CASE("ols fit") {
  auto f = ols_fit(PairedSample({0, 1}, {1, 3}));
  CHECK(f.a == doctest::Approx(2.0));
  CHECK(f.b == doctest::Approx(1.0));

  std::vector<double> x, y;
  for (int i = 0; i < 10; ++i) {
    x.push_back(i * 0.37);
    y.push_back(-0.5 * x.back() + 4);
  }
  f = ols_fit(PairedSample(x, y));
  CHECK(std::abs(f.a + 0.5) < 1e-12);
  CHECK(std::abs(f.b - 4.0) < 1e-12);
  CHECK_THROWS_AS(ols_fit(PairedSample({2, 2}, {1, 3})), UndefinedError);
}

TEST_CASE("ols fit agrees with a grid search on noisy data") {
  Rng rng(12);
  std::vector<double> x(100), y(100);
  for (int i = 0; i < 100; ++i) {
    x[i] = rng.uniform(-1, 1);
    y[i] = 0.8 * x[i] + 0.1 + rng.normal(0, 0.2);
  }
  const auto f = ols_fit(PairedSample(x, y));
  const auto [a, b] = oracle::grid_search_line(x, y);
  CHECK(std::abs(f.a - a) < 1e-4);
  CHECK(std::abs(f.b - b) < 1e-4);
  // Normal equations: residuals orthogonal to 1 and x.
  double r1 = 0, rx = 0;
  for (int i = 0; i < 100; ++i) {
    const double r = y[i] - f.predict(x[i]);
    r1 += r;
    rx += r * x[i];
  }
  CHECK(std::abs(r1) < 1e-10);
  CHECK(std::abs(rx) < 1e-10);
}

TEST_CASE("r squared") {
  const std::vector<double> actual{0.2, 0.5, 0.9};
  CHECK(r_squared(actual, actual) == 1.0);
  CHECK(r_squared(std::vector<double>(3, (0.2 + 0.5 + 0.9) / 3), actual) == doctest::Approx(0.0));
  CHECK(r_squared(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == doctest::Approx(-3.0));
  CHECK_THROWS_AS(r_squared(std::vector<double>{1, 2}, std::vector<double>{1, 1}), UndefinedError);
}

TEST_CASE("mean absolute error") {
  const std::vector<double> v{0.1, 0.4};
  CHECK(mean_absolute_error(v, v) == 0.0);
  CHECK(mean_absolute_error(std::vector<double>{0.5, 0.7}, std::vector<double>{0.6, 0.6}) == doctest::Approx(0.1));
  Rng rng(8);
  std::vector<double> p(57), a(57);
  double sum = 0;
  for (int i = 0; i < 57; ++i) {
    p[i] = rng.uniform();
    a[i] = rng.uniform();
    sum += std::abs(p[i] - a[i]);
  }
  CHECK(mean_absolute_error(p, a) == doctest::Approx(sum / 57).epsilon(1e-14));
}

TEST_CASE("pearson") {
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6}) == doctest::Approx(1.0));
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}) == doctest::Approx(-1.0));
}
