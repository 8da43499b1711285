#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "../oracles.hpp"
#include "manismooth/error.hpp"
#include "manismooth/random.hpp"
#include "manismooth/smoothness.hpp"

using namespace manismooth;

namespace {

std::vector<ClassIndex> preds(std::initializer_list<int> v) { return {v.begin(), v.end()}; }

NeighborhoodPredictionLog random_log(std::size_t m, std::size_t n, int k, std::uint64_t seed) {
  Rng rng(seed);
  NeighborhoodPredictionLog log;
  log.model_id = "m";
  log.test_domain = "d";
  log.num_classes = k;
  for (std::size_t i = 0; i < m; ++i) {
    ExampleEntry e;
    e.example_id = "x" + std::to_string(i);
    for (std::size_t j = 0; j < n; ++j) e.neighborhood_predictions.push_back(static_cast<ClassIndex>(rng.below(k)));
    log.examples.push_back(std::move(e));
  }
  return log;
}

}  // namespace

TEST_CASE("decision distribution counts") {
  auto d = decision_distribution(preds({0, 0, 1, 0}), 2);
  CHECK(d.probs == std::vector<double>{0.75, 0.25});
  d = decision_distribution(preds({2, 2, 2}), 3);
  CHECK(d.probs == std::vector<double>{0.0, 0.0, 1.0});
  d = decision_distribution(preds({0, 1, 2}), 3);
  CHECK(d.probs[0] == doctest::Approx(1.0 / 3));
  CHECK(d.counts == std::vector<std::int64_t>{1, 1, 1});
  CHECK_THROWS_AS(decision_distribution(preds({}), 2), ValidationError);
  CHECK_THROWS_AS(decision_distribution(preds({0, 2}), 2), ValidationError);
}

TEST_CASE("dominant label ties go to the lowest index") {
  CHECK(dominant_label(decision_distribution(preds({0, 0, 0, 1}), 2)) == 0);
  CHECK(dominant_label(decision_distribution(preds({1, 0}), 2)) == 0);
  CHECK(dominant_label(decision_distribution(preds({0, 0, 1, 1, 1, 2, 2, 2, 2, 2}), 3)) == 2);
  CHECK(dominant_label(decision_distribution(preds({2, 1, 2, 1}), 3)) == 1);
}

TEST_CASE("smoothness values") {
  auto s = smoothness(preds({0, 0, 1, 0}), 2);
  CHECK(s.mu == 0.75);
  CHECK(s.dominant_label == 0);
  CHECK(s.dominant_count == 3);
  s = smoothness(preds({1, 1, 1, 1}), 2);
  CHECK(s.mu == 1.0);
  CHECK(s.neg_entropy == 0.0);
  s = smoothness(preds({0, 1}), 2);
  CHECK(s.mu == 0.5);
  CHECK(s.neg_entropy == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("smoothness bounds are attained") {
  for (int k = 2; k <= 5; ++k) {
    std::vector<ClassIndex> uniform, unanimous(7, k - 1);
    for (int c = 0; c < k; ++c) uniform.push_back(c);
    const auto u = smoothness(uniform, k);
    CHECK(u.mu == doctest::Approx(1.0 / k));
    CHECK(u.neg_entropy == doctest::Approx(-std::log(static_cast<double>(k))));
    const auto a = smoothness(unanimous, k);
    CHECK(a.mu == 1.0);
    CHECK(a.neg_entropy == 0.0);
  }
}

TEST_CASE("property: permutation invariance and relabeling equivariance") {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(4));
    std::vector<ClassIndex> p(1 + rng.below(40));
    for (auto& v : p) v = static_cast<ClassIndex>(rng.below(k));
    const auto base = smoothness(p, k);

    auto shuffled = p;
    rng.shuffle(std::span<ClassIndex>(shuffled));
    const auto s = smoothness(shuffled, k);
    CHECK(s.mu == base.mu);
    CHECK(s.dominant_label == base.dominant_label);
    CHECK(s.neg_entropy == doctest::Approx(base.neg_entropy).epsilon(1e-12));

    const auto dist = decision_distribution(p, k);
    const auto top = *std::max_element(dist.counts.begin(), dist.counts.end());
    if (std::count(dist.counts.begin(), dist.counts.end(), top) != 1) continue;
    std::vector<ClassIndex> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<ClassIndex>(perm));
    auto relabeled = p;
    for (auto& v : relabeled) v = perm[v];
    const auto r = smoothness(relabeled, k);
    CHECK(r.mu == base.mu);
    CHECK(r.dominant_label == perm[base.dominant_label]);
    CHECK(r.neg_entropy == doctest::Approx(base.neg_entropy).epsilon(1e-12));
  }
}

TEST_CASE("dataset smoothness is the per-example mean") {
  NeighborhoodPredictionLog two;
  two.model_id = "m";
  two.test_domain = "d";
  two.num_classes = 2;
  two.examples = {{"a", {}, {}, {1, 1}}, {"b", {}, {}, {0, 1}}};
  CHECK(dataset_smoothness(two, SmoothnessVariant::majority) == 0.75);

  NeighborhoodPredictionLog unanimous = two;
  unanimous.examples[1].neighborhood_predictions = {0, 0};
  CHECK(dataset_smoothness(unanimous, SmoothnessVariant::majority) == 1.0);

  // 100 examples, 10 uniform predictions over k=2, against the recount oracle.
  const auto log = random_log(100, 10, 2, 77);
  double mu = 0.0, ne = 0.0;
  for (const auto& e : log.examples) {
    const auto r = oracle::recount(e.neighborhood_predictions, 2);
    mu += static_cast<double>(r.dominant_count) / static_cast<double>(r.n);
    ne += r.neg_entropy;
  }
  CHECK(dataset_smoothness(log, SmoothnessVariant::majority) == mu / 100.0);
  CHECK(dataset_smoothness(log, SmoothnessVariant::neg_entropy) == doctest::Approx(ne / 100.0).epsilon(1e-14));

  NeighborhoodPredictionLog empty = two;
  empty.examples.clear();
  CHECK_THROWS_AS(dataset_smoothness(empty, SmoothnessVariant::majority), ValidationError);
}

TEST_CASE("subsample_examples") {
  const auto log = random_log(2000, 3, 2, 1);
  CHECK(subsample_examples(log, 2000, 7).examples == log.examples);
  const auto a = subsample_examples(log, 10, 7), b = subsample_examples(log, 10, 7);
  CHECK(a.examples == b.examples);
  CHECK(a.examples.size() == 10);
  CHECK_THROWS_AS(subsample_examples(log, 0, 7), ValidationError);
  CHECK_THROWS_AS(subsample_examples(log, 2001, 7), ValidationError);
}

TEST_CASE("property: subsamples are nested for one seed") {
  const auto log = random_log(300, 1, 2, 2);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    std::vector<std::string> prev;
    for (std::size_t size : {5u, 20u, 100u, 250u}) {
      std::vector<std::string> ids;
      for (const auto& e : subsample_examples(log, size, seed).examples) ids.push_back(e.example_id);
      std::vector<std::string> sorted_ids = ids, sorted_prev = prev;
      std::sort(sorted_ids.begin(), sorted_ids.end());
      std::sort(sorted_prev.begin(), sorted_prev.end());
      CHECK(std::includes(sorted_ids.begin(), sorted_ids.end(), sorted_prev.begin(), sorted_prev.end()));
      prev = ids;
    }
  }
}

TEST_CASE("truncate_neighborhood") {
  NeighborhoodPredictionLog log;
  log.model_id = "m";
  log.test_domain = "d";
  log.num_classes = 2;
  log.examples = {{"a", {}, {}, {0, 1, 0, 0}}, {"b", {}, {}, {1, 1, 0, 1}}};
  CHECK(truncate_neighborhood(log, 4).examples == log.examples);
  const auto two = truncate_neighborhood(log, 2);
  CHECK(two.examples[0].neighborhood_predictions == preds({0, 1}));
  CHECK(smoothness(two.examples[0].neighborhood_predictions, 2).mu == 0.5);
  for (const auto& e : truncate_neighborhood(log, 1).examples) {
    CHECK(smoothness(e.neighborhood_predictions, 2).mu == 1.0);
  }
  CHECK_THROWS_AS(truncate_neighborhood(log, 5), ValidationError);
  CHECK_THROWS_AS(truncate_neighborhood(log, 0), ValidationError);
}

TEST_CASE("property: mu standard deviation shrinks like sqrt(p(1-p)/n)") {
  const double p = 0.7;
  Rng rng(99);
  for (int n : {10, 100, 1000}) {
    std::vector<double> mus;
    for (int r = 0; r < 1000; ++r) {
      std::vector<ClassIndex> s(n);
      for (auto& v : s) v = rng.uniform() < p ? 0 : 1;
      mus.push_back(smoothness(s, 2).mu);
    }
    const double mean = std::accumulate(mus.begin(), mus.end(), 0.0) / mus.size();
    double var = 0.0;
    for (double m : mus) var += (m - mean) * (m - mean);
    const double sd = std::sqrt(var / (mus.size() - 1));
    const double expected = std::sqrt(p * (1 - p) / n);
    CHECK(sd < 1.5 * expected);
    CHECK(sd > expected / 1.5);
  }
}
