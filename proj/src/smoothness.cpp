#include "manismooth/smoothness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "manismooth/error.hpp"
#include "manismooth/random.hpp"

namespace manismooth {

DecisionDistribution decision_distribution(std::span<const ClassIndex> predictions, int num_classes) {
  if (num_classes < 2) throw ValidationError("num_classes must be >= 2");
  if (predictions.empty()) throw ValidationError("decision distribution of an empty neighborhood");
  DecisionDistribution d;
  d.counts.assign(static_cast<std::size_t>(num_classes), 0);
  for (ClassIndex c : predictions) {
    if (c < 0 || c >= num_classes) {
      throw ValidationError("class index " + std::to_string(c) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    ++d.counts[static_cast<std::size_t>(c)];
  }
  d.n = static_cast<std::int64_t>(predictions.size());
  d.probs.resize(d.counts.size());
  for (std::size_t j = 0; j < d.counts.size(); ++j) {
    d.probs[j] = static_cast<double>(d.counts[j]) / static_cast<double>(d.n);
  }
  return d;
}

ClassIndex dominant_label(const DecisionDistribution& dist) {
  // Compare integer counts; max_element returns the first maximum.
  auto it = std::max_element(dist.counts.begin(), dist.counts.end());
  return static_cast<ClassIndex>(it - dist.counts.begin());
}

double neg_entropy(const DecisionDistribution& dist) {
  double h = 0.0;
  for (double p : dist.probs) {
    if (p > 0.0) h += p * std::log(p);
  }
  return std::min(h, 0.0);
}

SmoothnessScore smoothness(std::span<const ClassIndex> predictions, int num_classes) {
  const auto dist = decision_distribution(predictions, num_classes);
  SmoothnessScore s;
  s.dominant_label = dominant_label(dist);
  s.dominant_count = dist.counts[static_cast<std::size_t>(s.dominant_label)];
  s.n = dist.n;
  s.mu = static_cast<double>(s.dominant_count) / static_cast<double>(s.n);
  s.neg_entropy = neg_entropy(dist);
  return s;
}

double dataset_smoothness(const NeighborhoodPredictionLog& log, SmoothnessVariant variant) {
  if (log.examples.empty()) throw ValidationError("dataset smoothness of an empty log");
  double total = 0.0;
  for (const auto& e : log.examples) {
    const auto s = smoothness(e.neighborhood_predictions, log.num_classes);
    total += variant == SmoothnessVariant::majority ? s.mu : s.neg_entropy;
  }
  return total / static_cast<double>(log.examples.size());
}

NeighborhoodPredictionLog subsample_examples(const NeighborhoodPredictionLog& log, std::size_t size,
                                             std::uint64_t seed) {
  const std::size_t m = log.examples.size();
  if (size < 1 || size > m) {
    throw ValidationError("subsample size " + std::to_string(size) + " outside [1, " + std::to_string(m) + "]");
  }
  // One seeded permutation per (seed, m); prefixes of it give the nested samples.
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, m));
  rng.shuffle(std::span<std::size_t>(order));
  order.resize(size);
  std::sort(order.begin(), order.end());

  NeighborhoodPredictionLog out = log;
  out.examples.clear();
  out.examples.reserve(size);
  for (std::size_t i : order) out.examples.push_back(log.examples[i]);
  return out;
}

NeighborhoodPredictionLog truncate_neighborhood(const NeighborhoodPredictionLog& log, std::size_t n_keep) {
  if (n_keep < 1) throw ValidationError("n_keep must be >= 1");
  NeighborhoodPredictionLog out = log;
  for (auto& e : out.examples) {
    if (e.neighborhood_predictions.size() < n_keep) {
      throw ValidationError("example '" + e.example_id + "' has only " +
                            std::to_string(e.neighborhood_predictions.size()) + " neighborhood predictions, need " +
                            std::to_string(n_keep));
    }
    e.neighborhood_predictions.resize(n_keep);
  }
  return out;
}

}  // namespace manismooth
