#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "manismooth/ingest.hpp"

namespace manismooth {

// Empirical distribution of a classifier's decisions over one point's
// neighborhood samples.
struct DecisionDistribution {
  std::vector<std::int64_t> counts;  // per class
  std::int64_t n = 0;                // total samples
  std::vector<double> probs;         // counts / n

  int num_classes() const { return static_cast<int>(counts.size()); }
};

struct SmoothnessScore {
  double mu = 0.0;              // fraction of samples agreeing with the dominant label
  std::int64_t dominant_count = 0;  // mu == dominant_count / n exactly
  std::int64_t n = 0;
  ClassIndex dominant_label = 0;
  double neg_entropy = 0.0;     // sum_j p_j log p_j, natural log, 0 log 0 = 0
};

enum class SmoothnessVariant { majority, neg_entropy };

DecisionDistribution decision_distribution(std::span<const ClassIndex> predictions, int num_classes);

// Argmax of the distribution; ties go to the lowest class index.
ClassIndex dominant_label(const DecisionDistribution& dist);

double neg_entropy(const DecisionDistribution& dist);

// The dominant label and mu come from the same samples, so a single sample
// always yields mu == 1.
SmoothnessScore smoothness(std::span<const ClassIndex> predictions, int num_classes);

// Mean per-example score over the whole log.
double dataset_smoothness(const NeighborhoodPredictionLog& log, SmoothnessVariant variant);

// Uniform sample of `size` examples without replacement, kept in log order.
// Samples for one seed are nested: the size-s result is a subset of the size-s' result for s < s'.
NeighborhoodPredictionLog subsample_examples(const NeighborhoodPredictionLog& log, std::size_t size,
                                             std::uint64_t seed);

// Keeps the first n_keep predictions of every example.
NeighborhoodPredictionLog truncate_neighborhood(const NeighborhoodPredictionLog& log, std::size_t n_keep);

}  // namespace manismooth
