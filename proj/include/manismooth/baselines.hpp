#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "manismooth/ingest.hpp"

namespace manismooth {

enum class ScoreKind { max_confidence, neg_entropy };

std::string to_string(ScoreKind kind);

// Average Thresholded Confidence: a threshold fitted on labeled validation
// scores so that the fraction of validation points at or above it equals the
// validation accuracy.
//
// Scores strictly above `threshold` count as predicted-correct. Scores equal to
// it count with weight tie_numerator / tie_denominator, which is 1 unless
// several validation scores sit exactly on the threshold; the fractional weight
// keeps atc_predict(validation) == validation accuracy exact under ties.
struct AtcThreshold {
  ScoreKind score_kind = ScoreKind::max_confidence;
  double threshold = 0.0;
  std::int64_t tie_numerator = 1;
  std::int64_t tie_denominator = 1;
  std::string source_domain;
  std::string model_id;

  double tie_weight() const { return static_cast<double>(tie_numerator) / static_cast<double>(tie_denominator); }
};

// A single column of per-example scores of one kind.
struct ScoreColumn {
  ScoreKind kind;
  std::span<const double> values;
};

std::vector<double> scores_of(const ScoreLog& log, ScoreKind kind);

// Threshold is the (err+1)-th smallest validation score, where err is the
// number of misclassified validation examples; when every example is wrong it
// is the next double above the maximum score.
AtcThreshold atc_fit(const ScoreLog& validation, ScoreKind kind);
AtcThreshold atc_fit(std::span<const double> scores, const std::vector<bool>& correct, ScoreKind kind);

double atc_predict(const ScoreLog& test, const AtcThreshold& threshold);
double atc_predict(const ScoreColumn& scores, const AtcThreshold& threshold);

struct PowerIterationOptions {
  double tol = 1e-10;
  int max_iters = 10'000;
  std::uint64_t seed = 0x5eed;
};

// Largest singular value by power iteration on W^T W. The result equals
// ||W v|| / ||v|| for the final iterate v. Throws ConvergenceError after max_iters.
double spectral_norm(const DenseMatrix& w, const PowerIterationOptions& options = {});

double frobenius_norm(const DenseMatrix& w);

// Products over layers of squared norms, accumulated as sums of logs.
struct NormMeasure {
  double log_spectral = 0.0;   // sum_i 2 log ||W_i||_2
  double log_frobenius = 0.0;  // sum_i 2 log ||W_i||_F
  double spectral = 0.0;       // exp(log_spectral); may be +inf for very deep nets
  double frobenius = 0.0;
};

NormMeasure norm_measures(const WeightDump& weights, const PowerIterationOptions& options = {});

}  // namespace manismooth
