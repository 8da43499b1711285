#include "manismooth/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "manismooth/error.hpp"
#include "manismooth/random.hpp"

namespace manismooth {

std::string to_string(ScoreKind kind) { return kind == ScoreKind::max_confidence ? "max_confidence" : "neg_entropy"; }

std::vector<double> scores_of(const ScoreLog& log, ScoreKind kind) {
  std::vector<double> out;
  out.reserve(log.entries.size());
  for (const auto& e : log.entries) out.push_back(kind == ScoreKind::max_confidence ? e.max_confidence : e.neg_entropy);
  return out;
}

AtcThreshold atc_fit(std::span<const double> scores, const std::vector<bool>& correct, ScoreKind kind) {
  if (scores.empty()) throw ValidationError("ATC threshold needs at least one validation score");
  if (scores.size() != correct.size()) throw ValidationError("scores and correctness flags differ in length");
  for (double s : scores) {
    if (!std::isfinite(s)) throw ValidationError("non-finite validation score");
  }
  const std::size_t m = scores.size();
  const auto errors = static_cast<std::size_t>(std::count(correct.begin(), correct.end(), false));

  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());

  AtcThreshold t;
  t.score_kind = kind;
  if (errors == m) {
    t.threshold = std::nextafter(sorted.back(), std::numeric_limits<double>::infinity());
    return t;
  }
  t.threshold = sorted[errors];
  const auto below = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), t.threshold) - sorted.begin());
  const auto upto = static_cast<std::size_t>(std::upper_bound(sorted.begin(), sorted.end(), t.threshold) - sorted.begin());
  const std::size_t equal = upto - below;
  const std::size_t above = m - upto;
  // Weight on the tied block so that above + w * equal == m - errors.
  t.tie_numerator = static_cast<std::int64_t>(m - errors - above);
  t.tie_denominator = static_cast<std::int64_t>(equal);
  return t;
}

AtcThreshold atc_fit(const ScoreLog& validation, ScoreKind kind) {
  if (validation.entries.empty()) throw ValidationError("ATC fit on an empty validation log");
  std::vector<double> scores = scores_of(validation, kind);
  std::vector<bool> correct;
  correct.reserve(validation.entries.size());
  for (const auto& e : validation.entries) {
    if (!e.true_label) throw ValidationError("validation entry '" + e.example_id + "' lacks true_label");
    correct.push_back(*e.true_label == e.predicted_label);
  }
  AtcThreshold t = atc_fit(scores, correct, kind);
  t.model_id = validation.model_id;
  t.source_domain = validation.domain;
  return t;
}

double atc_predict(const ScoreColumn& scores, const AtcThreshold& threshold) {
  if (scores.kind != threshold.score_kind) {
    throw ValidationError("score kind mismatch: threshold fitted on " + to_string(threshold.score_kind) +
                          ", scores are " + to_string(scores.kind));
  }
  if (scores.values.empty()) throw ValidationError("ATC prediction on an empty score set");
  std::int64_t above = 0;
  std::int64_t ties = 0;
  for (double s : scores.values) {
    if (s > threshold.threshold) {
      ++above;
    } else if (s == threshold.threshold) {
      ++ties;
    }
  }
  // Integer numerator and denominator: the division is the only rounding step.
  const std::int64_t num = above * threshold.tie_denominator + ties * threshold.tie_numerator;
  const std::int64_t den = static_cast<std::int64_t>(scores.values.size()) * threshold.tie_denominator;
  return static_cast<double>(num) / static_cast<double>(den);
}

double atc_predict(const ScoreLog& test, const AtcThreshold& threshold) {
  if (!threshold.model_id.empty() && test.model_id != threshold.model_id) {
    throw ValidationError("threshold belongs to model '" + threshold.model_id + "', test log to '" + test.model_id + "'");
  }
  const auto values = scores_of(test, threshold.score_kind);
  return atc_predict(ScoreColumn{threshold.score_kind, values}, threshold);
}

namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void mat_vec(const DenseMatrix& w, std::span<const double> v, std::span<double> out) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    double s = 0.0;
    const double* row = &w.values[r * w.cols];
    for (std::size_t c = 0; c < w.cols; ++c) s += row[c] * v[c];
    out[r] = s;
  }
}

void mat_t_vec(const DenseMatrix& w, std::span<const double> u, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* row = &w.values[r * w.cols];
    for (std::size_t c = 0; c < w.cols; ++c) out[c] += row[c] * u[r];
  }
}

}  // namespace

double frobenius_norm(const DenseMatrix& w) {
  validate(w);
  return norm2(w.values);
}

double spectral_norm(const DenseMatrix& w, const PowerIterationOptions& options) {
  validate(w);
  if (!(options.tol > 0.0)) throw ValidationError("power iteration tolerance must be positive");
  if (frobenius_norm(w) == 0.0) return 0.0;

  Rng rng(options.seed);
  std::vector<double> v(w.cols), u(w.rows), next(w.cols);
  auto restart = [&] {
    for (auto& x : v) x = rng.normal();
    const double n = norm2(v);
    for (auto& x : v) x /= n;
  };
  restart();

  double lambda = 0.0;
  double gap = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < options.max_iters; ++iter) {
    mat_vec(w, v, u);
    const double un = norm2(u);
    if (un == 0.0) {
      // Start vector fell in the null space.
      restart();
      continue;
    }
    const double lambda_new = un * un;
    mat_t_vec(w, u, next);
    const double nn = norm2(next);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = next[i] / nn;
    gap = std::abs(lambda_new - lambda) / lambda_new;
    lambda = lambda_new;
    if (gap < options.tol) {
      mat_vec(w, v, u);
      return norm2(u);
    }
  }
  throw ConvergenceError("power iteration did not converge in " + std::to_string(options.max_iters) + " iterations",
                         gap);
}

NormMeasure norm_measures(const WeightDump& weights, const PowerIterationOptions& options) {
  if (weights.layers.empty()) throw ValidationError("norm measures need at least one layer");
  NormMeasure m;
  for (std::size_t i = 0; i < weights.layers.size(); ++i) {
    const auto& layer = weights.layers[i];
    const double s = spectral_norm(layer, options);
    const double f = frobenius_norm(layer);
    if (s == 0.0) {
      throw ValidationError("model '" + weights.model_id + "' layer " + std::to_string(i) + " is all zeros");
    }
    m.log_spectral += 2.0 * std::log(s);
    m.log_frobenius += 2.0 * std::log(f);
  }
  m.spectral = std::exp(m.log_spectral);
  m.frobenius = std::exp(m.log_frobenius);
  return m;
}

}  // namespace manismooth
