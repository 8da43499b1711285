#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace manismooth {

// Paired (measure, generalization) values. Construction validates length >= 2,
// equal lengths, and finiteness.
class PairedSample {
 public:
  PairedSample(std::vector<double> xs, std::vector<double> ys);

  std::span<const double> xs() const { return xs_; }
  std::span<const double> ys() const { return ys_; }
  std::size_t size() const { return xs_.size(); }

 private:
  std::vector<double> xs_;
  std::vector<double> ys_;
};

struct LinearFit {
  double a = 0.0;  // slope
  double b = 0.0;  // intercept

  double predict(double x) const { return a * x + b; }
};

enum class TauVariant { b, a };

// Integer pair counts behind Kendall's tau. concordant - discordant is exact.
struct KendallCounts {
  std::int64_t n0 = 0;          // n(n-1)/2
  std::int64_t ties_x = 0;      // pairs tied in x (n1)
  std::int64_t ties_y = 0;      // pairs tied in y (n2)
  std::int64_t ties_xy = 0;     // pairs tied in both
  std::int64_t discordant = 0;
  std::int64_t concordant = 0;
};

// O(n log n): sort by (x, y), then count inversions of y with a merge sort.
KendallCounts kendall_counts(const PairedSample& sample);

// Kendall's tau from pair counts; tau-b divides by sqrt((n0 - n1)(n0 - n2)).
// Throws UndefinedError when every x (or every y) is tied.
double kendall_tau(const KendallCounts& counts, TauVariant variant = TauVariant::b);
double kendall_tau(const PairedSample& sample, TauVariant variant = TauVariant::b);

// Least squares line through the sample. Throws UndefinedError when all xs are equal.
LinearFit ols_fit(const PairedSample& sample);

// 1 - SS_res / SS_tot. May be negative. Throws UndefinedError for constant `actual`.
double r_squared(std::span<const double> predicted, std::span<const double> actual);

double mean_absolute_error(std::span<const double> predicted, std::span<const double> actual);

double pearson(std::span<const double> xs, std::span<const double> ys);

}  // namespace manismooth
