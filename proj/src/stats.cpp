#include "manismooth/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "manismooth/error.hpp"

namespace manismooth {

namespace {

void check_lengths(std::span<const double> a, std::span<const double> b, std::size_t min_len) {
  if (a.size() != b.size()) {
    throw ValidationError("length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  if (a.size() < min_len) throw ValidationError("need at least " + std::to_string(min_len) + " values");
}

double mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

// Number of pairs tied within runs of equal values in an already-sorted range.
template <typename It, typename Eq>
std::int64_t tied_pairs(It first, It last, Eq eq) {
  std::int64_t pairs = 0;
  while (first != last) {
    It run = first;
    std::int64_t len = 0;
    while (run != last && eq(*run, *first)) {
      ++run;
      ++len;
    }
    pairs += len * (len - 1) / 2;
    first = run;
  }
  return pairs;
}

// Sorts v ascending, returns the number of strict inversions.
std::int64_t merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<std::int64_t>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

}  // namespace

PairedSample::PairedSample(std::vector<double> xs, std::vector<double> ys) : xs_(std::move(xs)), ys_(std::move(ys)) {
  check_lengths(xs_, ys_, 2);
  for (std::size_t i = 0; i < xs_.size(); ++i) {
    if (!std::isfinite(xs_[i]) || !std::isfinite(ys_[i])) throw ValidationError("non-finite value in paired sample");
  }
}

KendallCounts kendall_counts(const PairedSample& sample) {
  const std::size_t n = sample.size();
  std::vector<std::pair<double, double>> pts(n);
  for (std::size_t i = 0; i < n; ++i) pts[i] = {sample.xs()[i], sample.ys()[i]};
  std::sort(pts.begin(), pts.end());

  KendallCounts c;
  c.n0 = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
  c.ties_x = tied_pairs(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first == b.first; });
  c.ties_xy = tied_pairs(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a == b; });

  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = pts[i].second;
  std::vector<double> buf(n);
  // Within an x-tie block ys are ascending, so those pairs never count as inversions.
  c.discordant = merge_count(ys, buf, 0, n);
  c.ties_y = tied_pairs(ys.begin(), ys.end(), [](double a, double b) { return a == b; });
  c.concordant = c.n0 - c.ties_x - c.ties_y + c.ties_xy - c.discordant;
  return c;
}

double kendall_tau(const KendallCounts& c, TauVariant variant) {
  if (c.ties_x == c.n0 || c.ties_y == c.n0) {
    throw UndefinedError("Kendall tau undefined: every pair is tied in one variable");
  }
  const double numerator = static_cast<double>(c.concordant - c.discordant);
  if (variant == TauVariant::a) return numerator / static_cast<double>(c.n0);
  const double denom = std::sqrt(static_cast<double>(c.n0 - c.ties_x) * static_cast<double>(c.n0 - c.ties_y));
  return std::clamp(numerator / denom, -1.0, 1.0);
}

double kendall_tau(const PairedSample& sample, TauVariant variant) { return kendall_tau(kendall_counts(sample), variant); }

LinearFit ols_fit(const PairedSample& sample) {
  const auto xs = sample.xs();
  const auto ys = sample.ys();
  const double mx = mean(xs);
  const double my = mean(ys);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    sxx += dx * dx;
    sxy += dx * (ys[i] - my);
  }
  if (sxx == 0.0) throw UndefinedError("least squares fit undefined: all x values are identical");
  LinearFit fit;
  fit.a = sxy / sxx;
  fit.b = my - fit.a * mx;
  return fit;
}

double r_squared(std::span<const double> predicted, std::span<const double> actual) {
  check_lengths(predicted, actual, 2);
  const double m = mean(actual);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    ss_res += (actual[i] - predicted[i]) * (actual[i] - predicted[i]);
    ss_tot += (actual[i] - m) * (actual[i] - m);
  }
  if (ss_tot == 0.0) throw UndefinedError("R^2 undefined: actual values have zero variance");
  return 1.0 - ss_res / ss_tot;
}

double mean_absolute_error(std::span<const double> predicted, std::span<const double> actual) {
  check_lengths(predicted, actual, 1);
  double total = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) total += std::abs(predicted[i] - actual[i]);
  return total / static_cast<double>(actual.size());
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  check_lengths(xs, ys, 2);
  const double mx = mean(xs), my = mean(ys);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedError("Pearson correlation undefined for a constant variable");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace manismooth
