#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "perfect/errors.hpp"

namespace perfect::stats {

struct GofReport {
  std::string test;  // "chi-square", "two-sample chi-square", "KS", "two-sample KS", "contingency chi-square"
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t n1 = 0;
  std::size_t n2 = 0;
  double dof = 0.0;
};

inline double chi_square_sf(double stat, double dof) {
  if (dof <= 0.0) return 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(dof), std::max(stat, 0.0)));
}

// Pearson goodness of fit of integer counts against cell probabilities.
// Cells with expected count below 5 are pooled into one cell.
inline GofReport chi_square_gof(std::span<const double> counts, std::span<const double> probs) {
  if (counts.size() != probs.size() || counts.empty()) throw ConfigError("chi-square: shape mismatch");
  const double n = std::accumulate(counts.begin(), counts.end(), 0.0);
  if (n <= 0.0) throw ConfigError("chi-square: empty sample");
  double stat = 0.0;
  std::size_t cells = 0;
  double pooled_obs = 0.0, pooled_exp = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double e = n * probs[i];
    if (e < 5.0) {
      pooled_obs += counts[i];
      pooled_exp += e;
      continue;
    }
    stat += (counts[i] - e) * (counts[i] - e) / e;
    ++cells;
  }
  if (pooled_exp > 0.0) {
    stat += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / pooled_exp;
    ++cells;
  } else if (pooled_obs > 0.0) {
    stat = std::numeric_limits<double>::infinity();  // mass where the law has none
  }
  const double dof = cells > 0 ? static_cast<double>(cells - 1) : 0.0;
  return {"chi-square", stat, std::isinf(stat) ? 0.0 : chi_square_sf(stat, dof), static_cast<std::size_t>(n), 0, dof};
}

// Chi-square test of homogeneity for an r x k table of counts.
inline GofReport contingency_chi_square(const std::vector<std::vector<double>>& table) {
  if (table.size() < 2) throw ConfigError("contingency: need at least two rows");
  const std::size_t k = table.front().size();
  std::vector<double> col(k, 0.0), row(table.size(), 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < table.size(); ++r) {
    if (table[r].size() != k) throw ConfigError("contingency: ragged table");
    for (std::size_t c = 0; c < k; ++c) {
      col[c] += table[r][c];
      row[r] += table[r][c];
      total += table[r][c];
    }
  }
  if (total <= 0.0) throw ConfigError("contingency: empty table");
  double stat = 0.0;
  std::size_t used_cols = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (col[c] <= 0.0) continue;
    ++used_cols;
    for (std::size_t r = 0; r < table.size(); ++r) {
      const double e = row[r] * col[c] / total;
      if (e > 0.0) stat += (table[r][c] - e) * (table[r][c] - e) / e;
    }
  }
  std::size_t used_rows = 0;
  for (double v : row) used_rows += v > 0.0;
  const double dof = static_cast<double>((used_rows > 0 ? used_rows - 1 : 0) * (used_cols > 0 ? used_cols - 1 : 0));
  GofReport rep{"contingency chi-square", stat, chi_square_sf(stat, dof), static_cast<std::size_t>(row[0]),
                static_cast<std::size_t>(row.size() > 1 ? row[1] : 0), dof};
  return rep;
}

inline GofReport two_sample_chi_square(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("two-sample chi-square: shape mismatch");
  auto rep = contingency_chi_square({std::vector<double>(a.begin(), a.end()), std::vector<double>(b.begin(), b.end())});
  rep.test = "two-sample chi-square";
  return rep;
}

// Kolmogorov limiting survival function Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2).
inline double kolmogorov_sf(double lambda) {
  if (lambda < 1e-3) return 1.0;
  if (lambda < 0.3) {
    // Dual series, convergent for small lambda.
    const double pi = 3.14159265358979323846;
    double cdf = 0.0;
    for (int k = 1; k < 200; ++k) {
      const double a = (2.0 * k - 1.0) * pi / lambda;
      cdf += std::exp(-a * a / 8.0);
    }
    cdf *= std::sqrt(2.0 * pi) / lambda;
    return std::clamp(1.0 - cdf, 0.0, 1.0);
  }
  double sum = 0.0, sign = 1.0;
  for (int k = 1; k < 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += sign * term;
    if (term < 1e-18) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

// p-value with Stephens' finite-sample correction.
inline double ks_p_value(double d, double n_eff) {
  const double s = std::sqrt(n_eff);
  return kolmogorov_sf((s + 0.12 + 0.11 / s) * d);
}

inline GofReport ks_one_sample(std::vector<double> sample, const std::function<double(double)>& cdf) {
  if (sample.empty()) throw ConfigError("KS: empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return {"KS", d, ks_p_value(d, n), sample.size(), 0, 0.0};
}

inline GofReport ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ConfigError("KS: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return {"two-sample KS", d, ks_p_value(d, na * nb / (na + nb)), a.size(), b.size(), 0.0};
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  double variance = 0.0;
  std::size_t n = 0;
};

inline MeanSe mean_se(std::span<const double> xs) {
  MeanSe out;
  out.n = xs.size();
  if (xs.empty()) return out;
  // Two-pass for accuracy.
  const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  out.mean = m;
  out.variance = xs.size() > 1 ? ss / static_cast<double>(xs.size() - 1) : 0.0;
  out.se = std::sqrt(out.variance / static_cast<double>(xs.size()));
  return out;
}

inline double lag1_autocorrelation(std::span<const double> xs) {
  if (xs.size() < 3) return 0.0;
  const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    den += (xs[i] - m) * (xs[i] - m);
    if (i + 1 < xs.size()) num += (xs[i] - m) * (xs[i + 1] - m);
  }
  return den > 0.0 ? num / den : 0.0;
}

// Counts of `values` per label (exact match); values outside the labels throw.
template <typename T>
std::vector<double> tally(std::span<const T> values, std::span<const T> labels) {
  std::vector<double> counts(labels.size(), 0.0);
  for (const auto& v : values) {
    const auto it = std::find(labels.begin(), labels.end(), v);
    if (it == labels.end()) throw ConfigError("tally: value outside the label set");
    counts[static_cast<std::size_t>(it - labels.begin())] += 1.0;
  }
  return counts;
}

// Counts in equal-width bins over [lo, hi).
inline std::vector<double> histogram(std::span<const double> xs, double lo, double hi, std::size_t bins) {
  std::vector<double> counts(bins, 0.0);
  for (double x : xs) {
    auto b = static_cast<long>(std::floor((x - lo) / (hi - lo) * static_cast<double>(bins)));
    b = std::clamp(b, 0L, static_cast<long>(bins) - 1);
    counts[static_cast<std::size_t>(b)] += 1.0;
  }
  return counts;
}

}  // namespace perfect::stats
