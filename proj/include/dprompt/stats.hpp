// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The dprompt Authors

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "dprompt/core.hpp"

namespace dprompt {

/// 1-based ranks; tied values share the average of their positions.
inline std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> xs, std::span<const double> ys) {
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw UsageError("correlation undefined for a constant vector");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Two-sided p-value of a Student t statistic.
inline double t_two_sided_p(double t, double dof) {
  if (std::isinf(t)) return 0.0;
  boost::math::students_t dist(dof);
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
}

struct Correlation {
  double rho = 0.0;
  double p_value = 1.0;
};

/// Spearman rank correlation with the t-approximation p-value (n − 2 dof).
inline Correlation spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw UsageError("spearman: length mismatch");
  if (xs.size() < 3) throw UsageError("spearman: needs at least 3 pairs");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  Correlation c;
  c.rho = pearson(rx, ry);
  const double dof = static_cast<double>(xs.size()) - 2.0;
  if (std::abs(c.rho) >= 1.0) {
    c.p_value = 0.0;
  } else {
    c.p_value = t_two_sided_p(c.rho * std::sqrt(dof / (1.0 - c.rho * c.rho)), dof);
  }
  return c;
}

/// Two-sided paired t-test. Zero variance of the differences is degenerate:
/// p = 0 if the mean difference is nonzero, p = 1 otherwise.
inline double paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("paired_ttest: length mismatch");
  if (a.size() < 2) throw UsageError("paired_ttest: needs at least 2 pairs");
  const auto n = static_cast<double>(a.size());
  std::vector<double> d(a.size());
  double max_abs = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = a[i] - b[i];
    max_abs = std::max(max_abs, std::abs(d[i]));
  }
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  // differences equal up to rounding, e.g. a = b + c
  if (sd <= 1e-12 * max_abs || max_abs == 0.0) return mean != 0.0 ? 0.0 : 1.0;
  return t_two_sided_p(mean / (sd / std::sqrt(n)), n - 1.0);
}

}  // namespace dprompt
