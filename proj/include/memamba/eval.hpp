#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace memamba {

// Regularized upper incomplete gamma Q(a, x) via the power series for
// x < a + 1 and a modified Lentz continued fraction otherwise.
inline double gamma_q(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw std::domain_error("gamma_q: invalid arguments");
  if (x == 0.0) return 1.0;
  double lg = std::lgamma(a);
  if (x < a + 1.0) {
    // P(a,x) series; Q = 1 - P.
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int i = 0; i < 500; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-16) break;
    }
    double p = sum * std::exp(-x + a * std::log(x) - lg);
    return 1.0 - p;
  }
  double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 500; ++i) {
    double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - lg) * h;
}

// Survival function of the chi-squared distribution.
inline double chi2_sf(double x, double dof) {
  if (x <= 0.0) return 1.0;
  return gamma_q(0.5 * dof, 0.5 * x);
}

// Harrell's concordance: over pairs with T_i < T_j and patient i uncensored,
// credit 1 if risk_i > risk_j, 0.5 on risk ties.
inline double c_index(const std::vector<double>& risks,
                      const std::vector<double>& times,
                      const std::vector<int>& censors) {
  std::size_t n = times.size();
  if (risks.size() != n || censors.size() != n)
    throw std::invalid_argument("c_index: input lengths differ");
  double concordant = 0.0;
  double comparable = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (censors[i] != 0) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (times[i] >= times[j]) continue;
      comparable += 1.0;
      if (risks[i] > risks[j])
        concordant += 1.0;
      else if (risks[i] == risks[j])
        concordant += 0.5;
    }
  }
  if (comparable == 0.0)
    throw std::runtime_error("c_index: no comparable pairs, metric undefined");
  return concordant / comparable;
}

// Product-limit survival estimate over distinct event times.
struct KMCurve {
  std::vector<double> times;     // distinct event times, ascending
  std::vector<double> at_risk;   // n_i at each event time
  std::vector<double> events;    // d_i at each event time
  std::vector<double> survival;  // S(t_i), non-increasing from 1
};

inline KMCurve km_curve(const std::vector<double>& times,
                        const std::vector<int>& censors) {
  std::size_t n = times.size();
  if (n == 0) throw std::invalid_argument("km_curve: empty cohort");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
  KMCurve curve;
  double surv = 1.0;
  std::size_t i = 0;
  double at_risk = static_cast<double>(n);
  while (i < n) {
    double t = times[order[i]];
    double d = 0.0, removed = 0.0;
    while (i < n && times[order[i]] == t) {
      if (censors[order[i]] == 0) d += 1.0;
      removed += 1.0;
      ++i;
    }
    if (d > 0.0) {
      surv *= 1.0 - d / at_risk;
      curve.times.push_back(t);
      curve.at_risk.push_back(at_risk);
      curve.events.push_back(d);
      curve.survival.push_back(surv);
    }
    at_risk -= removed;
  }
  return curve;
}

struct LogRankResult {
  double chi2 = 0.0;
  double p = 1.0;
};

// Two-group log-rank test; p from the chi-squared(1) survival function.
inline LogRankResult logrank_test(const std::vector<double>& times_a,
                                  const std::vector<int>& censors_a,
                                  const std::vector<double>& times_b,
                                  const std::vector<int>& censors_b) {
  if (times_a.empty() || times_b.empty())
    throw std::invalid_argument("logrank_test: both groups must be nonempty");
  struct Obs {
    double t;
    int censor;
    int group;
  };
  std::vector<Obs> all;
  all.reserve(times_a.size() + times_b.size());
  for (std::size_t i = 0; i < times_a.size(); ++i)
    all.push_back({times_a[i], censors_a[i], 0});
  for (std::size_t i = 0; i < times_b.size(); ++i)
    all.push_back({times_b[i], censors_b[i], 1});
  std::stable_sort(all.begin(), all.end(),
                   [](const Obs& a, const Obs& b) { return a.t < b.t; });

  double n_a = static_cast<double>(times_a.size());
  double n_b = static_cast<double>(times_b.size());
  double observed_a = 0.0, expected_a = 0.0, variance = 0.0;
  bool any_event = false;
  std::size_t i = 0;
  while (i < all.size()) {
    double t = all[i].t;
    double d = 0.0, d_a = 0.0, r_a = 0.0, r_b = 0.0;
    std::size_t j = i;
    while (j < all.size() && all[j].t == t) {
      if (all[j].censor == 0) {
        d += 1.0;
        if (all[j].group == 0) d_a += 1.0;
      }
      if (all[j].group == 0) r_a += 1.0;
      else r_b += 1.0;
      ++j;
    }
    double n_t = n_a + n_b;
    if (d > 0.0 && n_t > 0.0) {
      any_event = true;
      observed_a += d_a;
      expected_a += d * n_a / n_t;
      if (n_t > 1.0)
        variance += d * (n_a / n_t) * (n_b / n_t) * (n_t - d) / (n_t - 1.0);
    }
    n_a -= r_a;
    n_b -= r_b;
    i = j;
  }
  if (!any_event)
    throw std::runtime_error("logrank_test: no events in either group, test undefined");
  LogRankResult res;
  double u = observed_a - expected_a;
  if (variance <= 0.0) {
    res.chi2 = 0.0;
    res.p = 1.0;
    return res;
  }
  res.chi2 = u * u / variance;
  res.p = chi2_sf(res.chi2, 1.0);
  return res;
}

// risk > median goes high; <= median goes low. Median is the midpoint of the
// two central order statistics for even counts.
inline std::vector<int> stratify_median(const std::vector<double>& risks) {
  if (risks.size() < 2)
    throw std::invalid_argument("stratify_median: need at least 2 patients");
  std::vector<double> sorted = risks;
  std::sort(sorted.begin(), sorted.end());
  std::size_t n = sorted.size();
  double median = (n % 2 == 1) ? sorted[n / 2]
                               : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = risks[i] > median ? 1 : 0;
  return labels;
}

}  // namespace memamba
