#pragma once

// Stand-alone recomputation of fit indices from (chi2, df, n, S, Sigma).
// Deliberately shares nothing with the library: the noncentral chi-square
// CDF is a Poisson mixture of regularized incomplete gamma functions coded
// here, and the RMSEA bounds come from plain bisection.

#include <algorithm>
#include <cmath>
#include <vector>

namespace oracle {

// Regularized lower incomplete gamma P(a, x).
inline double gamma_p(double a, double x) {
  if (x <= 0.0) return 0.0;
  const double log_prefix = a * std::log(x) - x - std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a, term = 1.0 / a, sum = term;
    for (int i = 0; i < 100000; ++i) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (term < sum * 1e-17) break;
    }
    return sum * std::exp(log_prefix);
  }
  // Lentz continued fraction for Q(a, x).
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 100000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-17) break;
  }
  return 1.0 - std::exp(log_prefix) * h;
}

inline double chisq_cdf(double x, double k) { return gamma_p(k / 2.0, x / 2.0); }

// P(X <= x) for X ~ noncentral chi-square(k, lambda), summing Poisson
// weights outward from the mode until they vanish.
inline double ncchisq_cdf(double x, double k, double lambda) {
  if (x <= 0.0) return 0.0;
  if (lambda <= 0.0) return chisq_cdf(x, k);
  const double mu = lambda / 2.0;
  auto weight = [&](double j) { return std::exp(-mu + j * std::log(mu) - std::lgamma(j + 1.0)); };
  const double mode = std::floor(mu);
  double total = 0.0;
  for (double j = mode; j >= 0.0; j -= 1.0) {
    const double w = weight(j);
    total += w * chisq_cdf(x, k + 2.0 * j);
    if (w < 1e-20 && j < mode) break;
  }
  for (double j = mode + 1.0;; j += 1.0) {
    const double w = weight(j);
    total += w * chisq_cdf(x, k + 2.0 * j);
    if (w < 1e-20) break;
  }
  return std::min(total, 1.0);
}

// lambda with ncchisq_cdf(stat, df, lambda) == target (0 if unattainable).
inline double solve_lambda(double stat, double df, double target) {
  if (ncchisq_cdf(stat, df, 0.0) <= target) return 0.0;
  double lo = 0.0, hi = std::max(1.0, stat);
  while (ncchisq_cdf(stat, df, hi) > target) hi *= 2.0;
  for (int i = 0; i < 300 && hi - lo > 1e-13 * std::max(1.0, hi); ++i) {
    const double mid = 0.5 * (lo + hi);
    if (ncchisq_cdf(stat, df, mid) > target)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

struct Indices {
  double cfi, tli, nfi, rmsea, rmsea_lo, rmsea_hi, srmr;
};

inline Indices compute(double chi2, double df, double chi2_b, double df_b, double n,
                       const std::vector<std::vector<double>>& S, const std::vector<std::vector<double>>& Sigma) {
  Indices r{};
  const double d_m = chi2 - df, d_b = chi2_b - df_b;
  const double num = d_m > 0.0 ? d_m : 0.0;
  double den = d_b;
  if (d_m > den) den = d_m;
  if (den < 0.0) den = 0.0;
  r.cfi = den == 0.0 ? 1.0 : 1.0 - num / den;
  r.tli = ((chi2_b / df_b) - (chi2 / df)) / ((chi2_b / df_b) - 1.0);
  r.nfi = (chi2_b - chi2) / chi2_b;
  r.rmsea = std::sqrt(num / (df * n));
  r.rmsea_lo = std::sqrt(solve_lambda(chi2, df, 0.95) / (df * n));
  r.rmsea_hi = std::sqrt(solve_lambda(chi2, df, 0.05) / (df * n));
  const std::size_t p = S.size();
  double ss = 0.0;
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const double z = (S[i][j] - Sigma[i][j]) / std::sqrt(S[i][i] * S[j][j]);
      ss += z * z;
    }
  r.srmr = std::sqrt(ss / (p * (p + 1) / 2.0));
  return r;
}

}  // namespace oracle
