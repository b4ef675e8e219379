#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lvm/common.hpp"
#include "lvm/distributions.hpp"
#include "lvm/ingest.hpp"

namespace lvm {

enum class CorrelationMethod { pearson, spearman, polychoric };

inline std::string to_string(CorrelationMethod m) {
  switch (m) {
    case CorrelationMethod::pearson: return "pearson";
    case CorrelationMethod::spearman: return "spearman";
    case CorrelationMethod::polychoric: return "polychoric";
  }
  return "?";
}

/// Pairwise-complete correlation matrix with per-cell sample sizes and the
/// estimator used for each cell. Undefined cells hold NaN and are listed in
/// `undefined_pairs`.
struct CorrelationEstimate {
  std::vector<std::string> variables;
  Matrix r;
  IndexMatrix pair_n;
  std::vector<CorrelationMethod> methods;  // row-major p x p
  std::vector<std::pair<int, int>> undefined_pairs;
  Eigen::Index n_rows = 0;
  double min_eigenvalue = kNaN;
  bool positive_semidefinite = false;
  bool psd_repaired = false;

  int size() const { return static_cast<int>(variables.size()); }
  CorrelationMethod method(int i, int j) const {
    return methods[static_cast<std::size_t>(i * size() + j)];
  }
  bool complete() const { return undefined_pairs.empty(); }

  /// Sub-matrix for the named variables.
  CorrelationEstimate select(const std::vector<std::string>& names) const {
    std::vector<int> idx;
    for (const auto& n : names) {
      auto it = std::find(variables.begin(), variables.end(), n);
      if (it == variables.end()) throw SchemaError("variable '" + n + "' not in correlation matrix");
      idx.push_back(static_cast<int>(it - variables.begin()));
    }
    CorrelationEstimate out;
    const int q = static_cast<int>(idx.size());
    out.variables = names;
    out.r.resize(q, q);
    out.pair_n.resize(q, q);
    out.methods.resize(static_cast<std::size_t>(q * q));
    out.n_rows = n_rows;
    for (int a = 0; a < q; ++a)
      for (int b = 0; b < q; ++b) {
        out.r(a, b) = r(idx[a], idx[b]);
        out.pair_n(a, b) = pair_n(idx[a], idx[b]);
        out.methods[static_cast<std::size_t>(a * q + b)] = method(idx[a], idx[b]);
        if (a < b && std::isnan(out.r(a, b))) out.undefined_pairs.emplace_back(a, b);
      }
    out.update_definiteness();
    return out;
  }

  void update_definiteness() {
    if (!undefined_pairs.empty() || r.size() == 0) {
      min_eigenvalue = kNaN;
      positive_semidefinite = false;
      return;
    }
    min_eigenvalue = lvm::min_eigenvalue(r);
    positive_semidefinite = min_eigenvalue >= -1e-12;
  }
};

namespace detail {

struct PairData {
  std::vector<double> x;
  std::vector<double> y;
};

inline PairData complete_pairs(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) {
  PairData d;
  for (Eigen::Index r = 0; r < x.size(); ++r)
    if (!is_missing(x(r)) && !is_missing(y(r))) {
      d.x.push_back(x(r));
      d.y.push_back(y(r));
    }
  return d;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return kNaN;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Midranks (ties share the average of the positions they occupy).
inline std::vector<double> midranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i + j) / 2.0) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  return rank;
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = midranks(x);
  const auto ry = midranks(y);
  return pearson(rx, ry);
}

}  // namespace detail

struct CorrelationOptions {
  int min_pairs = 3;
  int polychoric_max_levels = 6;
  int jobs = 1;
};

namespace detail {

template <class CellFn>
CorrelationEstimate fill_pairwise(const NumericMatrix& X, const CorrelationOptions& opt, CellFn&& cell) {
  const int p = static_cast<int>(X.n_cols());
  if (p < 2) throw DataError("correlation requires at least two columns");
  CorrelationEstimate est;
  est.variables = X.columns;
  est.n_rows = X.n_rows();
  est.r = Matrix::Identity(p, p);
  est.pair_n = IndexMatrix::Zero(p, p);
  est.methods.assign(static_cast<std::size_t>(p * p), CorrelationMethod::pearson);

  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < p; ++i) {
    est.pair_n(i, i) = static_cast<int>((X.cells.col(i).array() == X.cells.col(i).array()).count());
    for (int j = i + 1; j < p; ++j) pairs.emplace_back(i, j);
  }
  std::vector<std::pair<double, CorrelationMethod>> values(pairs.size());
  std::vector<int> counts(pairs.size());
  parallel_for(pairs.size(), opt.jobs, [&](std::size_t k) {
    const auto [i, j] = pairs[k];
    const auto d = complete_pairs(X.cells.col(i), X.cells.col(j));
    counts[k] = static_cast<int>(d.x.size());
    if (static_cast<int>(d.x.size()) < opt.min_pairs) {
      values[k] = {kNaN, CorrelationMethod::pearson};
      return;
    }
    values[k] = cell(i, j, d);
  });
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs[k];
    est.r(i, j) = est.r(j, i) = values[k].first;
    est.pair_n(i, j) = est.pair_n(j, i) = counts[k];
    est.methods[static_cast<std::size_t>(i * p + j)] = values[k].second;
    est.methods[static_cast<std::size_t>(j * p + i)] = values[k].second;
    if (std::isnan(values[k].first)) est.undefined_pairs.emplace_back(i, j);
  }
  for (int i = 0; i < p; ++i) est.methods[static_cast<std::size_t>(i * p + i)] = values.empty()
                                                                                      ? CorrelationMethod::pearson
                                                                                      : values[0].second;
  est.update_definiteness();
  return est;
}

}  // namespace detail

inline CorrelationEstimate pearson_pairwise(const NumericMatrix& X, const CorrelationOptions& opt = {}) {
  return detail::fill_pairwise(X, opt, [](int, int, const detail::PairData& d) {
    return std::pair{detail::pearson(d.x, d.y), CorrelationMethod::pearson};
  });
}

inline CorrelationEstimate spearman_pairwise(const NumericMatrix& X, const CorrelationOptions& opt = {}) {
  auto est = detail::fill_pairwise(X, opt, [](int, int, const detail::PairData& d) {
    return std::pair{detail::spearman(d.x, d.y), CorrelationMethod::spearman};
  });
  for (auto& m : est.methods) m = CorrelationMethod::spearman;
  return est;
}

// ---------------------------------------------------------------------------
// Polychoric correlation.

struct PolychoricResult {
  double rho = kNaN;
  Vector thresholds_x;
  Vector thresholds_y;
  double log_likelihood = kNaN;
  int iterations = 0;
  bool converged = false;
  int n = 0;
};

/// Contingency table of two ordinal columns over their distinct observed
/// values (ascending).
struct ContingencyTable {
  std::vector<double> x_levels;
  std::vector<double> y_levels;
  Matrix counts;
  double total = 0.0;
};

inline ContingencyTable contingency(std::span<const double> x, std::span<const double> y) {
  ContingencyTable t;
  std::map<double, int> xi, yi;
  for (double v : x) xi.emplace(v, 0);
  for (double v : y) yi.emplace(v, 0);
  int k = 0;
  for (auto& [v, idx] : xi) {
    idx = k++;
    t.x_levels.push_back(v);
  }
  k = 0;
  for (auto& [v, idx] : yi) {
    idx = k++;
    t.y_levels.push_back(v);
  }
  t.counts = Matrix::Zero(static_cast<Eigen::Index>(xi.size()), static_cast<Eigen::Index>(yi.size()));
  for (std::size_t r = 0; r < x.size(); ++r) t.counts(xi.at(x[r]), yi.at(y[r])) += 1.0;
  t.total = static_cast<double>(x.size());
  return t;
}

/// Thresholds from the inverse normal of cumulative marginal proportions.
inline Vector marginal_thresholds(const Vector& marginal_counts) {
  const double total = marginal_counts.sum();
  Vector tau(marginal_counts.size() - 1);
  double cum = 0.0;
  for (Eigen::Index i = 0; i + 1 < marginal_counts.size(); ++i) {
    cum += marginal_counts(i);
    tau(i) = normal_quantile(cum / total);
  }
  return tau;
}

namespace detail {

struct PolychoricTerms {
  double loglik = 0.0;
  double d1 = 0.0;  // dL/drho
  double d2 = 0.0;  // d2L/drho2
};

// Derivative of the bivariate normal density in rho.
inline double bivariate_pdf_drho(double h, double k, double rho) {
  if (std::isinf(h) || std::isinf(k)) return 0.0;
  const double om = 1.0 - rho * rho;
  const double q = h * h - 2.0 * rho * h * k + k * k;
  const double dlog = rho / om + h * k / om - rho * q / (om * om);
  return bivariate_normal_pdf(h, k, rho) * dlog;
}

inline PolychoricTerms polychoric_terms(const Matrix& counts, const Vector& a, const Vector& b, double rho) {
  const Eigen::Index R = counts.rows(), C = counts.cols();
  auto cut = [](const Vector& t, Eigen::Index i) {
    if (i < 0) return -kInf;
    if (i >= t.size()) return kInf;
    return t(i);
  };
  // Corner quantities on the (R+1) x (C+1) threshold grid.
  Matrix F(R + 1, C + 1), f(R + 1, C + 1), df(R + 1, C + 1);
  for (Eigen::Index i = 0; i <= R; ++i)
    for (Eigen::Index j = 0; j <= C; ++j) {
      const double h = cut(a, i - 1), k = cut(b, j - 1);
      F(i, j) = bivariate_normal_cdf(h, k, rho);
      f(i, j) = bivariate_normal_pdf(h, k, rho);
      df(i, j) = bivariate_pdf_drho(h, k, rho);
    }
  PolychoricTerms t;
  for (Eigen::Index i = 0; i < R; ++i)
    for (Eigen::Index j = 0; j < C; ++j) {
      const double n = counts(i, j);
      if (n == 0.0) continue;
      const double P = std::max(F(i + 1, j + 1) - F(i, j + 1) - F(i + 1, j) + F(i, j), 1e-300);
      const double P1 = f(i + 1, j + 1) - f(i, j + 1) - f(i + 1, j) + f(i, j);
      const double P2 = df(i + 1, j + 1) - df(i, j + 1) - df(i + 1, j) + df(i, j);
      t.loglik += n * std::log(P);
      t.d1 += n * P1 / P;
      t.d2 += n * (P2 / P - (P1 / P) * (P1 / P));
    }
  return t;
}

}  // namespace detail

/// Two-step polychoric estimate: thresholds fixed from the marginals, then
/// rho maximising the bivariate-normal cell likelihood. The search runs on
/// z = atanh(rho) with Newton steps kept inside a sign-change bracket of the
/// score, falling back to bisection when a Newton step leaves it.
/// Throws NumericError when either margin has a single observed category.
inline PolychoricResult polychoric(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DataError("polychoric: columns differ in length");
  std::vector<double> cx, cy;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!is_missing(x[i]) && !is_missing(y[i])) {
      cx.push_back(x[i]);
      cy.push_back(y[i]);
    }
  if (cx.empty()) throw NumericError("polychoric: no complete pairs");
  const auto table = contingency(cx, cy);
  if (table.counts.rows() < 2 || table.counts.cols() < 2)
    throw NumericError("polychoric: a margin has a single observed category");
  if (table.counts.rows() > 15 || table.counts.cols() > 15)
    throw NumericError("polychoric: more than 15 categories");

  PolychoricResult res;
  res.n = static_cast<int>(cx.size());
  res.thresholds_x = marginal_thresholds(table.counts.rowwise().sum());
  res.thresholds_y = marginal_thresholds(table.counts.colwise().sum().transpose());

  constexpr double z_max = 7.6;  // |rho| < 1 - 5e-7
  double z_lo = -z_max, z_hi = z_max;
  double z = std::atanh(std::clamp(detail::pearson(cx, cy), -0.95, 0.95));
  if (std::isnan(z)) z = 0.0;
  double rho = std::tanh(z);
  for (res.iterations = 1; res.iterations <= 200; ++res.iterations) {
    const auto t = detail::polychoric_terms(table.counts, res.thresholds_x, res.thresholds_y, rho);
    const double jac = 1.0 - rho * rho;
    const double gz = t.d1 * jac;
    const double hz = t.d2 * jac * jac - 2.0 * rho * jac * t.d1;
    if (gz == 0.0 || (hz < 0.0 && std::abs(gz / hz) < 1e-12)) {
      res.converged = true;
      break;
    }
    if (gz > 0.0)
      z_lo = z;
    else
      z_hi = z;
    double z_new = (hz < 0.0) ? z - gz / hz : 0.5 * (z_lo + z_hi);
    if (!(z_new > z_lo && z_new < z_hi)) z_new = 0.5 * (z_lo + z_hi);
    const double rho_new = std::tanh(z_new);
    const double step = std::abs(rho_new - rho);
    z = z_new;
    rho = rho_new;
    if (step < 1e-10) {
      res.converged = true;
      break;
    }
  }
  res.rho = rho;
  res.log_likelihood =
      detail::polychoric_terms(table.counts, res.thresholds_x, res.thresholds_y, rho).loglik;
  return res;
}

/// Polychoric where both columns are ordinal with at most
/// `polychoric_max_levels` levels, Spearman otherwise.
inline CorrelationEstimate mixed_correlation(const NumericMatrix& X, const CorrelationOptions& opt = {}) {
  auto poly_ok = [&](int c) {
    const int L = X.levels[static_cast<std::size_t>(c)];
    return L >= 2 && L <= opt.polychoric_max_levels;
  };
  auto est = detail::fill_pairwise(X, opt, [&](int i, int j, const detail::PairData& d) {
    if (poly_ok(i) && poly_ok(j)) {
      try {
        return std::pair{polychoric(d.x, d.y).rho, CorrelationMethod::polychoric};
      } catch (const NumericError&) {
        return std::pair{kNaN, CorrelationMethod::polychoric};
      }
    }
    return std::pair{detail::spearman(d.x, d.y), CorrelationMethod::spearman};
  });
  const int p = est.size();
  for (int i = 0; i < p; ++i)
    est.methods[static_cast<std::size_t>(i * p + i)] =
        poly_ok(i) ? CorrelationMethod::polychoric : CorrelationMethod::spearman;
  return est;
}

inline CorrelationEstimate correlate(const NumericMatrix& X, CorrelationMethod method,
                                     const CorrelationOptions& opt = {}) {
  switch (method) {
    case CorrelationMethod::pearson: return pearson_pairwise(X, opt);
    case CorrelationMethod::spearman: return spearman_pairwise(X, opt);
    case CorrelationMethod::polychoric: return mixed_correlation(X, opt);
  }
  return pearson_pairwise(X, opt);
}

inline CorrelationMethod correlation_method_from_string(const std::string& s) {
  if (s == "pearson") return CorrelationMethod::pearson;
  if (s == "spearman") return CorrelationMethod::spearman;
  if (s == "polychoric" || s == "mixed") return CorrelationMethod::polychoric;
  throw ConfigError("unknown correlation method '" + s + "'");
}

/// Largest absolute elementwise difference between two matrices over the same
/// variables (NaN cells skipped).
inline double max_abs_difference(const CorrelationEstimate& a, const CorrelationEstimate& b) {
  if (a.variables != b.variables) throw DataError("correlation matrices over different variables");
  double m = 0.0;
  for (Eigen::Index i = 0; i < a.r.rows(); ++i)
    for (Eigen::Index j = 0; j < a.r.cols(); ++j) {
      const double d = std::abs(a.r(i, j) - b.r(i, j));
      if (!std::isnan(d)) m = std::max(m, d);
    }
  return m;
}

/// Nearest correlation matrix in the Frobenius norm by alternating
/// projections with Dykstra's correction (Higham 2002).
inline Matrix nearest_correlation(const Matrix& A, int max_iter = 1000, double tol = 1e-12) {
  const Eigen::Index n = A.rows();
  Matrix Y = A, dS = Matrix::Zero(n, n), X;
  for (int it = 0; it < max_iter; ++it) {
    const Matrix R = Y - dS;
    Eigen::SelfAdjointEigenSolver<Matrix> es(R);
    const Vector vals = es.eigenvalues().cwiseMax(0.0);
    X = es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
    dS = X - R;
    Matrix Ynew = X;
    Ynew.diagonal().setOnes();
    const double change = (Ynew - Y).norm() / std::max(1.0, Y.norm());
    Y = std::move(Ynew);
    if (change < tol) break;
  }
  return 0.5 * (Y + Y.transpose());
}

/// Replace R by its nearest correlation matrix. Only applied on request.
inline void repair_psd(CorrelationEstimate& est) {
  if (!est.complete()) throw NumericError("cannot repair a correlation matrix with undefined cells");
  est.r = nearest_correlation(est.r);
  est.psd_repaired = true;
  est.update_definiteness();
}

}  // namespace lvm
