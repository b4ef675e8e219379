#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "lvm/common.hpp"
#include "lvm/correlation.hpp"
#include "lvm/ingest.hpp"

namespace lvm {

/// Pairwise-complete covariance matrix (n - 1 denominators). Cells with
/// fewer than two complete pairs are NaN.
inline Matrix pairwise_covariance(const Matrix& X) {
  const Eigen::Index p = X.cols();
  Matrix C(p, p);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      double mx = 0.0, my = 0.0;
      long n = 0;
      for (Eigen::Index r = 0; r < X.rows(); ++r)
        if (!is_missing(X(r, i)) && !is_missing(X(r, j))) {
          mx += X(r, i);
          my += X(r, j);
          ++n;
        }
      if (n < 2) {
        C(i, j) = C(j, i) = kNaN;
        continue;
      }
      mx /= static_cast<double>(n);
      my /= static_cast<double>(n);
      double s = 0.0;
      for (Eigen::Index r = 0; r < X.rows(); ++r)
        if (!is_missing(X(r, i)) && !is_missing(X(r, j))) s += (X(r, i) - mx) * (X(r, j) - my);
      C(i, j) = C(j, i) = s / static_cast<double>(n - 1);
    }
  return C;
}

/// (k/(k-1)) (1 - tr C / 1'C1) from a covariance matrix.
inline double alpha_from_covariance(const Matrix& C) {
  const double k = static_cast<double>(C.rows());
  const double total = C.sum();
  if (!(total > 0.0)) return kNaN;
  return k / (k - 1.0) * (1.0 - C.trace() / total);
}

inline double average_offdiag(const Matrix& R) {
  const Eigen::Index k = R.rows();
  return (R.sum() - R.trace()) / static_cast<double>(k * (k - 1));
}

/// k rbar / (1 + (k - 1) rbar).
inline double standardized_alpha(double average_r, int k) {
  return k * average_r / (1.0 + (k - 1) * average_r);
}

struct CronbachOptions {
  int ase_replicates = 200;
  std::uint64_t seed = 1;
  int jobs = 1;
};

struct CronbachResult {
  double raw_alpha = kNaN;
  double std_alpha = kNaN;
  double average_r = kNaN;
  double s_n = kNaN;
  double ase = kNaN;
  double scale_mean = kNaN;  // mean of the summed scale
  double scale_sd = kNaN;
  double item_mean = kNaN;   // scale_mean / k
  double item_sd = kNaN;     // scale_sd / k
  Eigen::Index n_complete = 0;
  int k = 0;
};

/// Cronbach's alpha battery. Raw alpha from pairwise covariances,
/// standardized alpha from pairwise correlations, scale statistics over
/// complete cases, ase as the bootstrap standard deviation of raw alpha.
inline CronbachResult cronbach(const NumericMatrix& items, const CronbachOptions& opt = {}) {
  const int k = static_cast<int>(items.n_cols());
  if (k < 2) throw DataError("cronbach: at least two items are required");
  CronbachResult res;
  res.k = k;
  const Matrix C = pairwise_covariance(items.cells);
  if (C.hasNaN()) throw NumericError("cronbach: covariance undefined for some item pair");
  if (!(C.sum() > 0.0)) throw NumericError("cronbach: zero total variance");
  res.raw_alpha = alpha_from_covariance(C);
  const Matrix R = cov_to_cor(C);
  res.average_r = average_offdiag(R);
  res.std_alpha = standardized_alpha(res.average_r, k);
  res.s_n = res.std_alpha / (1.0 - res.std_alpha);

  std::vector<double> sums;
  for (Eigen::Index r = 0; r < items.n_rows(); ++r)
    if (!items.cells.row(r).array().isNaN().any()) sums.push_back(items.cells.row(r).sum());
  res.n_complete = static_cast<Eigen::Index>(sums.size());
  if (sums.size() >= 2) {
    double m = 0.0;
    for (double s : sums) m += s;
    m /= static_cast<double>(sums.size());
    double v = 0.0;
    for (double s : sums) v += (s - m) * (s - m);
    res.scale_mean = m;
    res.scale_sd = std::sqrt(v / static_cast<double>(sums.size() - 1));
    res.item_mean = m / k;
    res.item_sd = res.scale_sd / k;
  }

  if (opt.ase_replicates > 1) {
    const Eigen::Index n = items.n_rows();
    std::vector<double> reps(static_cast<std::size_t>(opt.ase_replicates), kNaN);
    parallel_for(reps.size(), opt.jobs, [&](std::size_t b) {
      Rng rng(derive_seed(opt.seed, b));
      Matrix Xb(n, k);
      for (Eigen::Index r = 0; r < n; ++r)
        Xb.row(r) = items.cells.row(static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(n))));
      const Matrix Cb = pairwise_covariance(Xb);
      if (!Cb.hasNaN()) reps[b] = alpha_from_covariance(Cb);
    });
    std::vector<double> ok;
    for (double a : reps)
      if (std::isfinite(a)) ok.push_back(a);
    if (ok.size() >= 2) {
      double m = 0.0;
      for (double a : ok) m += a;
      m /= static_cast<double>(ok.size());
      double v = 0.0;
      for (double a : ok) v += (a - m) * (a - m);
      res.ase = std::sqrt(v / static_cast<double>(ok.size() - 1));
    }
  }
  return res;
}

/// Guttman's lambda 6: 1 - sum(1 - smc_i) / 1'R1. A positive `ridge` adds
/// ridge * I before inversion.
inline double guttman_lambda6(const Matrix& R, double ridge = 0.0) {
  const Eigen::Index k = R.rows();
  Matrix Rr = R;
  if (ridge > 0.0) Rr.diagonal().array() += ridge;
  Eigen::LDLT<Matrix> ldlt(Rr);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() < 1e-12)
    throw NumericError("lambda6: correlation matrix is singular; pass a small ridge (e.g. 1e-6) to proceed");
  const Vector dinv = ldlt.solve(Matrix::Identity(k, k)).diagonal();
  double unexplained = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) unexplained += 1.0 / dinv(i);  // 1 - smc_i
  return 1.0 - unexplained / R.sum();
}

inline double guttman_lambda6(const CorrelationEstimate& R, double ridge = 0.0) {
  if (!R.complete()) throw NumericError("lambda6: correlation matrix has undefined cells");
  return guttman_lambda6(R.r, ridge);
}

struct OmegaResult {
  double omega1 = kNaN;
  double omega2 = kNaN;
  double omega3 = kNaN;
};

/// Omega coefficients for a one-factor block. `theta` holds residual
/// variances on the diagonal and residual covariances off it; `psi` is the
/// factor variance. omega1 divides the common part by its sum with 1'Theta1,
/// omega2 by the model-implied total variance, omega3 by the observed total
/// variance when `observed` is given (otherwise it equals omega2).
inline OmegaResult omega(const Vector& loadings, const Matrix& theta, double psi = 1.0,
                         const std::optional<Matrix>& observed = std::nullopt) {
  const Eigen::Index k = loadings.size();
  if (theta.rows() != k || theta.cols() != k) throw DataError("omega: theta must be k x k");
  for (Eigen::Index i = 0; i < k; ++i)
    if (theta(i, i) < 0.0) throw DataError("omega: negative residual variance");
  const double common = loadings.sum() * loadings.sum() * psi;
  OmegaResult o;
  o.omega1 = common / (common + theta.sum());
  const Matrix implied = psi * loadings * loadings.transpose() + theta;
  o.omega2 = common / implied.sum();
  o.omega3 = observed ? common / observed->sum() : o.omega2;
  return o;
}

inline OmegaResult omega(const Vector& loadings, const Vector& residual_variances, double psi = 1.0) {
  return omega(loadings, Matrix(residual_variances.asDiagonal()), psi);
}

/// Average variance extracted: mean squared standardized loading.
inline double ave(const Vector& std_loadings) {
  if (std_loadings.size() == 0) throw DataError("ave: empty loading list");
  return std_loadings.squaredNorm() / static_cast<double>(std_loadings.size());
}

struct ReliabilityReport {
  std::string factor;
  std::vector<std::string> items;
  CronbachResult alpha;
  double lambda6 = kNaN;
  std::optional<OmegaResult> omega;
  std::optional<double> ave;
};

/// Alpha battery and lambda 6 for one item set.
inline ReliabilityReport reliability_report(const NumericMatrix& X, const std::string& factor,
                                            const std::vector<std::string>& items,
                                            const CronbachOptions& opt = {}, double ridge = 0.0) {
  ReliabilityReport rep;
  rep.factor = factor;
  rep.items = items;
  const auto sub = X.select(items);
  rep.alpha = cronbach(sub, opt);
  const Matrix R = cov_to_cor(pairwise_covariance(sub.cells));
  rep.lambda6 = guttman_lambda6(R, ridge);
  return rep;
}

}  // namespace lvm
