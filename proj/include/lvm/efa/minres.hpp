#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lvm/common.hpp"
#include "lvm/correlation.hpp"
#include "lvm/optimize.hpp"

namespace lvm::efa {

struct MinresOptions {
  int max_iter = 2000;
  double grad_tol = 1e-7;
  double lower_bound = 1e-3;  // Heywood clamp for uniquenesses
};

struct MinresResult {
  Matrix loadings;      // unrotated, p x m
  Vector uniquenesses;  // optimiser variables (psi)
  Vector h2;            // row sums of squared loadings
  Vector eigenvalues;   // of the reduced matrix at the optimum, descending
  double objective = kNaN;
  int iterations = 0;
  double grad_norm = kNaN;
  bool converged = false;
  std::vector<int> heywood;  // items whose uniqueness sits on the lower bound
};

namespace detail {

inline void require_complete(const CorrelationEstimate& R) {
  if (!R.undefined_pairs.empty()) {
    const auto [i, j] = R.undefined_pairs.front();
    throw NumericError("correlation undefined for pair (" + R.variables[static_cast<std::size_t>(i)] + ", " +
                       R.variables[static_cast<std::size_t>(j)] + ")");
  }
  for (Eigen::Index i = 0; i < R.r.rows(); ++i)
    for (Eigen::Index j = 0; j < R.r.cols(); ++j)
      if (!std::isfinite(R.r(i, j)))
        throw NumericError("non-finite correlation for pair (" + R.variables[static_cast<std::size_t>(i)] +
                           ", " + R.variables[static_cast<std::size_t>(j)] + ")");
}

struct ReducedEigen {
  Matrix loadings;
  Vector values;  // descending
  Matrix vectors;
};

inline ReducedEigen reduced_loadings(const Matrix& R, const Vector& psi, int m) {
  Matrix reduced = R;
  reduced.diagonal() -= psi;
  Eigen::SelfAdjointEigenSolver<Matrix> es(reduced);
  const Eigen::Index p = R.rows();
  ReducedEigen out;
  out.values = es.eigenvalues().reverse();
  out.vectors = es.eigenvectors().rowwise().reverse();
  out.loadings.resize(p, m);
  for (int k = 0; k < m; ++k) out.loadings.col(k) = out.vectors.col(k) * std::sqrt(std::max(out.values(k), 0.0));
  return out;
}

}  // namespace detail

/// Sum of squared residuals of (R - diag(psi)) after removing its best
/// rank-m positive part, halved. Equals the off-diagonal minres criterion at
/// any psi that zeroes the diagonal residual.
inline double minres_objective(const Matrix& R, const Vector& psi, int m, Vector* grad = nullptr) {
  const auto red = detail::reduced_loadings(R, psi, m);
  Matrix resid = R - red.loadings * red.loadings.transpose();
  resid.diagonal() -= psi;
  if (grad) *grad = -resid.diagonal();
  return 0.5 * resid.squaredNorm();
}

/// Off-diagonal sum of squared residuals of R - L L' (the textbook minres
/// criterion, used to check optimality).
inline double offdiag_ssr(const Matrix& R, const Matrix& model) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < R.rows(); ++i)
    for (Eigen::Index j = 0; j < R.cols(); ++j)
      if (i != j) s += (R(i, j) - model(i, j)) * (R(i, j) - model(i, j));
  return s;
}

/// Minimum-residual extraction of m factors from a correlation matrix.
inline MinresResult fit_minres(const CorrelationEstimate& Rest, int m, const MinresOptions& opt = {}) {
  detail::require_complete(Rest);
  const Matrix& R = Rest.r;
  const Eigen::Index p = R.rows();
  if (m < 1 || m >= p) throw ModelError("factor count must satisfy 1 <= m < p");

  Vector lo = Vector::Constant(p, opt.lower_bound);
  Vector hi = R.diagonal();
  Vector start(p);
  {
    Eigen::LDLT<Matrix> ldlt(R);
    Vector dinv;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      dinv = ldlt.solve(Matrix::Identity(p, p)).diagonal();
    } else {
      dinv = R.completeOrthogonalDecomposition().pseudoInverse().diagonal();
    }
    // Start at 1 - SMC.
    for (Eigen::Index i = 0; i < p; ++i) {
      double s = dinv(i) > 0.0 ? 1.0 / dinv(i) : 0.5 * hi(i);
      start(i) = std::clamp(s, lo(i), hi(i));
    }
  }

  OptimizeOptions oo;
  oo.max_iter = opt.max_iter;
  oo.grad_tol = opt.grad_tol;
  oo.lower = lo;
  oo.upper = hi;
  const auto res = minimize_bfgs(
      [&](const Vector& psi, Vector& g) { return minres_objective(R, psi, m, &g); }, start, oo);

  MinresResult out;
  out.uniquenesses = res.x;
  const auto red = detail::reduced_loadings(R, res.x, m);
  out.loadings = red.loadings;
  out.eigenvalues = red.values;
  // Fix the sign of each unrotated column so its column sum is non-negative.
  for (int k = 0; k < m; ++k)
    if (out.loadings.col(k).sum() < 0.0) out.loadings.col(k) *= -1.0;
  out.h2 = out.loadings.rowwise().squaredNorm();
  out.objective = res.value;
  out.iterations = res.iterations;
  out.grad_norm = res.grad_norm;
  out.converged = res.converged;
  for (Eigen::Index i = 0; i < p; ++i)
    if (res.x(i) <= opt.lower_bound * (1.0 + 1e-12)) out.heywood.push_back(static_cast<int>(i));
  return out;
}

/// Squared multiple correlations 1 - 1/diag(R^-1); pseudo-inverse fallback
/// for singular matrices.
inline Vector smc(const Matrix& R) {
  const Eigen::Index p = R.rows();
  Eigen::LDLT<Matrix> ldlt(R);
  Vector dinv;
  if (ldlt.info() == Eigen::Success && ldlt.isPositive())
    dinv = ldlt.solve(Matrix::Identity(p, p)).diagonal();
  else
    dinv = R.completeOrthogonalDecomposition().pseudoInverse().diagonal();
  Vector out(p);
  for (Eigen::Index i = 0; i < p; ++i) out(i) = dinv(i) > 0.0 ? std::clamp(1.0 - 1.0 / dinv(i), 0.0, 1.0) : 1.0;
  return out;
}

}  // namespace lvm::efa
