#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lvm/common.hpp"
#include "lvm/correlation.hpp"
#include "lvm/distributions.hpp"
#include "lvm/efa/minres.hpp"
#include "lvm/efa/rotation.hpp"

namespace lvm::efa {

struct EfaFit {
  double chi2 = kNaN;
  int df = 0;
  double chi2_null = kNaN;
  int df_null = 0;
  double tli = kNaN;
  RmseaInterval rmsea;
  double bic = kNaN;
  double objective = kNaN;
  double rms_offdiag = kNaN;
  bool defined = false;
};

struct EfaSolution {
  std::vector<std::string> variables;
  std::vector<std::string> factors;  // MR1..MRm
  Matrix pattern;
  Matrix phi;
  Matrix unrotated;
  Vector h2;
  Vector u2;
  Vector complexity;
  Vector reduced_eigenvalues;
  EfaFit fit;
  Eigen::Index n_obs_effective = 0;
  bool converged = false;
  int iterations = 0;
  double grad_norm = kNaN;
  std::vector<std::string> heywood;
  int rotation_starts_converged = 0;

  int n_factors() const { return static_cast<int>(pattern.cols()); }
  Matrix implied() const {
    Matrix s = pattern * phi * pattern.transpose();
    s.diagonal() += u2;
    return s;
  }
};

struct EfaOptions {
  MinresOptions minres;
  RotationOptions rotation;
  double rmsea_confidence = 0.90;
};

/// Fit statistics of a factor solution against R: ML discrepancy of the
/// implied correlation matrix, chi2 = (N - 1) F, TLI against the
/// independence model (capped at 1), RMSEA with its noncentral interval and
/// BIC = chi2 - df ln N.
inline EfaFit efa_fit(const Matrix& R, const Matrix& pattern, const Matrix& phi, Eigen::Index N,
                      double confidence = 0.90) {
  EfaFit f;
  const Eigen::Index p = R.rows(), m = pattern.cols();
  Matrix model = pattern * phi * pattern.transpose();
  model.diagonal().setOnes();
  {
    const Matrix res = R - model;
    double s = 0.0;
    for (Eigen::Index i = 0; i < p; ++i)
      for (Eigen::Index j = 0; j < i; ++j) s += res(i, j) * res(i, j);
    f.rms_offdiag = std::sqrt(s / static_cast<double>(p * (p - 1) / 2));
  }
  f.df = static_cast<int>(((p - m) * (p - m) - (p + m)) / 2);
  f.df_null = static_cast<int>(p * (p - 1) / 2);
  Eigen::LDLT<Matrix> lm(model);
  Eigen::LDLT<Matrix> lr(R);
  if (lm.info() != Eigen::Success || !lm.isPositive() || lr.info() != Eigen::Success || !lr.isPositive()) return f;
  const double logdet_model = lm.vectorD().array().log().sum();
  const double logdet_r = lr.vectorD().array().log().sum();
  const Matrix MinvR = lm.solve(R);
  f.objective = MinvR.trace() - (logdet_r - logdet_model) - static_cast<double>(p);
  const double mult = static_cast<double>(N - 1);
  f.chi2 = mult * std::max(f.objective, 0.0);
  f.chi2_null = mult * (-logdet_r);
  if (f.df <= 0) return f;
  f.defined = true;
  const double null_ratio = f.chi2_null / f.df_null;
  f.tli = std::min(1.0, (null_ratio - f.chi2 / f.df) / (null_ratio - 1.0));
  f.rmsea = rmsea_interval(f.chi2, f.df, mult, confidence);
  f.bic = f.chi2 - f.df * std::log(static_cast<double>(N));
  return f;
}

inline std::vector<std::string> factor_labels(int m) {
  std::vector<std::string> out;
  for (int k = 1; k <= m; ++k) out.push_back("MR" + std::to_string(k));
  return out;
}

/// Minres extraction, oblimin rotation and fit for m factors.
inline EfaSolution fit_efa(const CorrelationEstimate& R, int m, Eigen::Index N, const EfaOptions& opt = {}) {
  const auto mr = fit_minres(R, m, opt.minres);
  EfaSolution s;
  s.variables = R.variables;
  s.factors = factor_labels(m);
  s.unrotated = mr.loadings;
  s.reduced_eigenvalues = mr.eigenvalues;
  s.converged = mr.converged;
  s.iterations = mr.iterations;
  s.grad_norm = mr.grad_norm;
  for (int i : mr.heywood) s.heywood.push_back(R.variables[static_cast<std::size_t>(i)]);
  RotationResult rot;
  try {
    rot = rotate_oblimin(mr.loadings, opt.rotation);
  } catch (const RotationError& e) {
    rot = e.best();
    s.converged = false;
  }
  s.rotation_starts_converged = rot.starts_converged;
  s.pattern = rot.pattern;
  s.phi = rot.phi;
  s.h2 = (s.pattern * s.phi * s.pattern.transpose()).diagonal();
  s.u2 = Vector::Ones(s.h2.size()) - s.h2;
  s.complexity = item_complexity(s.pattern);
  s.n_obs_effective = N;
  s.fit = efa_fit(R.r, s.pattern, s.phi, N, opt.rmsea_confidence);
  return s;
}

}  // namespace lvm::efa
