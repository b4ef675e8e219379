#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lvm/common.hpp"
#include "lvm/ingest.hpp"
#include "lvm/optimize.hpp"
#include "lvm/sem/fit_indices.hpp"
#include "lvm/sem/model.hpp"

namespace lvm::sem {

enum class Estimator { ml, dwls };

inline std::string to_string(Estimator e) { return e == Estimator::ml ? "ML" : "DWLS"; }

inline Estimator estimator_from_string(const std::string& s) {
  if (s == "ml" || s == "ML") return Estimator::ml;
  if (s == "dwls" || s == "DWLS") return Estimator::dwls;
  throw ConfigError("unknown estimator '" + s + "'");
}

struct ModelMatrices {
  Matrix Lambda;  // p x m
  Matrix B;       // m x m, B(outcome, predictor)
  Matrix Psi;     // m x m
  Matrix Theta;   // p x p
};

inline ModelMatrices build_matrices(const SemModel& m, const Vector& theta) {
  const int p = m.n_observed(), k = m.n_factors();
  ModelMatrices mm{Matrix::Zero(p, k), Matrix::Zero(k, k), Matrix::Zero(k, k), Matrix::Zero(p, p)};
  for (const auto& par : m.parameters) {
    const double v = par.free ? theta(par.index) : par.value;
    switch (par.kind) {
      case ParamKind::loading: mm.Lambda(par.row, par.col) = v; break;
      case ParamKind::regression: mm.B(par.row, par.col) = v; break;
      case ParamKind::latent_variance:
      case ParamKind::latent_covariance: mm.Psi(par.row, par.col) = mm.Psi(par.col, par.row) = v; break;
      case ParamKind::residual_variance:
      case ParamKind::residual_covariance: mm.Theta(par.row, par.col) = mm.Theta(par.col, par.row) = v; break;
    }
  }
  return mm;
}

/// Implied covariance and the intermediate products the derivatives use:
/// A = (I - B)^-1, G = Lambda A, K = G Psi A', Sigma = K Lambda' + Theta.
struct Implied {
  Matrix A;
  Matrix G;
  Matrix K;
  Matrix latent_cov;  // A Psi A'
  Matrix Sigma;
};

inline Implied compute_implied(const ModelMatrices& mm) {
  Implied im;
  const Eigen::Index k = mm.B.rows();
  if (k == 0) {
    im.A.resize(0, 0);
    im.G.resize(mm.Theta.rows(), 0);
    im.K.resize(mm.Theta.rows(), 0);
    im.latent_cov.resize(0, 0);
    im.Sigma = mm.Theta;
    return im;
  }
  const Matrix IB = Matrix::Identity(k, k) - mm.B;
  Eigen::FullPivLU<Matrix> lu(IB);
  if (!lu.isInvertible()) throw ModelError("I - B is singular");
  im.A = lu.inverse();
  im.G = mm.Lambda * im.A;
  im.latent_cov = im.A * mm.Psi * im.A.transpose();
  im.K = mm.Lambda * im.latent_cov;
  im.Sigma = im.K * mm.Lambda.transpose() + mm.Theta;
  return im;
}

inline Matrix implied_covariance(const SemModel& m, const Vector& theta) {
  return compute_implied(build_matrices(m, theta)).Sigma;
}

/// dF/dtheta for an objective whose differential is tr(W dSigma).
inline void gradient_from_weight(const SemModel& m, const Implied& im, const Matrix& W, Vector& g) {
  const Matrix WK = W * im.K;
  const Matrix GWG = im.G.transpose() * W * im.G;
  const Matrix GWK = im.G.transpose() * WK;
  g.setZero(m.n_free());
  for (const auto& par : m.parameters) {
    if (!par.free) continue;
    double d = 0.0;
    switch (par.kind) {
      case ParamKind::loading: d = 2.0 * WK(par.row, par.col); break;
      case ParamKind::regression: d = 2.0 * GWK(par.row, par.col); break;
      case ParamKind::latent_variance: d = GWG(par.row, par.row); break;
      case ParamKind::latent_covariance: d = 2.0 * GWG(par.row, par.col); break;
      case ParamKind::residual_variance: d = W(par.row, par.row); break;
      case ParamKind::residual_covariance: d = 2.0 * W(par.row, par.col); break;
    }
    g(par.index) = d;
  }
}

/// dSigma / dtheta_k for one free parameter.
inline Matrix sigma_derivative(const Parameter& par, const Implied& im, Eigen::Index p) {
  Matrix D = Matrix::Zero(p, p);
  auto sym = [&](const Vector& u, const Vector& v) { D += u * v.transpose() + v * u.transpose(); };
  switch (par.kind) {
    case ParamKind::loading: {
      Vector e = Vector::Zero(p);
      e(par.row) = 1.0;
      sym(e, im.K.col(par.col));
      break;
    }
    case ParamKind::regression: sym(im.G.col(par.row), im.K.col(par.col)); break;
    case ParamKind::latent_variance: D = im.G.col(par.row) * im.G.col(par.row).transpose(); break;
    case ParamKind::latent_covariance: sym(im.G.col(par.row), im.G.col(par.col)); break;
    case ParamKind::residual_variance: D(par.row, par.row) = 1.0; break;
    case ParamKind::residual_covariance: D(par.row, par.col) = D(par.col, par.row) = 1.0; break;
  }
  return D;
}

/// Jacobian of vech(Sigma) with respect to the free parameters.
inline Matrix vech_jacobian(const SemModel& m, const Implied& im) {
  const Eigen::Index p = im.Sigma.rows();
  Matrix J(p * (p + 1) / 2, m.n_free());
  for (const auto& par : m.parameters)
    if (par.free) J.col(par.index) = vech(sigma_derivative(par, im, p));
  return J;
}

// ---------------------------------------------------------------------------
// Sample moments.

/// Listwise-complete moments for one set of observed variables. S uses the
/// n denominator. `centered` keeps the centred data for fourth moments.
struct Moments {
  std::vector<std::string> observed;
  Matrix S;
  Matrix centered;
  Eigen::Index n_used = 0;
  Eigen::Index n_total = 0;
  Vector dwls_gamma;  // diagonal fourth-moment variances of vech(S)

  Matrix adf_gamma() const {
    const Eigen::Index p = S.rows();
    const auto idx = vech_indices(static_cast<int>(p));
    const Eigen::Index v = static_cast<Eigen::Index>(idx.size());
    Matrix Z(centered.rows(), v);
    for (Eigen::Index k = 0; k < v; ++k)
      Z.col(k) = centered.col(idx[static_cast<std::size_t>(k)].i).cwiseProduct(centered.col(idx[static_cast<std::size_t>(k)].j));
    const Vector s = vech(S);
    return Z.transpose() * Z / static_cast<double>(centered.rows()) - s * s.transpose();
  }
};

inline Moments compute_moments(const NumericMatrix& X, const std::vector<std::string>& observed) {
  Moments mo;
  mo.observed = observed;
  const auto sub = X.select(observed);
  mo.n_total = sub.n_rows();
  const auto lw = sub.listwise();
  mo.n_used = lw.n_rows();
  const Eigen::Index p = static_cast<Eigen::Index>(observed.size());
  if (mo.n_used < 2) throw DataError("fewer than two complete observations after listwise deletion");
  const Vector mean = lw.cells.colwise().mean();
  mo.centered = lw.cells.rowwise() - mean.transpose();
  mo.S = mo.centered.transpose() * mo.centered / static_cast<double>(mo.n_used);
  const auto idx = vech_indices(static_cast<int>(p));
  mo.dwls_gamma.resize(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto [i, j] = idx[k];
    const double s = mo.S(i, j);
    mo.dwls_gamma(static_cast<Eigen::Index>(k)) =
        mo.centered.col(i).cwiseProduct(mo.centered.col(j)).squaredNorm() / static_cast<double>(mo.n_used) - s * s;
  }
  return mo;
}

inline Moments moments_from_covariance(const Matrix& S, Eigen::Index n, std::vector<std::string> observed) {
  Moments mo;
  mo.observed = std::move(observed);
  mo.S = S;
  mo.n_used = mo.n_total = n;
  return mo;
}

// ---------------------------------------------------------------------------
// Discrepancy functions.

struct MlObjective {
  const SemModel& model;
  const Matrix& S;
  double logdet_S;

  double operator()(const Vector& theta, Vector& g) const {
    Implied im;
    try {
      im = compute_implied(build_matrices(model, theta));
    } catch (const ModelError&) {
      return kNaN;
    }
    Eigen::LLT<Matrix> llt(im.Sigma);
    if (llt.info() != Eigen::Success) return kNaN;
    const Eigen::Index p = S.rows();
    const Matrix P = llt.solve(Matrix::Identity(p, p));
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const Matrix PS = P * S;
    const double f = logdet + PS.trace() - logdet_S - static_cast<double>(p);
    const Matrix W = P - PS * P;  // P (Sigma - S) P
    gradient_from_weight(model, im, 0.5 * (W + W.transpose()), g);
    return f;
  }
};

struct DwlsObjective {
  const SemModel& model;
  const Matrix& S;
  const Vector& weights;  // 1 / gamma per vech element

  double operator()(const Vector& theta, Vector& g) const {
    Implied im;
    try {
      im = compute_implied(build_matrices(model, theta));
    } catch (const ModelError&) {
      return kNaN;
    }
    const Eigen::Index p = S.rows();
    Matrix W(p, p);
    double f = 0.0;
    Eigen::Index k = 0;
    for (Eigen::Index j = 0; j < p; ++j)
      for (Eigen::Index i = j; i < p; ++i, ++k) {
        const double r = S(i, j) - im.Sigma(i, j);
        f += weights(k) * r * r;
        if (i == j)
          W(i, i) = -2.0 * weights(k) * r;
        else
          W(i, j) = W(j, i) = -weights(k) * r;
      }
    gradient_from_weight(model, im, W, g);
    return f;
  }
};

// ---------------------------------------------------------------------------
// Start values.

/// Values from an earlier fit with the same observed and factor ordering,
/// used to seed structurally different models.
struct WarmStart {
  Matrix Lambda;
  Vector theta_diag;
  Matrix latent_cov;
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.5);
}

inline std::vector<int> topological_order(const SemModel& m) {
  std::vector<int> order, indeg(static_cast<std::size_t>(m.n_factors()), 0);
  for (const auto& e : m.regressions) ++indeg[static_cast<std::size_t>(m.factor_index(e.to))];
  std::vector<int> ready;
  for (int f = 0; f < m.n_factors(); ++f)
    if (indeg[static_cast<std::size_t>(f)] == 0) ready.push_back(f);
  while (!ready.empty()) {
    const int f = ready.front();
    ready.erase(ready.begin());
    order.push_back(f);
    for (const auto& e : m.regressions)
      if (m.factor_index(e.from) == f && --indeg[static_cast<std::size_t>(m.factor_index(e.to))] == 0)
        ready.push_back(m.factor_index(e.to));
  }
  return order;
}

}  // namespace detail

/// Data-driven start values. Measurement part: each factor's variance is
/// estimated from marker-indicator covariance triads, loadings by
/// covariance with the marker, residual variances by subtraction. The
/// latent covariance matrix is estimated from marker covariances (or taken
/// from `warm`), regressions by least squares on it, and disturbance
/// (co)variances from (I - B) Phi (I - B)'.
inline Vector start_values(const SemModel& m, const Matrix& S, const WarmStart* warm = nullptr) {
  const int p = m.n_observed(), k = m.n_factors();
  Matrix Lambda = Matrix::Zero(p, k);
  Vector theta_diag(p);
  Matrix Phi = Matrix::Zero(k, k);
  std::vector<int> marker(static_cast<std::size_t>(k), -1);
  Vector marker_loading = Vector::Ones(k);

  for (int f = 0; f < k; ++f) {
    std::vector<const Parameter*> loads;
    for (const auto& par : m.parameters)
      if (par.kind == ParamKind::loading && par.col == f) loads.push_back(&par);
    const Parameter* mk = nullptr;
    for (auto* l : loads)
      if (!l->free && l->value != 0.0) {
        mk = l;
        break;
      }
    const bool pseudo = mk == nullptr;
    if (pseudo) mk = loads.front();
    const int r = mk->row;
    marker[static_cast<std::size_t>(f)] = r;
    double est;
    std::vector<int> others;
    for (auto* l : loads)
      if (l->row != r) others.push_back(l->row);
    if (others.size() >= 2) {
      std::vector<double> ratios;
      for (std::size_t a = 0; a < others.size(); ++a)
        for (std::size_t b = a + 1; b < others.size(); ++b) {
          const double q = S(r, others[a]) * S(r, others[b]) / S(others[a], others[b]);
          if (std::isfinite(q) && q > 0.0) ratios.push_back(q);
        }
      est = ratios.empty() ? 0.5 * S(r, r) : detail::median(ratios);
    } else if (others.size() == 1) {
      est = std::abs(S(r, others[0]));
    } else {
      est = 0.5 * S(r, r);
    }
    est = std::clamp(est, 0.05 * S(r, r), 0.95 * S(r, r));
    // est is the common variance of the marker indicator.
    double lam_r, phi;
    if (pseudo) {
      const Parameter* var = nullptr;
      for (const auto& par : m.parameters)
        if (par.kind == ParamKind::latent_variance && par.row == f) var = &par;
      phi = (var && !var->free) ? var->value : est;
      lam_r = std::sqrt(est / phi);
    } else {
      lam_r = mk->value;
      phi = est / (lam_r * lam_r);
    }
    marker_loading(f) = lam_r;
    Phi(f, f) = phi;
    for (auto* l : loads) {
      const int i = l->row;
      Lambda(i, f) = (!l->free) ? l->value : (i == r ? lam_r : S(i, r) / (lam_r * phi));
    }
  }
  for (int i = 0; i < p; ++i) {
    double common = 0.0;
    for (int f = 0; f < k; ++f) common += Lambda(i, f) * Lambda(i, f) * Phi(f, f);
    theta_diag(i) = std::max(S(i, i) - common, 0.1 * S(i, i));
  }
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < a; ++b)
      Phi(a, b) = Phi(b, a) = S(marker[static_cast<std::size_t>(a)], marker[static_cast<std::size_t>(b)]) /
                               (marker_loading(a) * marker_loading(b));
  if (k > 0) {
    for (int it = 0; it < 50 && min_eigenvalue(Phi) < 1e-3 * Phi.diagonal().minCoeff(); ++it) {
      const Vector d = Phi.diagonal();
      Phi *= 0.9;
      Phi.diagonal() = d;
    }
  }
  if (warm && warm->Lambda.rows() == p && warm->Lambda.cols() == k) {
    Lambda = warm->Lambda;
    theta_diag = warm->theta_diag;
    Phi = warm->latent_cov;
  }

  // Regressions by least squares on Phi, in topological order.
  Matrix B = Matrix::Zero(k, k);
  for (int t : detail::topological_order(m)) {
    std::vector<int> parents;
    for (const auto& e : m.regressions)
      if (m.factor_index(e.to) == t) parents.push_back(m.factor_index(e.from));
    if (parents.empty()) continue;
    const Eigen::Index q = static_cast<Eigen::Index>(parents.size());
    Matrix Ppp(q, q);
    Vector Ppt(q);
    for (Eigen::Index a = 0; a < q; ++a) {
      Ppt(a) = Phi(parents[static_cast<std::size_t>(a)], t);
      for (Eigen::Index b = 0; b < q; ++b) Ppp(a, b) = Phi(parents[static_cast<std::size_t>(a)], parents[static_cast<std::size_t>(b)]);
    }
    const Vector beta = Ppp.ldlt().solve(Ppt);
    for (Eigen::Index a = 0; a < q; ++a) B(t, parents[static_cast<std::size_t>(a)]) = beta(a);
  }
  for (const auto& par : m.parameters)
    if (par.kind == ParamKind::regression && !par.free) B(par.row, par.col) = par.value;
  Matrix Psi = Matrix::Zero(k, k);
  if (k > 0) {
    const Matrix IB = Matrix::Identity(k, k) - B;
    Psi = IB * Phi * IB.transpose();
    for (int f = 0; f < k; ++f) Psi(f, f) = std::max(Psi(f, f), 0.05 * Phi(f, f));
  }

  Vector x(m.n_free());
  for (const auto& par : m.parameters) {
    if (!par.free) continue;
    double v = 0.0;
    switch (par.kind) {
      case ParamKind::loading: v = Lambda(par.row, par.col); break;
      case ParamKind::regression: v = B(par.row, par.col); break;
      case ParamKind::latent_variance:
      case ParamKind::latent_covariance: v = Psi(par.row, par.col); break;
      case ParamKind::residual_variance: v = theta_diag(par.row); break;
      case ParamKind::residual_covariance: v = 0.0; break;
    }
    x(par.index) = std::isfinite(v) ? v : 0.0;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Fit.

struct FitOptions {
  Estimator estimator = Estimator::ml;
  bool n_minus_one = false;
  int max_iter = 2000;
  double grad_tol = 1e-6;
  double rel_tol = 1e-8;
  bool compute_se = true;
  bool compute_residuals = true;
  double residual_threshold = 2.50;
  const WarmStart* warm = nullptr;
  std::optional<Vector> start;
  double confidence = 0.90;
};

struct ParameterEstimate {
  Parameter param;
  double estimate = kNaN;
  double se = kNaN;
  double z = kNaN;
  double std_all = kNaN;
};

struct ResidualSummary {
  Matrix raw;
  Matrix standardized;
  double max_abs = kNaN;
  std::string max_pair;
  double threshold = 2.50;
  bool pass = false;
};

struct SemFit {
  std::shared_ptr<const SemModel> model;
  Estimator estimator = Estimator::ml;
  Vector theta;
  std::vector<ParameterEstimate> estimates;
  ModelMatrices matrices;
  Matrix latent_cov;
  Matrix S;
  Matrix sigma;
  Eigen::Index n_used = 0;
  Eigen::Index n_total = 0;
  double multiplier = 0.0;
  double fmin = kNaN;
  double chi2 = kNaN;
  int df = 0;
  double chi2_baseline = kNaN;
  int df_baseline = 0;
  int n_free = 0;
  FitIndices indices;
  double srmr = kNaN;
  std::optional<double> loglik;
  std::optional<double> aic;
  std::optional<double> bic;
  bool converged = false;
  bool sigma_pd = false;
  bool heywood = false;
  bool invalid = false;
  int iterations = 0;
  int evaluations = 0;
  double grad_norm = kNaN;
  double rel_change = kNaN;
  std::string message;
  std::vector<std::string> flags;
  std::optional<ResidualSummary> residuals;

  /// Converged with a positive-definite implied matrix and no improper
  /// estimates.
  bool usable() const { return converged && sigma_pd && !heywood && !invalid; }
};

/// Chi-square statistics of the independence (variances-only) model.
inline double baseline_chi2(const Moments& mo, Estimator est, double multiplier) {
  const Eigen::Index p = mo.S.rows();
  if (est == Estimator::ml) {
    Eigen::LLT<Matrix> llt(mo.S);
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return multiplier * (mo.S.diagonal().array().log().sum() - logdet);
  }
  double t = 0.0;
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index i = j; i < p; ++i, ++k)
      if (i != j) t += mo.S(i, j) * mo.S(i, j) / mo.dwls_gamma(k);
  return static_cast<double>(mo.n_used) * t;
}

namespace detail {

inline Matrix normal_theory_gamma(const Matrix& Sigma) {
  const auto idx = vech_indices(static_cast<int>(Sigma.rows()));
  const Eigen::Index v = static_cast<Eigen::Index>(idx.size());
  Matrix G(v, v);
  for (Eigen::Index a = 0; a < v; ++a)
    for (Eigen::Index b = 0; b < v; ++b) {
      const auto [i, j] = idx[static_cast<std::size_t>(a)];
      const auto [k, l] = idx[static_cast<std::size_t>(b)];
      G(a, b) = Sigma(i, k) * Sigma(j, l) + Sigma(i, l) * Sigma(j, k);
    }
  return G;
}

inline std::optional<Matrix> safe_inverse(const Matrix& M) {
  Eigen::LDLT<Matrix> ldlt(M);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return std::nullopt;
  const double dmax = ldlt.vectorD().cwiseAbs().maxCoeff();
  if (ldlt.vectorD().minCoeff() <= 1e-12 * dmax) return std::nullopt;
  return Matrix(ldlt.solve(Matrix::Identity(M.rows(), M.cols())));
}

}  // namespace detail

/// Fit a model to precomputed moments.
inline SemFit fit_moments(const SemModel& model, const Moments& mo, const FitOptions& opt = {}) {
  if (mo.observed != model.observed) throw ModelError("moments and model list different observed variables");
  const Eigen::Index p = mo.S.rows();
  SemFit fit;
  fit.model = std::make_shared<const SemModel>(model);
  fit.estimator = opt.estimator;
  fit.S = mo.S;
  fit.n_used = mo.n_used;
  fit.n_total = mo.n_total;
  fit.n_free = model.n_free();
  fit.df = model.df();
  fit.df_baseline = static_cast<int>(p * (p - 1) / 2);
  if (mo.n_used < fit.n_free) throw DataError("fewer complete observations than free parameters");

  Eigen::LLT<Matrix> sllt(mo.S);
  if (sllt.info() != Eigen::Success) throw NumericError("sample covariance matrix is not positive definite");
  const double logdet_S = 2.0 * sllt.matrixLLT().diagonal().array().log().sum();

  Vector weights;
  if (opt.estimator == Estimator::dwls) {
    if (mo.dwls_gamma.size() != p * (p + 1) / 2) throw DataError("DWLS needs raw data for fourth moments");
    weights.resize(mo.dwls_gamma.size());
    const auto idx = vech_indices(static_cast<int>(p));
    for (Eigen::Index k = 0; k < weights.size(); ++k) {
      if (!(mo.dwls_gamma(k) > 0.0)) {
        const auto [i, j] = idx[static_cast<std::size_t>(k)];
        throw NumericError("zero DWLS weight for moment (" + mo.observed[static_cast<std::size_t>(i)] + ", " +
                           mo.observed[static_cast<std::size_t>(j)] + ")");
      }
      weights(k) = 1.0 / mo.dwls_gamma(k);
    }
  }

  const Vector x0 = opt.start ? *opt.start : start_values(model, mo.S, opt.warm);
  OptimizeOptions oo;
  oo.max_iter = opt.max_iter;
  oo.grad_tol = opt.grad_tol;
  OptimizeResult res;
  if (opt.estimator == Estimator::ml)
    res = minimize_bfgs(MlObjective{model, mo.S, logdet_S}, x0, oo);
  else
    res = minimize_bfgs(DwlsObjective{model, mo.S, weights}, x0, oo);

  fit.theta = res.x;
  fit.fmin = res.value;
  fit.iterations = res.iterations;
  fit.evaluations = res.evaluations;
  fit.grad_norm = res.grad_norm;
  fit.rel_change = res.last_rel_change;
  fit.message = res.message;
  const bool rel_ok = std::isnan(res.last_rel_change) || res.last_rel_change <= opt.rel_tol ||
                      res.grad_norm < opt.grad_tol;
  fit.converged = res.converged && rel_ok && std::isfinite(res.value);
  if (!fit.converged) fit.flags.push_back("not converged: " + res.message);

  fit.matrices = build_matrices(model, fit.theta);
  Implied im;
  try {
    im = compute_implied(fit.matrices);
  } catch (const ModelError& e) {
    fit.converged = false;
    fit.flags.push_back(e.what());
    return fit;
  }
  fit.sigma = im.Sigma;
  fit.latent_cov = im.latent_cov;
  Eigen::LLT<Matrix> llt(im.Sigma);
  fit.sigma_pd = llt.info() == Eigen::Success;
  if (!fit.sigma_pd) fit.flags.push_back("implied covariance not positive definite");

  // Improper solutions.
  for (Eigen::Index i = 0; i < p; ++i)
    if (fit.matrices.Theta(i, i) < 0.0) {
      fit.heywood = true;
      fit.flags.push_back("negative residual variance for " + model.observed[static_cast<std::size_t>(i)]);
    }
  for (Eigen::Index f = 0; f < fit.matrices.Psi.rows(); ++f)
    if (fit.matrices.Psi(f, f) < 0.0) {
      fit.heywood = true;
      fit.flags.push_back("negative latent variance for " + model.factors[static_cast<std::size_t>(f)]);
    }
  auto check_corr = [&](const Matrix& C, const std::vector<std::string>& names, const char* what) {
    for (Eigen::Index a = 0; a < C.rows(); ++a)
      for (Eigen::Index b = 0; b < a; ++b) {
        if (C(a, b) == 0.0) continue;
        const double den = C(a, a) * C(b, b);
        if (den > 0.0 && std::abs(C(a, b)) / std::sqrt(den) > 1.0) {
          fit.invalid = true;
          fit.flags.push_back(std::string(what) + " correlation above 1 between " +
                              names[static_cast<std::size_t>(a)] + " and " + names[static_cast<std::size_t>(b)]);
        }
      }
  };
  check_corr(fit.latent_cov, model.factors, "latent");
  check_corr(fit.matrices.Psi, model.factors, "disturbance");
  check_corr(fit.matrices.Theta, model.observed, "residual");

  // Test statistics and indices.
  fit.multiplier = static_cast<double>(opt.n_minus_one ? mo.n_used - 1 : mo.n_used);
  if (opt.estimator == Estimator::ml) {
    fit.chi2 = fit.multiplier * std::max(fit.fmin, 0.0);
    fit.chi2_baseline = baseline_chi2(mo, Estimator::ml, fit.multiplier);
    if (fit.sigma_pd) {
      const double n = static_cast<double>(mo.n_used);
      const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      const double tr = llt.solve(mo.S).trace();
      fit.loglik = -0.5 * n * (static_cast<double>(p) * std::log(2.0 * std::numbers::pi) + logdet + tr);
      fit.aic = -2.0 * *fit.loglik + 2.0 * fit.n_free;
      fit.bic = -2.0 * *fit.loglik + fit.n_free * std::log(n);
    }
  } else {
    fit.multiplier = static_cast<double>(mo.n_used);
    fit.chi2 = fit.multiplier * fit.fmin;
    fit.chi2_baseline = baseline_chi2(mo, Estimator::dwls, fit.multiplier);
  }
  fit.indices = fit_indices(fit.chi2, fit.df, fit.chi2_baseline, fit.df_baseline, fit.multiplier, opt.confidence);
  fit.srmr = srmr(mo.S, fit.sigma);

  // Parameter table.
  for (const auto& par : model.parameters) {
    ParameterEstimate pe;
    pe.param = par;
    pe.estimate = par.free ? fit.theta(par.index) : par.value;
    if (!par.free) pe.se = 0.0;
    fit.estimates.push_back(pe);
  }

  if ((opt.compute_se || opt.compute_residuals) && fit.sigma_pd && fit.n_free > 0) {
    const Matrix J = vech_jacobian(model, im);
    const double n = static_cast<double>(mo.n_used);
    Matrix Gamma, V;
    if (opt.estimator == Estimator::ml) {
      Gamma = detail::normal_theory_gamma(fit.sigma);
      auto Vi = detail::safe_inverse(Gamma);
      if (Vi) V = *Vi;
    } else {
      Gamma = mo.adf_gamma();
      V = weights.asDiagonal();
    }
    std::optional<Matrix> bread;
    if (V.size() > 0) bread = detail::safe_inverse(J.transpose() * V * J);
    if (!bread) fit.flags.push_back("information matrix singular; standard errors unavailable");
    if (bread && opt.compute_se) {
      Matrix cov;
      if (opt.estimator == Estimator::ml) {
        // inverse expected information
        cov = *bread / fit.multiplier;
      } else {
        cov = *bread * (J.transpose() * V * Gamma * V * J) * *bread / n;
      }
      for (auto& pe : fit.estimates)
        if (pe.param.free) {
          const double var = cov(pe.param.index, pe.param.index);
          pe.se = var > 0.0 ? std::sqrt(var) : kNaN;
          pe.z = pe.estimate / pe.se;
        }
    }
    if (bread && opt.compute_residuals) {
      const Matrix H = *bread * J.transpose() * V;
      const Eigen::Index v = J.rows();
      const Matrix M = Matrix::Identity(v, v) - J * H;
      const Matrix var = M * Gamma * M.transpose() / n;
      ResidualSummary rs;
      rs.threshold = opt.residual_threshold;
      rs.raw = mo.S - fit.sigma;
      rs.standardized = Matrix::Zero(p, p);
      rs.max_abs = 0.0;
      const auto idx = vech_indices(static_cast<int>(p));
      const double scale = Gamma.diagonal().cwiseAbs().maxCoeff() / n;
      for (Eigen::Index k = 0; k < v; ++k) {
        const auto [i, j] = idx[static_cast<std::size_t>(k)];
        const double r = rs.raw(i, j);
        const double sv = var(k, k);
        const double z = sv > 1e-14 * scale ? r / std::sqrt(sv) : 0.0;
        rs.standardized(i, j) = rs.standardized(j, i) = z;
        if (std::abs(z) > rs.max_abs) {
          rs.max_abs = std::abs(z);
          rs.max_pair = model.observed[static_cast<std::size_t>(i)] + "," + model.observed[static_cast<std::size_t>(j)];
        }
      }
      rs.pass = rs.max_abs < rs.threshold;
      fit.residuals = std::move(rs);
    }
  }
  return fit;
}

/// Fit a model to raw data (listwise deletion over the model's observed
/// variables).
inline SemFit fit_model(const SemModel& model, const NumericMatrix& X, const FitOptions& opt = {}) {
  validate_against(model, X.columns);
  return fit_moments(model, compute_moments(X, model.observed), opt);
}

inline SemFit fit_ml(const SemModel& model, const NumericMatrix& X, FitOptions opt = {}) {
  opt.estimator = Estimator::ml;
  return fit_model(model, X, opt);
}

inline SemFit fit_dwls(const SemModel& model, const NumericMatrix& X, FitOptions opt = {}) {
  opt.estimator = Estimator::dwls;
  return fit_model(model, X, opt);
}

inline WarmStart warm_start_from(const SemFit& fit) {
  return {fit.matrices.Lambda, fit.matrices.Theta.diagonal(), fit.latent_cov};
}

// ---------------------------------------------------------------------------
// Standardized solution.

struct StandardizedSolution {
  std::vector<std::string> observed;
  std::vector<std::string> factors;
  Matrix loadings;            // p x m
  Matrix regressions;         // m x m, (outcome, predictor)
  Matrix factor_correlations; // from the total latent covariance
  Vector residual_variances;  // theta_ii / sigma_ii
  std::vector<double> per_parameter;
  bool all_positive = true;   // loadings, regressions and covariances
  std::vector<std::string> negative;
};

inline StandardizedSolution standardized_solution(SemFit& fit) {
  const auto& m = *fit.model;
  StandardizedSolution st;
  st.observed = m.observed;
  st.factors = m.factors;
  const Vector sd_x = fit.sigma.diagonal().cwiseSqrt();
  const Vector sd_eta = fit.latent_cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  const Eigen::Index p = sd_x.size(), k = sd_eta.size();
  st.loadings = Matrix::Zero(p, k);
  st.regressions = Matrix::Zero(k, k);
  st.factor_correlations = k > 0 ? cov_to_cor(fit.latent_cov) : Matrix(0, 0);
  st.residual_variances = fit.matrices.Theta.diagonal().cwiseQuotient(fit.sigma.diagonal());
  for (auto& pe : fit.estimates) {
    const auto& par = pe.param;
    double s = kNaN;
    switch (par.kind) {
      case ParamKind::loading:
        s = pe.estimate * sd_eta(par.col) / sd_x(par.row);
        st.loadings(par.row, par.col) = s;
        break;
      case ParamKind::regression:
        s = pe.estimate * sd_eta(par.col) / sd_eta(par.row);
        st.regressions(par.row, par.col) = s;
        break;
      case ParamKind::latent_variance: s = pe.estimate / fit.latent_cov(par.row, par.row); break;
      case ParamKind::latent_covariance:
        s = pe.estimate / std::sqrt(fit.matrices.Psi(par.row, par.row) * fit.matrices.Psi(par.col, par.col));
        break;
      case ParamKind::residual_variance: s = pe.estimate / fit.sigma(par.row, par.row); break;
      case ParamKind::residual_covariance:
        s = pe.estimate / std::sqrt(fit.matrices.Theta(par.row, par.row) * fit.matrices.Theta(par.col, par.col));
        break;
    }
    pe.std_all = s;
    st.per_parameter.push_back(s);
    const bool signed_kind = par.kind == ParamKind::loading || par.kind == ParamKind::regression ||
                             par.kind == ParamKind::latent_covariance;
    if (signed_kind && !(s > 0.0)) {
      st.all_positive = false;
      st.negative.push_back(par.lhs + " " + par.op + " " + par.rhs);
    }
  }
  return st;
}

}  // namespace lvm::sem
