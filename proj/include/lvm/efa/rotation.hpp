#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "lvm/common.hpp"

namespace lvm::efa {

struct RotationOptions {
  int n_starts = 10;
  std::uint64_t seed = 1;
  int max_iter = 10000;
  double eps = 1e-7;  // Frobenius norm of the projected gradient
};

struct RotationResult {
  Matrix pattern;
  Matrix phi;
  Matrix T;  // pattern = A * inv(T)'
  double criterion = kNaN;
  bool converged = false;
  int starts_converged = 0;
  int iterations = 0;
};

class RotationError : public NumericError {
 public:
  RotationError(const std::string& what, RotationResult best) : NumericError(what), best_(std::move(best)) {}
  const RotationResult& best() const { return best_; }

 private:
  RotationResult best_;
};

/// Quartimin criterion and its gradient with respect to the loadings.
inline double quartimin(const Matrix& L, Matrix* grad = nullptr) {
  const Matrix L2 = L.cwiseAbs2();
  const Eigen::Index m = L.cols();
  const Matrix off = Matrix::Ones(m, m) - Matrix::Identity(m, m);
  const Matrix X = L2 * off;
  if (grad) *grad = L.cwiseProduct(X);
  return L2.cwiseProduct(X).sum() / 4.0;
}

/// Gradient-projection oblique rotation from one starting transformation.
inline RotationResult gpf_oblique(const Matrix& A, Matrix T, const RotationOptions& opt) {
  auto loadings = [&](const Matrix& Tm) -> Matrix { return A * Tm.inverse().transpose(); };
  Matrix L = loadings(T);
  Matrix Gq;
  double f = quartimin(L, &Gq);
  Matrix G = -(L.transpose() * Gq * T.inverse()).transpose();
  double al = 1.0;
  RotationResult out;
  for (out.iterations = 0; out.iterations <= opt.max_iter; ++out.iterations) {
    const Vector colsum = (T.cwiseProduct(G)).colwise().sum().transpose();
    const Matrix Gp = G - T * colsum.asDiagonal();
    const double s = Gp.norm();
    if (s < opt.eps) {
      out.converged = true;
      break;
    }
    al *= 2.0;
    Matrix Tt, Lt, Gqt;
    double ft = f;
    for (int i = 0; i <= 10; ++i) {
      Matrix X = T - al * Gp;
      const Vector v = X.colwise().norm().cwiseInverse().transpose();
      Tt = X * v.asDiagonal();
      Lt = loadings(Tt);
      ft = quartimin(Lt, &Gqt);
      if (f - ft > 0.5 * s * s * al) break;
      al /= 2.0;
    }
    T = Tt;
    L = Lt;
    f = ft;
    G = -(L.transpose() * Gqt * T.inverse()).transpose();
  }
  out.pattern = L;
  out.phi = T.transpose() * T;
  out.T = T;
  out.criterion = f;
  return out;
}

inline Matrix random_orthonormal(Rng& rng, Eigen::Index m) {
  const Matrix Z = rng.normal_matrix(m, m);
  Eigen::HouseholderQR<Matrix> qr(Z);
  Matrix Q = qr.householderQ();
  const Matrix Rm = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < m; ++j)
    if (Rm(j, j) < 0.0) Q.col(j) *= -1.0;
  return Q;
}

/// Canonical column order and signs: factors sorted by explained variance
/// diag(Phi L'L) descending, each column's largest-magnitude loading positive.
inline void normalize_solution(Matrix& pattern, Matrix& phi) {
  const Eigen::Index m = pattern.cols();
  for (Eigen::Index j = 0; j < m; ++j) {
    Eigen::Index imax = 0;
    pattern.col(j).cwiseAbs().maxCoeff(&imax);
    if (pattern(imax, j) < 0.0) {
      pattern.col(j) *= -1.0;
      phi.row(j) *= -1.0;
      phi.col(j) *= -1.0;
    }
  }
  const Vector ev = (phi * pattern.transpose() * pattern).diagonal();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return ev(a) > ev(b); });
  Matrix P2(pattern.rows(), m), F2(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    P2.col(a) = pattern.col(order[static_cast<std::size_t>(a)]);
    for (Eigen::Index b = 0; b < m; ++b)
      F2(a, b) = phi(order[static_cast<std::size_t>(a)], order[static_cast<std::size_t>(b)]);
  }
  pattern = std::move(P2);
  phi = 0.5 * (F2 + F2.transpose());
  phi.diagonal().setOnes();
}

/// Oblimin (gamma = 0) rotation: best of an identity start plus
/// n_starts - 1 random orthonormal starts, then normalised. For m = 1 the
/// input is returned with Phi = [1].
inline RotationResult rotate_oblimin(const Matrix& A, const RotationOptions& opt = {}) {
  const Eigen::Index m = A.cols();
  if (m == 1) {
    RotationResult r;
    r.pattern = A;
    r.phi = Matrix::Identity(1, 1);
    r.T = Matrix::Identity(1, 1);
    r.criterion = 0.0;
    r.converged = true;
    r.starts_converged = 1;
    normalize_solution(r.pattern, r.phi);
    return r;
  }
  Rng rng(derive_seed(opt.seed, 0x524f54ULL));
  RotationResult best;
  bool have_best = false;
  int n_conv = 0;
  const int starts = std::max(1, opt.n_starts);
  for (int s = 0; s < starts; ++s) {
    const Matrix T0 = s == 0 ? Matrix::Identity(m, m) : random_orthonormal(rng, m);
    auto r = gpf_oblique(A, T0, opt);
    if (r.converged) ++n_conv;
    const bool better = !have_best || (r.converged && !best.converged) ||
                        (r.converged == best.converged && r.criterion < best.criterion - 1e-12);
    if (better) {
      best = std::move(r);
      have_best = true;
    }
  }
  best.starts_converged = n_conv;
  normalize_solution(best.pattern, best.phi);
  if (n_conv == 0) throw RotationError("oblimin rotation did not converge from any start", best);
  return best;
}

/// Hofmann item complexity (sum l^2)^2 / sum l^4 per row; NaN for an
/// all-zero row.
inline Vector item_complexity(const Matrix& pattern) {
  Vector c(pattern.rows());
  for (Eigen::Index i = 0; i < pattern.rows(); ++i) {
    const double s2 = pattern.row(i).squaredNorm();
    const double s4 = pattern.row(i).array().pow(4).sum();
    c(i) = s4 > 0.0 ? s2 * s2 / s4 : kNaN;
  }
  return c;
}

}  // namespace lvm::efa
