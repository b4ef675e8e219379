#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "lvm/common.hpp"

namespace lvm {

struct OptimizeOptions {
  int max_iter = 2000;
  /// Infinity norm of the projected gradient.
  double grad_tol = 1e-7;
  /// Relative objective change between accepted steps.
  double rel_tol = 1e-12;
  std::optional<Vector> lower;
  std::optional<Vector> upper;
};

struct OptimizeResult {
  Vector x;
  double value = kNaN;
  int iterations = 0;
  int evaluations = 0;
  double grad_norm = kNaN;
  double last_rel_change = kNaN;
  bool converged = false;
  std::string message;
};

/// Box-constrained BFGS with a projected Armijo backtracking line search.
///
/// `objective(x, grad)` returns f(x) and writes the gradient; it may return a
/// non-finite value to reject an infeasible point, in which case the step is
/// shortened. Variables sitting on a bound with the gradient pointing outward
/// are held fixed for the iteration. Accepted steps never increase f.
template <class Objective>
OptimizeResult minimize_bfgs(Objective&& objective, Vector x0, const OptimizeOptions& opt = {}) {
  const Eigen::Index n = x0.size();
  const Vector lo = opt.lower.value_or(Vector::Constant(n, -kInf));
  const Vector hi = opt.upper.value_or(Vector::Constant(n, kInf));
  auto project = [&](Vector v) {
    for (Eigen::Index i = 0; i < n; ++i) v(i) = std::clamp(v(i), lo(i), hi(i));
    return v;
  };

  OptimizeResult res;
  res.x = project(std::move(x0));
  Vector g(n);
  double f = objective(res.x, g);
  ++res.evaluations;
  if (!std::isfinite(f)) {
    res.value = f;
    res.message = "objective not finite at the starting point";
    return res;
  }

  auto free_mask = [&](const Vector& x, const Vector& grad) {
    Eigen::Array<bool, Eigen::Dynamic, 1> m(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool at_lo = x(i) <= lo(i) && grad(i) > 0.0;
      const bool at_hi = x(i) >= hi(i) && grad(i) < 0.0;
      m(i) = !(at_lo || at_hi);
    }
    return m;
  };
  auto projected_norm = [&](const Vector& x, const Vector& grad) {
    const auto m = free_mask(x, grad);
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (m(i)) s = std::max(s, std::abs(grad(i)));
    return s;
  };

  Matrix H = Matrix::Identity(n, n);
  bool scaled = false;
  res.grad_norm = projected_norm(res.x, g);

  for (res.iterations = 0; res.iterations < opt.max_iter; ++res.iterations) {
    if (res.grad_norm < opt.grad_tol) {
      res.converged = true;
      break;
    }
    const auto mask = free_mask(res.x, g);
    Vector gf = g;
    for (Eigen::Index i = 0; i < n; ++i)
      if (!mask(i)) gf(i) = 0.0;
    Vector d = -(H * gf);
    for (Eigen::Index i = 0; i < n; ++i)
      if (!mask(i)) d(i) = 0.0;
    if (gf.dot(d) >= 0.0) {
      H.setIdentity();
      scaled = false;
      d = -gf;
    }

    // Projected backtracking.
    double step = 1.0;
    Vector x_new, g_new(n);
    double f_new = kNaN;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = project(res.x + step * d);
      f_new = objective(x_new, g_new);
      ++res.evaluations;
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * gf.dot(x_new - res.x)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!H.isIdentity()) {
        H.setIdentity();
        scaled = false;
        continue;
      }
      res.message = "line search failed";
      break;
    }

    const Vector s = x_new - res.x;
    const Vector y = g_new - g;
    res.last_rel_change = std::abs(f - f_new) / std::max(1.0, std::abs(f));
    res.x = std::move(x_new);
    g = g_new;
    const double f_old = f;
    f = f_new;
    res.grad_norm = projected_norm(res.x, g);

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        H *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Vector Hy = H * y;
      const double yHy = y.dot(Hy);
      H += ((sy + yHy) * rho * rho) * (s * s.transpose()) -
           rho * (Hy * s.transpose() + s * Hy.transpose());
    }
    if (res.grad_norm < opt.grad_tol) {
      res.converged = true;
      ++res.iterations;
      break;
    }
    if (std::abs(f_old - f) <= opt.rel_tol * std::max(1.0, std::abs(f)) && s.norm() < 1e-14) {
      res.message = "no further progress";
      ++res.iterations;
      break;
    }
  }
  res.value = f;
  if (res.converged)
    res.message = "converged";
  else if (res.message.empty())
    res.message = "iteration limit reached";
  return res;
}

}  // namespace lvm
