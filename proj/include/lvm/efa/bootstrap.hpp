#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "lvm/common.hpp"
#include "lvm/correlation.hpp"
#include "lvm/efa/solution.hpp"
#include "lvm/ingest.hpp"

namespace lvm::efa {

using CorrelationFn = std::function<CorrelationEstimate(const NumericMatrix&)>;
using Resampler = std::function<std::vector<Eigen::Index>(Rng&, Eigen::Index)>;

inline std::vector<Eigen::Index> case_resample(Rng& rng, Eigen::Index n) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (auto& i : idx) i = static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(n)));
  return idx;
}

struct BootstrapOptions {
  int n_boot = 100;
  double alpha = 0.01;
  std::uint64_t seed = 1;
  int jobs = 1;
  double max_drop_fraction = 0.20;
  EfaOptions efa;
  Resampler resampler = case_resample;
};

/// Percentile interval per parameter. `estimate` is the bootstrap median and
/// `full_sample` the full-data value.
struct BootstrapCI {
  Matrix lower;
  Matrix estimate;
  Matrix upper;
  Matrix full_sample;
};

struct BootstrapResult {
  BootstrapCI pattern;
  BootstrapCI phi;
  int n_boot = 0;
  int n_used = 0;
  int n_dropped = 0;
  double alpha = 0.01;
};

/// Column permutation and signs that best match `target` by Tucker
/// congruence. Returns perm[j] = source column placed at position j.
struct Alignment {
  std::vector<int> perm;
  std::vector<double> sign;
};

inline Alignment align_factors(const Matrix& source, const Matrix& target) {
  const Eigen::Index m = target.cols();
  Matrix cong(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b) {
      const double den = std::sqrt(source.col(a).squaredNorm() * target.col(b).squaredNorm());
      cong(a, b) = den > 0.0 ? source.col(a).dot(target.col(b)) / den : 0.0;
    }
  std::vector<int> perm(static_cast<std::size_t>(m));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  if (m <= 8) {
    double best_score = -kInf;
    do {
      double s = 0.0;
      for (Eigen::Index j = 0; j < m; ++j) s += std::abs(cong(perm[static_cast<std::size_t>(j)], j));
      if (s > best_score + 1e-15) {
        best_score = s;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    std::vector<bool> used(static_cast<std::size_t>(m), false);
    for (Eigen::Index j = 0; j < m; ++j) {
      int pick = -1;
      for (Eigen::Index a = 0; a < m; ++a)
        if (!used[static_cast<std::size_t>(a)] && (pick < 0 || std::abs(cong(a, j)) > std::abs(cong(pick, j))))
          pick = static_cast<int>(a);
      used[static_cast<std::size_t>(pick)] = true;
      best[static_cast<std::size_t>(j)] = pick;
    }
  }
  Alignment al;
  al.perm = best;
  for (Eigen::Index j = 0; j < m; ++j) al.sign.push_back(cong(best[static_cast<std::size_t>(j)], j) < 0.0 ? -1.0 : 1.0);
  return al;
}

inline void apply_alignment(const Alignment& al, Matrix& pattern, Matrix& phi) {
  const Eigen::Index m = pattern.cols();
  Matrix P(pattern.rows(), m), F(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    const auto sa = static_cast<std::size_t>(a);
    P.col(a) = al.sign[sa] * pattern.col(al.perm[sa]);
    for (Eigen::Index b = 0; b < m; ++b) {
      const auto sb = static_cast<std::size_t>(b);
      F(a, b) = al.sign[sa] * al.sign[sb] * phi(al.perm[sa], al.perm[sb]);
    }
  }
  pattern = std::move(P);
  phi = std::move(F);
}

namespace detail {

inline BootstrapCI percentile_ci(const std::vector<Matrix>& draws, const Matrix& full, double alpha) {
  BootstrapCI ci;
  ci.full_sample = full;
  ci.lower.resize(full.rows(), full.cols());
  ci.estimate.resize(full.rows(), full.cols());
  ci.upper.resize(full.rows(), full.cols());
  std::vector<double> v(draws.size());
  for (Eigen::Index i = 0; i < full.rows(); ++i)
    for (Eigen::Index j = 0; j < full.cols(); ++j) {
      for (std::size_t b = 0; b < draws.size(); ++b) v[b] = draws[b](i, j);
      std::sort(v.begin(), v.end());
      ci.lower(i, j) = quantile_sorted(v, alpha / 2.0);
      ci.estimate(i, j) = quantile_sorted(v, 0.5);
      ci.upper(i, j) = quantile_sorted(v, 1.0 - alpha / 2.0);
    }
  return ci;
}

}  // namespace detail

/// Case-resampling bootstrap of the rotated pattern and factor correlations.
/// Each replicate is aligned to `reference` before percentile intervals are
/// taken. Replicates that fail are dropped; too many failures is an error.
inline BootstrapResult bootstrap_ci(const NumericMatrix& X, const EfaSolution& reference,
                                    const CorrelationFn& correlate_fn, const BootstrapOptions& opt = {}) {
  const int m = reference.n_factors();
  const Eigen::Index n = X.n_rows();
  std::vector<Matrix> patterns(static_cast<std::size_t>(opt.n_boot));
  std::vector<Matrix> phis(static_cast<std::size_t>(opt.n_boot));
  std::vector<char> ok(static_cast<std::size_t>(opt.n_boot), 0);
  parallel_for(static_cast<std::size_t>(opt.n_boot), opt.jobs, [&](std::size_t b) {
    Rng rng(derive_seed(opt.seed, b));
    try {
      const auto Xb = X.rows(opt.resampler(rng, n));
      const auto Rb = correlate_fn(Xb);
      EfaOptions eo = opt.efa;
      eo.rotation.seed = derive_seed(opt.seed, 1000003ULL + b);
      auto sol = fit_efa(Rb, m, n, eo);
      if (!sol.converged) return;
      const auto al = align_factors(sol.pattern, reference.pattern);
      apply_alignment(al, sol.pattern, sol.phi);
      patterns[b] = std::move(sol.pattern);
      phis[b] = std::move(sol.phi);
      ok[b] = 1;
    } catch (const Error&) {
    }
  });
  BootstrapResult res;
  res.n_boot = opt.n_boot;
  res.alpha = opt.alpha;
  std::vector<Matrix> P, F;
  for (std::size_t b = 0; b < ok.size(); ++b)
    if (ok[b]) {
      P.push_back(patterns[b]);
      F.push_back(phis[b]);
    }
  res.n_used = static_cast<int>(P.size());
  res.n_dropped = opt.n_boot - res.n_used;
  if (res.n_used == 0 || res.n_dropped > opt.max_drop_fraction * opt.n_boot)
    throw NumericError("bootstrap: " + std::to_string(res.n_dropped) + " of " + std::to_string(opt.n_boot) +
                       " replicates failed");
  res.pattern = detail::percentile_ci(P, reference.pattern, opt.alpha);
  res.phi = detail::percentile_ci(F, reference.phi, opt.alpha);
  return res;
}

}  // namespace lvm::efa
