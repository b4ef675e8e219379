#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "lvm/common.hpp"
#include "lvm/correlation.hpp"
#include "lvm/efa/minres.hpp"

namespace lvm::efa {

enum class NullScheme { simulated, resampled };

inline std::string to_string(NullScheme s) { return s == NullScheme::simulated ? "simulated" : "resampled"; }

inline NullScheme null_scheme_from_string(const std::string& s) {
  if (s == "simulated") return NullScheme::simulated;
  if (s == "resampled") return NullScheme::resampled;
  throw ConfigError("unknown parallel-analysis null scheme '" + s + "'");
}

struct ParallelOptions {
  int n_resamples = 20;
  double quantile = 0.95;
  std::uint64_t seed = 1;
  NullScheme scheme = NullScheme::simulated;
  int jobs = 1;
};

struct ParallelAnalysis {
  Vector observed;             // reduced-matrix eigenvalues, descending
  Vector simulated_envelope;   // chosen quantile per position
  Vector resampled_envelope;
  int suggested_simulated = 0;
  int suggested_resampled = 0;
  int suggested = 0;  // from the configured scheme
  ParallelOptions options;
};

/// Eigenvalues (descending) of R with squared multiple correlations on the
/// diagonal.
inline Vector reduced_eigenvalues(const Matrix& R) {
  Matrix reduced = R;
  reduced.diagonal() = smc(R);
  Eigen::SelfAdjointEigenSolver<Matrix> es(reduced, Eigen::EigenvaluesOnly);
  return es.eigenvalues().reverse();
}

/// Number of leading observed eigenvalues that exceed the envelope.
inline int leading_exceedances(const Vector& observed, const Vector& envelope) {
  int k = 0;
  while (k < observed.size() && observed(k) > envelope(k)) ++k;
  return k;
}

namespace detail {

inline Matrix complete_correlation(const Matrix& Z) {
  const Matrix centered = Z.rowwise() - Z.colwise().mean();
  return cov_to_cor(centered.transpose() * centered);
}

inline Vector envelope(const std::vector<Vector>& draws, double q) {
  const Eigen::Index p = draws.front().size();
  Vector env(p);
  std::vector<double> col(draws.size());
  for (Eigen::Index k = 0; k < p; ++k) {
    for (std::size_t r = 0; r < draws.size(); ++r) col[r] = draws[r](k);
    std::sort(col.begin(), col.end());
    env(k) = quantile_sorted(col, q);
  }
  return env;
}

}  // namespace detail

/// Parallel analysis against both a simulated standard-normal null and a
/// column-permutation null of the same shape as X. `R_observed` is the
/// correlation matrix the factor solution will be extracted from.
inline ParallelAnalysis parallel_analysis(const NumericMatrix& X, const CorrelationEstimate& R_observed,
                                          const ParallelOptions& opt = {}) {
  if (X.n_cols() < 3) throw ConfigError("parallel analysis needs at least three variables");
  if (opt.n_resamples < 20) throw ConfigError("parallel analysis needs at least 20 resamples");
  if (!(opt.quantile > 0.0 && opt.quantile < 1.0)) throw ConfigError("quantile must lie in (0, 1)");
  detail::require_complete(R_observed);

  ParallelAnalysis pa;
  pa.options = opt;
  pa.observed = reduced_eigenvalues(R_observed.r);
  const Eigen::Index n = X.n_rows(), p = X.n_cols();

  std::vector<Vector> sim(static_cast<std::size_t>(opt.n_resamples));
  std::vector<Vector> perm(static_cast<std::size_t>(opt.n_resamples));
  parallel_for(static_cast<std::size_t>(opt.n_resamples), opt.jobs, [&](std::size_t r) {
    Rng rng(derive_seed(opt.seed, 2 * r));
    sim[r] = reduced_eigenvalues(detail::complete_correlation(rng.normal_matrix(n, p)));

    Rng prng(derive_seed(opt.seed, 2 * r + 1));
    NumericMatrix shuffled = X;
    for (Eigen::Index c = 0; c < p; ++c) {
      for (Eigen::Index i = n - 1; i > 0; --i) {
        const auto j = static_cast<Eigen::Index>(prng.index(static_cast<std::uint64_t>(i + 1)));
        std::swap(shuffled.cells(i, c), shuffled.cells(j, c));
      }
    }
    auto Rp = pearson_pairwise(shuffled);
    if (!Rp.complete()) {
      perm[r] = Vector::Constant(p, kNaN);
      return;
    }
    perm[r] = reduced_eigenvalues(Rp.r);
  });
  pa.simulated_envelope = detail::envelope(sim, opt.quantile);
  pa.resampled_envelope = detail::envelope(perm, opt.quantile);
  pa.suggested_simulated = leading_exceedances(pa.observed, pa.simulated_envelope);
  pa.suggested_resampled = leading_exceedances(pa.observed, pa.resampled_envelope);
  pa.suggested = opt.scheme == NullScheme::simulated ? pa.suggested_simulated : pa.suggested_resampled;
  return pa;
}

}  // namespace lvm::efa
