#pragma once

#include <algorithm>
#include <cmath>

#include "lvm/common.hpp"
#include "lvm/distributions.hpp"

namespace lvm::sem {

struct FitIndices {
  double cfi = kNaN;
  double tli = kNaN;
  double nfi = kNaN;
  double rmsea = kNaN;
  double rmsea_lower = kNaN;
  double rmsea_upper = kNaN;
  bool rmsea_defined = false;
  bool tli_defined = false;
};

/// Incremental and absolute fit indices from model and independence-model
/// statistics. `n` is the multiplier that scaled the discrepancy into the
/// statistic.
inline FitIndices fit_indices(double chi2_m, double df_m, double chi2_b, double df_b, double n,
                              double confidence = 0.90) {
  FitIndices f;
  const double excess_m = std::max(chi2_m - df_m, 0.0);
  const double denom = std::max({chi2_b - df_b, chi2_m - df_m, 0.0});
  f.cfi = denom > 0.0 ? 1.0 - excess_m / denom : 1.0;
  f.nfi = chi2_b > 0.0 ? (chi2_b - chi2_m) / chi2_b : kNaN;
  if (df_m > 0.0 && df_b > 0.0) {
    const double rb = chi2_b / df_b;
    f.tli = (rb - chi2_m / df_m) / (rb - 1.0);
    f.tli_defined = true;
  }
  if (df_m > 0.0 && n > 0.0) {
    const auto ci = rmsea_interval(chi2_m, df_m, n, confidence);
    f.rmsea = ci.estimate;
    f.rmsea_lower = ci.lower;
    f.rmsea_upper = ci.upper;
    f.rmsea_defined = true;
  }
  return f;
}

/// Root mean square of (s_ij - sigma_ij) / sqrt(s_ii s_jj) over i <= j.
inline double srmr(const Matrix& S, const Matrix& Sigma) {
  if (S.rows() != Sigma.rows() || S.cols() != Sigma.cols()) throw DataError("srmr: dimension mismatch");
  const Eigen::Index p = S.rows();
  double sum = 0.0;
  for (Eigen::Index j = 0; j < p; ++j) {
    if (!(S(j, j) > 0.0)) throw NumericError("srmr: non-positive sample variance");
    for (Eigen::Index i = j; i < p; ++i) {
      const double z = (S(i, j) - Sigma(i, j)) / std::sqrt(S(i, i) * S(j, j));
      sum += z * z;
    }
  }
  return std::sqrt(sum / static_cast<double>(p * (p + 1) / 2));
}

}  // namespace lvm::sem
