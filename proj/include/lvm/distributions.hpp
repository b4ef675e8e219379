#pragma once

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/non_central_chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "lvm/common.hpp"

namespace lvm {

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double x) {
  if (x == kInf) return 1.0;
  if (x == -kInf) return 0.0;
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

inline double normal_quantile(double p) {
  if (p <= 0.0) return -kInf;
  if (p >= 1.0) return kInf;
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, p);
}

/// Standard bivariate normal density with correlation rho.
inline double bivariate_normal_pdf(double h, double k, double rho) {
  if (std::isinf(h) || std::isinf(k)) return 0.0;
  const double one_minus = 1.0 - rho * rho;
  const double q = (h * h - 2.0 * rho * h * k + k * k) / one_minus;
  return std::exp(-0.5 * q) / (2.0 * std::numbers::pi * std::sqrt(one_minus));
}

namespace detail {

// Upper-orthant probability P(X > h, Y > k) for a standard bivariate normal,
// after Drezner & Wesolowsky (1990) as refined by Genz (2004): Gauss-Legendre
// quadrature of Plackett's integral in asin(rho) for |rho| < 0.925 and of the
// Owen-type expansion otherwise. Absolute error is below 1e-15 in double
// precision.
inline double bivariate_upper(double h, double k, double rho) {
  if (h == kInf || k == kInf) return 0.0;
  if (h == -kInf) return k == -kInf ? 1.0 : normal_cdf(-k);
  if (k == -kInf) return normal_cdf(-h);
  if (rho == 0.0) return normal_cdf(-h) * normal_cdf(-k);

  static constexpr std::array<double, 3> w6 = {0.1713244923791705, 0.3607615730481384,
                                               0.4679139345726904};
  static constexpr std::array<double, 3> x6 = {0.9324695142031522, 0.6612093864662647,
                                               0.2386191860831970};
  static constexpr std::array<double, 6> w12 = {0.04717533638651177, 0.1069393259953183,
                                                0.1600783285433464,  0.2031674267230659,
                                                0.2334925365383547,  0.2491470458134029};
  static constexpr std::array<double, 6> x12 = {0.9815606342467191, 0.9041172563704750,
                                                0.7699026741943050, 0.5873179542866171,
                                                0.3678314989981802, 0.1252334085114692};
  static constexpr std::array<double, 10> w20 = {
      0.01761400713915212, 0.04060142980038694, 0.06267204833410906, 0.08327674157670475,
      0.1019301198172404,  0.1181945319615184,  0.1316886384491766,  0.1420961093183821,
      0.1491729864726037,  0.1527533871307259};
  static constexpr std::array<double, 10> x20 = {
      0.9931285991850949, 0.9639719272779138, 0.9122344282513259, 0.8391169718222188,
      0.7463319064601508, 0.6360536807265150, 0.5108670019508271, 0.3737060887154196,
      0.2277858511416451, 0.07652652113349733};

  const double* w;
  const double* x;
  int ng;
  const double ar = std::abs(rho);
  if (ar < 0.3) {
    w = w6.data();
    x = x6.data();
    ng = 3;
  } else if (ar < 0.75) {
    w = w12.data();
    x = x12.data();
    ng = 6;
  } else {
    w = w20.data();
    x = x20.data();
    ng = 10;
  }

  constexpr double twopi = 2.0 * std::numbers::pi;
  double hk = h * k;
  double bvn = 0.0;

  if (ar < 0.925) {
    const double hs = (h * h + k * k) / 2.0;
    const double asr = std::asin(rho);
    for (int i = 0; i < ng; ++i) {
      for (double sign : {-1.0, 1.0}) {
        const double sn = std::sin(asr * (sign * x[i] + 1.0) / 2.0);
        bvn += w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
      }
    }
    return bvn * asr / (2.0 * twopi) + normal_cdf(-h) * normal_cdf(-k);
  }

  if (rho < 0.0) {
    k = -k;
    hk = -hk;
  }
  if (ar < 1.0) {
    const double as = (1.0 - rho) * (1.0 + rho);
    double a = std::sqrt(as);
    const double bs = (h - k) * (h - k);
    const double c = (4.0 - hk) / 8.0;
    const double d = (12.0 - hk) / 16.0;
    double asr = -(bs / as + hk) / 2.0;
    if (asr > -100.0)
      bvn = a * std::exp(asr) *
            (1.0 - c * (bs - as) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as * as / 5.0);
    if (hk > -100.0) {
      const double b = std::sqrt(bs);
      bvn -= std::exp(-hk / 2.0) * std::sqrt(twopi) * normal_cdf(-b / a) * b *
             (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
    }
    a /= 2.0;
    for (int i = 0; i < ng; ++i) {
      for (double sign : {-1.0, 1.0}) {
        double xs = a * (sign * x[i] + 1.0);
        xs *= xs;
        asr = -(bs / xs + hk) / 2.0;
        if (asr > -100.0) {
          const double rs = std::sqrt(1.0 - xs);
          const double sp = 1.0 + c * xs * (1.0 + d * xs);
          const double ep = std::exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs;
          bvn += a * w[i] * std::exp(asr) * (ep - sp);
        }
      }
    }
    bvn = -bvn / twopi;
  }
  if (rho > 0.0) {
    bvn += normal_cdf(-std::max(h, k));
  } else {
    bvn = -bvn;
    if (k > h) {
      if (h < 0.0)
        bvn += normal_cdf(k) - normal_cdf(h);
      else
        bvn += normal_cdf(-h) - normal_cdf(-k);
    }
  }
  return std::clamp(bvn, 0.0, 1.0);
}

}  // namespace detail

/// Lower-orthant probability P(X <= h, Y <= k) for a standard bivariate normal.
inline double bivariate_normal_cdf(double h, double k, double rho) {
  if (h == -kInf || k == -kInf) return 0.0;
  if (h == kInf) return normal_cdf(k);
  if (k == kInf) return normal_cdf(h);
  if (rho >= 1.0) return normal_cdf(std::min(h, k));
  if (rho <= -1.0) return std::max(0.0, normal_cdf(h) - normal_cdf(-k));
  return detail::bivariate_upper(-h, -k, rho);
}

inline double chi_squared_cdf(double x, double df) {
  if (x <= 0.0) return 0.0;
  return boost::math::cdf(boost::math::chi_squared_distribution<double>(df), x);
}

inline double noncentral_chi_squared_cdf(double x, double df, double noncentrality) {
  if (x <= 0.0) return 0.0;
  if (noncentrality <= 0.0) return chi_squared_cdf(x, df);
  return boost::math::cdf(
      boost::math::non_central_chi_squared_distribution<double>(df, noncentrality), x);
}

/// Noncentrality lambda with P(chi2_df(lambda) <= statistic) == target, or 0
/// when even the central distribution falls below the target.
inline double noncentrality_for_cdf(double statistic, double df, double target) {
  auto g = [&](double lambda) { return noncentral_chi_squared_cdf(statistic, df, lambda) - target; };
  if (g(0.0) <= 0.0) return 0.0;
  double hi = std::max(1.0, statistic);
  while (g(hi) > 0.0) hi *= 2.0;
  boost::uintmax_t iters = 200;
  const auto tol = [](double a, double b) {
    return std::abs(b - a) <= 1e-14 * std::max(1.0, std::abs(a));
  };
  const auto bracket = boost::math::tools::toms748_solve(g, 0.0, hi, tol, iters);
  return 0.5 * (bracket.first + bracket.second);
}

struct RmseaInterval {
  double estimate = kNaN;
  double lower = kNaN;
  double upper = kNaN;
};

/// RMSEA point estimate and two-sided interval at the given confidence (0.90
/// gives the customary 5%/95% bounds). `multiplier` is the sample-size factor
/// that scaled the discrepancy into the statistic (N or N - 1).
inline RmseaInterval rmsea_interval(double chi2, double df, double multiplier,
                                    double confidence = 0.90) {
  RmseaInterval out;
  if (!(df > 0.0) || !(multiplier > 0.0) || !std::isfinite(chi2)) return out;
  const double tail = (1.0 - confidence) / 2.0;
  out.estimate = std::sqrt(std::max(chi2 - df, 0.0) / (df * multiplier));
  const double lambda_lo = noncentrality_for_cdf(chi2, df, 1.0 - tail);
  const double lambda_hi = noncentrality_for_cdf(chi2, df, tail);
  out.lower = std::sqrt(lambda_lo / (df * multiplier));
  out.upper = std::sqrt(lambda_hi / (df * multiplier));
  return out;
}

}  // namespace lvm
