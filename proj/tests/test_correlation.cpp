#include <gtest/gtest.h>

#include <cmath>

#include "lvm/correlation.hpp"
#include "lvm/distributions.hpp"
#include "test_util.hpp"

using namespace lvm;
using lvm::testing::numeric;

namespace {

Matrix cols(std::initializer_list<std::vector<double>> columns) {
  const auto n = static_cast<Eigen::Index>(columns.begin()->size());
  Matrix m(n, static_cast<Eigen::Index>(columns.size()));
  Eigen::Index c = 0;
  for (const auto& col : columns) {
    for (Eigen::Index r = 0; r < n; ++r) m(r, c) = col[static_cast<std::size_t>(r)];
    ++c;
  }
  return m;
}

// Discretized bivariate normal sample at the given cut points.
std::pair<std::vector<double>, std::vector<double>> discretized(double rho, int n, const std::vector<double>& cx,
                                                                const std::vector<double>& cy, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(static_cast<std::size_t>(n)), y(static_cast<std::size_t>(n));
  const double s = std::sqrt(1.0 - rho * rho);
  auto level = [](double v, const std::vector<double>& cuts) {
    int k = 1;
    for (double c : cuts) k += v > c;
    return static_cast<double>(k);
  };
  for (int i = 0; i < n; ++i) {
    const double a = rng.normal(), b = rho * a + s * rng.normal();
    x[static_cast<std::size_t>(i)] = level(a, cx);
    y[static_cast<std::size_t>(i)] = level(b, cy);
  }
  return {x, y};
}

// Independent likelihood: cell probabilities from one-dimensional Simpson
// integration, thresholds from the marginals, maximized by golden section.
double brute_force_polychoric(const std::vector<double>& x, const std::vector<double>& y) {
  std::map<double, int> xl, yl;
  for (double v : x) xl[v];
  for (double v : y) yl[v];
  int k = 0;
  for (auto& [v, i] : xl) i = k++;
  k = 0;
  for (auto& [v, i] : yl) i = k++;
  Matrix counts = Matrix::Zero(static_cast<Eigen::Index>(xl.size()), static_cast<Eigen::Index>(yl.size()));
  for (std::size_t i = 0; i < x.size(); ++i) counts(xl[x[i]], yl[y[i]]) += 1.0;
  const double n = static_cast<double>(x.size());
  auto cuts = [&](const Vector& marg) {
    std::vector<double> t{-40.0};
    double cum = 0.0;
    for (Eigen::Index i = 0; i + 1 < marg.size(); ++i) {
      cum += marg(i);
      t.push_back(normal_quantile(cum / n));
    }
    t.push_back(40.0);
    return t;
  };
  const auto a = cuts(counts.rowwise().sum());
  const auto b = cuts(counts.colwise().sum().transpose());
  auto cdf = [](double h, double kk, double rho) {
    const double lo = -9.0;
    h = std::min(h, 9.0);
    if (h <= lo) return 0.0;
    const int m = 4000;
    const double dx = (h - lo) / m, s = std::sqrt(1.0 - rho * rho);
    auto g = [&](double t) { return normal_pdf(t) * 0.5 * std::erfc(-(kk - rho * t) / (s * std::sqrt(2.0))); };
    double sum = g(lo) + g(h);
    for (int i = 1; i < m; ++i) sum += (i % 2 ? 4.0 : 2.0) * g(lo + i * dx);
    return sum * dx / 3.0;
  };
  auto loglik = [&](double rho) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < counts.rows(); ++i)
      for (Eigen::Index j = 0; j < counts.cols(); ++j) {
        if (counts(i, j) == 0.0) continue;
        const double p = cdf(a[i + 1], b[j + 1], rho) - cdf(a[i], b[j + 1], rho) - cdf(a[i + 1], b[j], rho) +
                         cdf(a[i], b[j], rho);
        ll += counts(i, j) * std::log(p);
      }
    return ll;
  };
  double lo = -0.99, hi = 0.99;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - g * (hi - lo), d = lo + g * (hi - lo);
  double fc = loglik(c), fd = loglik(d);
  while (hi - lo > 1e-7) {
    if (fc > fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - g * (hi - lo);
      fc = loglik(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + g * (hi - lo);
      fd = loglik(d);
    }
  }
  return 0.5 * (lo + hi);
}

void expect_well_formed(const CorrelationEstimate& e) {
  for (int i = 0; i < e.size(); ++i) {
    EXPECT_EQ(e.r(i, i), 1.0);
    for (int j = 0; j < e.size(); ++j) {
      if (std::isnan(e.r(i, j))) continue;
      EXPECT_LE(std::abs(e.r(i, j) - e.r(j, i)), 1e-12);
      EXPECT_LE(std::abs(e.r(i, j)), 1.0);
      EXPECT_LE(e.pair_n(i, j), std::min(e.pair_n(i, i), e.pair_n(j, j)));
    }
  }
}

}  // namespace

TEST(Pearson, HandValues) {
  const auto e = pearson_pairwise(numeric(cols({{1, 2, 3, 4, 5}, {2, 1, 4, 3, 5}, {5, 4, 3, 2, 1}})));
  EXPECT_EQ(e.r(0, 0), 1.0);
  EXPECT_NEAR(e.r(0, 1), 0.8, 1e-15);
  EXPECT_NEAR(e.r(0, 2), -1.0, 1e-15);
  expect_well_formed(e);
}

TEST(Pearson, PairwiseCompleteCases) {
  const auto e = pearson_pairwise(numeric(cols({{1, 2, 3, kNaN, 5, 6}, {2, 1, 4, 3, kNaN, 7}, {1, kNaN, kNaN, kNaN, kNaN, 2}})));
  EXPECT_EQ(e.pair_n(0, 1), 4);
  EXPECT_EQ(e.pair_n(0, 0), 5);
  // x over its complete pairs with y: (1,2,3,6) vs (2,1,4,7)
  const std::vector<double> a{1, 2, 3, 6}, b{2, 1, 4, 7};
  const double ma = 3.0, mb = 3.5;
  double sab = 0, saa = 0, sbb = 0;
  for (int i = 0; i < 4; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  EXPECT_NEAR(e.r(0, 1), sab / std::sqrt(saa * sbb), 1e-14);
  EXPECT_TRUE(std::isnan(e.r(0, 2)));
  ASSERT_EQ(e.undefined_pairs.size(), 2u);
  EXPECT_FALSE(e.complete());
  expect_well_formed(e);
}

TEST(Spearman, HandValues) {
  auto e = spearman_pairwise(numeric(cols({{1, 2, 3}, {3, 1, 2}})));
  EXPECT_NEAR(e.r(0, 1), -0.5, 1e-15);
  e = spearman_pairwise(numeric(cols({{1, 1, 2}, {1, 2, 3}})));
  EXPECT_NEAR(e.r(0, 1), std::sqrt(3.0) / 2.0, 1e-15);
}

TEST(Spearman, MonotoneTransformInvariant) {
  Rng rng(4);
  std::vector<double> x(50), y(50);
  for (int i = 0; i < 50; ++i) {
    x[i] = rng.normal();
    y[i] = std::exp(3.0 * x[i]);
  }
  Matrix m(50, 2);
  for (int i = 0; i < 50; ++i) m(i, 0) = x[i], m(i, 1) = y[i];
  EXPECT_NEAR(spearman_pairwise(numeric(m)).r(0, 1), 1.0, 1e-15);
}

TEST(Spearman, AgreesWithPearsonOnTieFreeRanks) {
  Rng rng(8);
  const int n = 30;
  Matrix m(n, 3);
  for (int c = 0; c < 3; ++c) {
    std::vector<double> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i + 1;
    for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(static_cast<std::uint64_t>(i + 1))]);
    for (int i = 0; i < n; ++i) m(i, c) = perm[i];
  }
  const auto p = pearson_pairwise(numeric(m)), s = spearman_pairwise(numeric(m));
  EXPECT_LT((p.r - s.r).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Polychoric, IndependentMedianSplit) {
  std::vector<double> x, y;
  for (int a = 1; a <= 2; ++a)
    for (int b = 1; b <= 2; ++b)
      for (int i = 0; i < 25; ++i) x.push_back(a), y.push_back(b);
  const auto r = polychoric(x, y);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.rho, 0.0, 1e-10);
  EXPECT_NEAR(r.thresholds_x(0), 0.0, 1e-12);
  EXPECT_NEAR(r.thresholds_y(0), 0.0, 1e-12);
}

TEST(Polychoric, ThresholdAtOneSigma) {
  Vector counts(2);
  counts << 8413, 1587;
  EXPECT_NEAR(marginal_thresholds(counts)(0), 1.0, 1e-3);
}

TEST(Polychoric, SimulationOracleQuartiles) {
  const double q = normal_quantile(0.75);
  const std::vector<double> cuts{-q, 0.0, q};
  const auto [x, y] = discretized(0.5, 100000, cuts, cuts, 2024);
  const auto r = polychoric(x, y);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.rho, 0.5, 0.02);
}

TEST(Polychoric, MatchesIndependentLikelihoodMaximizer) {
  Rng pick(3);
  for (int trial = 0; trial < 12; ++trial) {
    const double rho = -0.8 + 1.6 * pick.uniform();
    const std::vector<double> cx{-0.6, 0.3, 1.1}, cy{-1.0, 0.2};
    const auto [x, y] = discretized(rho, 800, cx, cy, 100 + trial);
    const auto r = polychoric(x, y);
    SCOPED_TRACE(::testing::Message() << "trial " << trial << " rho " << rho);
    EXPECT_TRUE(r.converged);
    EXPECT_NEAR(r.rho, brute_force_polychoric(x, y), 2e-6);
  }
}

TEST(Polychoric, ConsistencyAcrossSeeds) {
  // Former failure mode: an exact zero score at the root returned the bracket
  // midpoint. Check every seed stays within sampling error.
  const std::vector<double> cuts{-0.7, 0.0, 0.9};
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto [x, y] = discretized(0.6, 20000, cuts, cuts, seed);
    EXPECT_NEAR(polychoric(x, y).rho, 0.6, 0.025) << "seed " << seed;
  }
}

TEST(Polychoric, ZeroCellsNoCorrection) {
  std::vector<double> x, y;
  const int table[3][3] = {{30, 5, 0}, {6, 25, 4}, {0, 3, 27}};
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int i = 0; i < table[a][b]; ++i) x.push_back(a + 1), y.push_back(b + 1);
  const auto r = polychoric(x, y);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.rho, brute_force_polychoric(x, y), 2e-6);
}

TEST(Polychoric, SingleCategoryUndefined) {
  const std::vector<double> x{1, 1, 1, 1}, y{1, 2, 1, 2};
  EXPECT_THROW(polychoric(x, y), NumericError);
  auto X = numeric(cols({{1, 1, 1, 1}, {1, 2, 1, 2}, {1, 2, 2, 1}}), {}, 2);
  const auto e = mixed_correlation(X);
  EXPECT_TRUE(std::isnan(e.r(0, 1)));
  EXPECT_FALSE(e.complete());
}

TEST(Polychoric, InversionProperties) {
  const std::vector<double> cuts{-0.5, 0.4, 1.2};
  auto [x, y] = discretized(0.45, 3000, cuts, cuts, 77);
  std::vector<double> xi = x, yi = y;
  for (auto& v : xi) v = 5.0 - v;
  for (auto& v : yi) v = 5.0 - v;
  const double r = polychoric(x, y).rho;
  EXPECT_NEAR(polychoric(xi, yi).rho, r, 1e-8);
  EXPECT_NEAR(polychoric(xi, y).rho, -r, 1e-8);
  Matrix m(static_cast<Eigen::Index>(x.size()), 3);
  for (std::size_t i = 0; i < x.size(); ++i) m(i, 0) = x[i], m(i, 1) = y[i], m(i, 2) = xi[i];
  const auto p = pearson_pairwise(numeric(m));
  EXPECT_NEAR(p.r(1, 2), -p.r(0, 1), 1e-14);
  const auto s = spearman_pairwise(numeric(m));
  EXPECT_NEAR(s.r(1, 2), -s.r(0, 1), 1e-14);
}

TEST(Mixed, LevelRuleSelectsEstimator) {
  const std::vector<double> c4{-0.6, 0.1, 0.8};
  std::vector<double> c11;
  for (int i = 1; i <= 10; ++i) c11.push_back(-1.6 + 0.32 * i);
  const auto [a, b] = discretized(0.5, 2000, c4, c4, 5);
  const auto [c, d] = discretized(0.5, 2000, c11, c11, 6);
  Matrix m(2000, 4);
  for (int i = 0; i < 2000; ++i) m(i, 0) = a[i], m(i, 1) = b[i], m(i, 2) = c[i], m(i, 3) = d[i];
  auto X = numeric(m);
  X.levels = {4, 4, 11, 11};
  const auto e = mixed_correlation(X);
  EXPECT_EQ(e.method(0, 1), CorrelationMethod::polychoric);
  EXPECT_EQ(e.method(0, 2), CorrelationMethod::spearman);
  EXPECT_EQ(e.method(2, 3), CorrelationMethod::spearman);
  EXPECT_EQ(e.method(3, 3), CorrelationMethod::spearman);
  expect_well_formed(e);

  CorrelationOptions wide;
  wide.polychoric_max_levels = 11;
  EXPECT_EQ(mixed_correlation(X, wide).method(2, 3), CorrelationMethod::polychoric);
}

TEST(Mixed, ParallelFillMatchesSerial) {
  const auto X = lvm::testing::factor_data(lvm::testing::issp_pattern(), lvm::testing::issp_phi(), 1500, 3);
  CorrelationOptions serial, wide;
  serial.jobs = 1;
  wide.jobs = 8;
  const auto a = pearson_pairwise(X, serial), b = pearson_pairwise(X, wide);
  EXPECT_EQ(a.r, b.r);
  EXPECT_EQ(max_abs_difference(a, b), 0.0);
}

TEST(Repair, NearestCorrelationIsPsd) {
  Matrix r(3, 3);
  r << 1, 0.9, -0.9,  //
      0.9, 1, 0.9,    //
      -0.9, 0.9, 1;
  CorrelationEstimate e;
  e.variables = {"a", "b", "c"};
  e.r = r;
  e.update_definiteness();
  EXPECT_FALSE(e.positive_semidefinite);
  repair_psd(e);
  EXPECT_TRUE(e.positive_semidefinite);
  EXPECT_TRUE(e.psd_repaired);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(e.r(i, i), 1.0, 1e-12);
  EXPECT_LT((e.r - e.r.transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Select, SubsetKeepsCells) {
  const auto e = pearson_pairwise(numeric(cols({{1, 2, 3, 4, 5}, {2, 1, 4, 3, 5}, {5, 4, 3, 2, 1}})));
  const auto s = e.select({"x3", "x1"});
  EXPECT_EQ(s.r(0, 1), e.r(2, 0));
  EXPECT_THROW(e.select({"nope"}), SchemaError);
}
