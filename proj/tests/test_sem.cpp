#include <gtest/gtest.h>

#include <cmath>

#include "lvm/sem.hpp"
#include "test_util.hpp"

using namespace lvm;
using namespace lvm::sem;
using lvm::testing::factor_data;

namespace {

Matrix two_factor_lambda() {
  Matrix L = Matrix::Zero(6, 2);
  L.col(0).head(3) << 0.8, 0.7, 0.6;
  L.col(1).tail(3) << 0.75, 0.65, 0.7;
  return L;
}

Matrix two_factor_phi(double r = 0.4) {
  Matrix P(2, 2);
  P << 1, r, r, 1;
  return P;
}

const char* kTwoFactor = "F1 =~ x1 + x2 + x3\nF2 =~ x4 + x5 + x6\nF1 ~~ F2\n";

Vector random_theta(const SemModel& m, Rng& rng) {
  Vector x = m.start_values();
  for (const auto& par : m.parameters) {
    if (!par.free) continue;
    switch (par.kind) {
      case ParamKind::loading: x(par.index) = 0.5 + rng.uniform(); break;
      case ParamKind::regression: x(par.index) = rng.uniform() - 0.5; break;
      case ParamKind::latent_variance: x(par.index) = 0.5 + rng.uniform(); break;
      case ParamKind::latent_covariance: x(par.index) = 0.3 * (rng.uniform() - 0.5); break;
      case ParamKind::residual_variance: x(par.index) = 0.3 + rng.uniform(); break;
      case ParamKind::residual_covariance: x(par.index) = 0.1 * (rng.uniform() - 0.5); break;
    }
  }
  return x;
}

}  // namespace

TEST(ModelParse, MeasurementFirstLoadingFixed) {
  const auto m = parse_model("MR1 =~ V30+V31+V32+V33");
  ASSERT_EQ(m.n_factors(), 1);
  ASSERT_EQ(m.n_observed(), 4);
  int loadings = 0, fixed = 0;
  for (const auto& p : m.parameters)
    if (p.kind == ParamKind::loading) {
      ++loadings;
      if (!p.free) {
        ++fixed;
        EXPECT_EQ(p.rhs, "V30");
        EXPECT_DOUBLE_EQ(p.value, 1.0);
      }
    }
  EXPECT_EQ(loadings, 4);
  EXPECT_EQ(fixed, 1);
}

TEST(ModelParse, FourFactorCfaBookkeeping) {
  const auto m = parse_model(lvm::testing::issp_cfa_text());
  EXPECT_EQ(m.n_observed(), 13);
  EXPECT_EQ(m.n_moments(), 91);
  EXPECT_EQ(m.n_free(), 32);
  EXPECT_EQ(m.df(), 59);
}

TEST(ModelParse, BestTierStructuralBookkeeping) {
  const auto m = parse_model(lvm::testing::issp_best_tier_text());
  EXPECT_EQ(m.n_free(), 31);
  EXPECT_EQ(m.df(), 60);
}

TEST(ModelParse, FreeFixedCountMatchesTable) {
  const auto m = parse_model(lvm::testing::issp_best_tier_text());
  int fixed = 0;
  for (const auto& p : m.parameters)
    if (!p.free) ++fixed;
  EXPECT_EQ(m.n_free() + fixed, static_cast<int>(m.parameters.size()));
}

TEST(ModelParse, CycleRejected) {
  const char* text = "A =~ a1 + a2 + a3\nB =~ b1 + b2 + b3\nA ~ B\nB ~ A\n";
  try {
    parse_model(text);
    FAIL() << "cycle accepted";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4);
  }
}

TEST(ModelParse, DuplicateIndicatorClaimRejected) {
  EXPECT_THROW(parse_model("A =~ x1 + x2 + x3\nB =~ x3 + x4 + x5\n"), ParseError);
}

TEST(ModelParse, UnknownIndicatorRejected) {
  ModelOptions o;
  o.known_variables = std::vector<std::string>{"x1", "x2"};
  EXPECT_THROW(parse_model("A =~ x1 + x2 + x9\n", o), ParseError);
}

TEST(ModelParse, ErrorCarriesColumn) {
  try {
    parse_model("A =~ x1 + + x2\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1);
    EXPECT_GT(e.column(), 1);
  }
}

TEST(ModelParse, CommentsAndWhitespaceIgnored) {
  const auto a = parse_model("F =~ x1+x2+x3");
  const auto b = parse_model("  # header\n F   =~ x1 +\tx2 + x3   # trailing\n\n");
  EXPECT_EQ(a.n_free(), b.n_free());
  EXPECT_EQ(a.observed, b.observed);
}

TEST(ModelParse, SyntaxRoundTrip) {
  const auto m = parse_model(lvm::testing::issp_best_tier_text());
  const auto again = parse_model(to_syntax(m));
  EXPECT_EQ(again.n_free(), m.n_free());
  EXPECT_EQ(again.observed, m.observed);
  EXPECT_EQ(again.regressions.size(), m.regressions.size());
}

TEST(Implied, OneFactorHandExpansion) {
  const auto m = parse_model("F =~ 1*a + 1*b\nF ~~ 1*F\na ~~ 1*a\nb ~~ 1*b\n");
  EXPECT_EQ(m.n_free(), 0);
  const Matrix S = implied_covariance(m, Vector(0));
  Matrix expected(2, 2);
  expected << 2, 1, 1, 2;
  EXPECT_LT((S - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Implied, MatchesClosedFormWithRegression) {
  const auto m = parse_model("A =~ a1 + a2\nB =~ b1 + b2\nB ~ A\n");
  Rng rng(5);
  const Vector th = random_theta(m, rng);
  const auto mm = build_matrices(m, th);
  const Matrix Ainv = (Matrix::Identity(2, 2) - mm.B).inverse();
  const Matrix expected = mm.Lambda * Ainv * mm.Psi * Ainv.transpose() * mm.Lambda.transpose() + mm.Theta;
  EXPECT_LT((implied_covariance(m, th) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Gradient, MlMatchesCentralDifferences) {
  const auto m = parse_model(lvm::testing::issp_best_tier_text());
  const auto X = factor_data(lvm::testing::issp_pattern(), lvm::testing::issp_phi(), 2000, 11,
                             lvm::testing::issp_items());
  const auto mo = compute_moments(X, m.observed);
  Eigen::LLT<Matrix> llt(mo.S);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  MlObjective f{m, mo.S, logdet};
  Rng rng(99);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Vector th = random_theta(m, rng);
    Vector g;
    f(th, g);
    for (Eigen::Index k = 0; k < th.size(); ++k) {
      const double h = 1e-5 * std::max(1.0, std::abs(th(k)));
      Vector tp = th, tm = th, dummy;
      tp(k) += h;
      tm(k) -= h;
      const double fd = (f(tp, dummy) - f(tm, dummy)) / (2 * h);
      worst = std::max(worst, std::abs(fd - g(k)) / std::max(1.0, std::abs(g(k))));
    }
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Gradient, DwlsMatchesCentralDifferences) {
  const auto m = parse_model(kTwoFactor);
  const auto X = factor_data(two_factor_lambda(), two_factor_phi(), 1000, 3);
  const auto mo = compute_moments(X, m.observed);
  const Vector w = mo.dwls_gamma.cwiseInverse();
  DwlsObjective f{m, mo.S, w};
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const Vector th = random_theta(m, rng);
    Vector g;
    f(th, g);
    for (Eigen::Index k = 0; k < th.size(); ++k) {
      const double h = 1e-6;
      Vector tp = th, tm = th, dummy;
      tp(k) += h;
      tm(k) -= h;
      const double fd = (f(tp, dummy) - f(tm, dummy)) / (2 * h);
      EXPECT_NEAR(fd, g(k), 1e-6 * std::max(1.0, std::abs(g(k))));
    }
  }
}

TEST(FitMl, SaturatedModelHasZeroChiSquare) {
  const auto X = factor_data(two_factor_lambda().topRows(3).leftCols(1), Matrix::Identity(1, 1), 500, 2);
  const auto fit = fit_ml(parse_model("F =~ x1 + x2 + x3\n"), X);
  ASSERT_TRUE(fit.converged);
  EXPECT_EQ(fit.df, 0);
  EXPECT_NEAR(fit.chi2, 0.0, 1e-6);
  EXPECT_NEAR(fit.indices.cfi, 1.0, 1e-9);
  EXPECT_FALSE(fit.indices.rmsea_defined);
  ASSERT_TRUE(fit.residuals.has_value());
  EXPECT_LT(fit.residuals->raw.cwiseAbs().maxCoeff(), 1e-5);
}

TEST(FitMl, DfBookkeepingAndInvariants) {
  const auto X = factor_data(two_factor_lambda(), two_factor_phi(), 800, 4);
  const auto fit = fit_ml(parse_model(kTwoFactor), X);
  ASSERT_TRUE(fit.converged);
  EXPECT_EQ(fit.n_free + fit.df, 21);
  EXPECT_TRUE(fit.sigma_pd);
  EXPECT_LT((fit.sigma - fit.sigma.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GE(fit.indices.cfi, 0.0);
  EXPECT_LE(fit.indices.cfi, 1.0);
  EXPECT_GE(fit.indices.rmsea, 0.0);
  EXPECT_LE(fit.indices.rmsea_lower, fit.indices.rmsea);
  EXPECT_GE(fit.indices.rmsea_upper, fit.indices.rmsea);
  EXPECT_GE(fit.srmr, 0.0);
  EXPECT_LT(fit.grad_norm, 1e-6);
}

TEST(FitMl, ChiSquareMultiplierFlag) {
  const auto X = factor_data(two_factor_lambda(), two_factor_phi(), 800, 4);
  const auto m = parse_model(kTwoFactor);
  FitOptions o;
  const auto a = fit_ml(m, X, o);
  o.n_minus_one = true;
  const auto b = fit_ml(m, X, o);
  EXPECT_NEAR(a.chi2 / 800.0, b.chi2 / 799.0, 1e-8);
}

TEST(FitMl, NestedModelsOrderChiSquare) {
  const auto m_free = parse_model(kTwoFactor);
  const auto m_restricted = parse_model("F1 =~ x1 + x2 + x3\nF2 =~ x4 + x5 + x6\nF1 ~~ 0*F2\n");
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto X = factor_data(two_factor_lambda(), two_factor_phi(0.3), 400, seed);
    const auto a = fit_ml(m_free, X);
    const auto b = fit_ml(m_restricted, X);
    ASSERT_TRUE(a.converged && b.converged);
    EXPECT_GE(b.chi2, a.chi2 - 1e-4);
  }
}

TEST(FitMl, ScaleEquivariance) {
  auto X = factor_data(two_factor_lambda(), two_factor_phi(), 600, 8);
  const auto m = parse_model(kTwoFactor);
  auto a = fit_ml(m, X);
  X.cells *= 3.5;
  auto b = fit_ml(m, X);
  EXPECT_NEAR(a.chi2, b.chi2, 1e-6);
  EXPECT_NEAR(a.indices.cfi, b.indices.cfi, 1e-8);
  EXPECT_NEAR(a.indices.rmsea, b.indices.rmsea, 1e-8);
  EXPECT_NEAR(a.srmr, b.srmr, 1e-8);
  const auto sa = standardized_solution(a), sb = standardized_solution(b);
  EXPECT_LT((sa.loadings - sb.loadings).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(FitMl, Reproducible) {
  const auto X = factor_data(two_factor_lambda(), two_factor_phi(), 600, 8);
  const auto m = parse_model(kTwoFactor);
  const auto a = fit_ml(m, X), b = fit_ml(m, X);
  EXPECT_EQ(a.theta, b.theta);
  EXPECT_EQ(a.chi2, b.chi2);
}

TEST(FitMl, StandardizedLoadingsRecoverGenerator) {
  const Matrix L = two_factor_lambda();
  const auto X = factor_data(L, two_factor_phi(), 20000, 21);
  auto fit = fit_ml(parse_model(kTwoFactor), X);
  ASSERT_TRUE(fit.converged);
  const auto st = standardized_solution(fit);
  EXPECT_LT((st.loadings - L).cwiseAbs().maxCoeff(), 0.02);
  EXPECT_NEAR(st.factor_correlations(0, 1), 0.4, 0.03);
  EXPECT_TRUE(st.all_positive);
}

TEST(FitMl, StandardErrorsCoverTruth) {
  // Unit-variance identification makes the loadings directly comparable.
  ModelOptions mo;
  mo.unit_variance = true;
  const auto m = parse_model(kTwoFactor, mo);
  int covered = 0, total = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto X = factor_data(two_factor_lambda(), two_factor_phi(), 2000, 100 + seed);
    const auto fit = fit_ml(m, X);
    for (const auto& pe : fit.estimates)
      if (pe.param.kind == ParamKind::loading) {
        const double truth = two_factor_lambda()(pe.param.row, pe.param.col);
        ++total;
        if (std::abs(pe.estimate - truth) < 3 * pe.se) ++covered;
      }
  }
  EXPECT_GE(covered, total * 97 / 100);
}

TEST(FitMl, UnitVarianceStandardizedEqualsRaw) {
  ModelOptions o;
  o.unit_variance = true;
  const auto m = parse_model(kTwoFactor, o);
  const auto X = factor_data(two_factor_lambda(), two_factor_phi(), 2000, 9);
  auto mo = compute_moments(X, m.observed);
  const auto R = moments_from_covariance(cov_to_cor(mo.S), mo.n_used, m.observed);
  auto fit = fit_moments(m, R);
  const auto st = standardized_solution(fit);
  for (const auto& pe : fit.estimates)
    if (pe.param.kind == ParamKind::loading) EXPECT_NEAR(pe.std_all, pe.estimate, 1e-6);
  EXPECT_NEAR(st.factor_correlations(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(st.factor_correlations(0, 1), st.factor_correlations(1, 0), 1e-12);
}

TEST(FitMl, MisspecifiedModelFlagsResiduals) {
  const auto X = factor_data(two_factor_lambda(), two_factor_phi(0.2), 3000, 12);
  const auto fit = fit_ml(parse_model("F =~ x1 + x2 + x3 + x4 + x5 + x6\n"), X);
  ASSERT_TRUE(fit.residuals.has_value());
  EXPECT_GT(fit.residuals->max_abs, 2.5);
  EXPECT_FALSE(fit.residuals->pass);
}

TEST(FitMl, CorrectModelPassesResiduals) {
  const auto X = factor_data(two_factor_lambda(), two_factor_phi(0.2), 3000, 12);
  const auto fit = fit_ml(parse_model(kTwoFactor), X);
  ASSERT_TRUE(fit.residuals.has_value());
  EXPECT_LT(fit.residuals->max_abs, 4.0);
}

TEST(FitMl, ListwiseDeletionCountsRows) {
  auto X = factor_data(two_factor_lambda(), two_factor_phi(), 500, 13);
  X.cells(3, 1) = kNaN;
  X.cells(10, 5) = kNaN;
  X.cells(10, 2) = kNaN;
  const auto fit = fit_ml(parse_model(kTwoFactor), X);
  EXPECT_EQ(fit.n_total, 500);
  EXPECT_EQ(fit.n_used, 498);
}

TEST(FitMl, HeywoodFlagged) {
  // Two indicators with near-perfect correlation drive a residual variance
  // to the boundary.
  Matrix L(4, 1);
  L << 0.999, 0.999, 0.3, 0.3;
  const auto X = factor_data(L, Matrix::Identity(1, 1), 200, 15);
  const auto fit = fit_ml(parse_model("F =~ x1 + x2 + x3 + x4\n"), X);
  if (fit.heywood) {
    EXPECT_FALSE(fit.usable());
  } else {
    EXPECT_GE(fit.matrices.Theta.diagonal().minCoeff(), 0.0);
  }
}

TEST(FitDwls, AgreesWithMlOnNormalData) {
  const auto X = factor_data(two_factor_lambda(), two_factor_phi(), 20000, 31);
  const auto m = parse_model(kTwoFactor);
  const auto a = fit_ml(m, X);
  const auto b = fit_dwls(m, X);
  ASSERT_TRUE(a.converged && b.converged);
  for (std::size_t k = 0; k < a.estimates.size(); ++k)
    if (a.estimates[k].param.kind == ParamKind::loading)
      EXPECT_NEAR(a.estimates[k].estimate, b.estimates[k].estimate, 0.01);
  EXPECT_FALSE(b.aic.has_value());
  EXPECT_FALSE(b.bic.has_value());
  EXPECT_TRUE(a.aic.has_value());
}

TEST(FitDwls, ZeroWeightNamesMoment) {
  auto X = factor_data(two_factor_lambda(), two_factor_phi(), 400, 32);
  for (Eigen::Index r = 0; r < X.n_rows(); ++r) X.cells(r, 0) = (r % 2 == 0) ? 1.0 : -1.0;
  try {
    fit_dwls(parse_model(kTwoFactor), X);
    FAIL() << "zero weight accepted";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("x1"), std::string::npos);
  }
}

TEST(FitIndices, ExactFitBoundary) {
  const auto f = fit_indices(40.0, 40.0, 900.0, 45.0, 1000.0);
  EXPECT_DOUBLE_EQ(f.rmsea, 0.0);
  EXPECT_DOUBLE_EQ(f.cfi, 1.0);
  EXPECT_DOUBLE_EQ(f.rmsea_lower, 0.0);
}

TEST(FitIndices, ZeroDfUndefined) {
  const auto f = fit_indices(0.0, 0.0, 900.0, 45.0, 1000.0);
  EXPECT_FALSE(f.rmsea_defined);
  EXPECT_FALSE(f.tli_defined);
}

TEST(FitIndices, HandComputed) {
  const auto f = fit_indices(150.0, 50.0, 2050.0, 66.0, 500.0);
  EXPECT_NEAR(f.cfi, 1.0 - 100.0 / 1984.0, 1e-14);
  EXPECT_NEAR(f.tli, (2050.0 / 66.0 - 3.0) / (2050.0 / 66.0 - 1.0), 1e-14);
  EXPECT_NEAR(f.nfi, 1900.0 / 2050.0, 1e-14);
  EXPECT_NEAR(f.rmsea, std::sqrt(100.0 / (50.0 * 500.0)), 1e-14);
}

TEST(Srmr, ZeroAtExactFit) {
  Matrix S(2, 2);
  S << 1, 0.3, 0.3, 1;
  EXPECT_DOUBLE_EQ(srmr(S, S), 0.0);
}

TEST(Srmr, SingleResidualOverThreeMoments) {
  Matrix S(2, 2), Sig(2, 2);
  S << 1, 0.5, 0.5, 1;
  Sig << 1, 0.4, 0.4, 1;
  EXPECT_NEAR(srmr(S, Sig), 0.1 / std::sqrt(3.0), 1e-12);
}

TEST(Srmr, ZeroDiagonalRejected) {
  Matrix S = Matrix::Zero(2, 2);
  EXPECT_THROW(srmr(S, S), NumericError);
}
