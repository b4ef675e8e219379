#include <gtest/gtest.h>

#include <cstdlib>
#include <set>

#include "lvm/common.hpp"
#include "lvm/optimize.hpp"

using namespace lvm;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    ASSERT_EQ(a.uniform(), b.uniform());
    ASSERT_EQ(a.normal(), b.normal());
    ASSERT_EQ(a.index(17), b.index(17));
  }
}

TEST(Rng, UniformOpenInterval) {
  Rng r(1);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.005);
}

TEST(Rng, NormalMoments) {
  Rng r(7);
  const int n = 200000;
  double s1 = 0.0, s2 = 0.0, s4 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s1 += z;
    s2 += z * z;
    s4 += z * z * z * z;
  }
  EXPECT_NEAR(s1 / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.015);
  EXPECT_NEAR(s4 / n, 3.0, 0.08);
}

TEST(Rng, IndexCoversRangeEvenly) {
  Rng r(3);
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 100000; ++i) ++counts[r.index(10)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 450);
  EXPECT_EQ(r.index(1), 0u);
}

TEST(DeriveSeed, StreamsDistinctAndStable) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 1000; ++s) seen.insert(derive_seed(5, s));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(derive_seed(5, 3), derive_seed(5, 3));
  EXPECT_NE(derive_seed(5, 3), derive_seed(6, 3));
}

TEST(ParallelFor, ResultsIndependentOfWidth) {
  auto run = [](int jobs) {
    std::vector<double> out(500);
    parallel_for(out.size(), jobs, [&](std::size_t i) {
      Rng r(derive_seed(9, i));
      out[i] = r.normal();
    });
    return out;
  };
  EXPECT_EQ(run(1), run(4));
  EXPECT_EQ(run(1), run(16));
}

TEST(ParallelFor, ExceptionPropagates) {
  EXPECT_THROW(parallel_for(100, 4,
                            [](std::size_t i) {
                              if (i == 37) throw NumericError("boom");
                            }),
               NumericError);
}

TEST(ResolveJobs, ExplicitThenEnvironment) {
  EXPECT_EQ(resolve_jobs(3), 3);
  ::setenv("LVM_JOBS", "5", 1);
  EXPECT_EQ(resolve_jobs(0), 5);
  ::setenv("LVM_JOBS", "junk", 1);
  EXPECT_GE(resolve_jobs(0), 1);
  ::unsetenv("LVM_JOBS");
  EXPECT_GE(resolve_jobs(0), 1);
}

TEST(Vech, LowerTriangleColumnMajor) {
  Matrix m(3, 3);
  m << 1, 2, 3,  //
      2, 4, 5,   //
      3, 5, 6;
  const Vector v = vech(m);
  ASSERT_EQ(v.size(), 6);
  EXPECT_EQ(v(0), 1);
  EXPECT_EQ(v(1), 2);
  EXPECT_EQ(v(2), 3);
  EXPECT_EQ(v(3), 4);
  EXPECT_EQ(v(4), 5);
  EXPECT_EQ(v(5), 6);
  const auto idx = vech_indices(3);
  ASSERT_EQ(idx.size(), 6u);
  for (std::size_t k = 0; k < idx.size(); ++k) EXPECT_EQ(m(idx[k].i, idx[k].j), v(static_cast<Eigen::Index>(k)));
}

TEST(CovToCor, UnitDiagonal) {
  Matrix c(2, 2);
  c << 4, 2, 2, 9;
  const Matrix r = cov_to_cor(c);
  EXPECT_DOUBLE_EQ(r(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(r(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(r(0, 1), 2.0 / 6.0);
}

TEST(Quantile, LinearInterpolation) {
  const std::vector<double> v{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile_sorted(v, 1.0), 4.0);
  EXPECT_TRUE(std::isnan(quantile_sorted({}, 0.5)));
}

TEST(Bfgs, RosenbrockMinimum) {
  auto f = [](const Vector& x, Vector& g) {
    const double a = 1.0 - x(0), b = x(1) - x(0) * x(0);
    g.resize(2);
    g(0) = -2.0 * a - 400.0 * x(0) * b;
    g(1) = 200.0 * b;
    return a * a + 100.0 * b * b;
  };
  Vector x0(2);
  x0 << -1.2, 1.0;
  const auto r = minimize_bfgs(f, x0);
  EXPECT_TRUE(r.converged) << r.message;
  EXPECT_NEAR(r.x(0), 1.0, 1e-5);
  EXPECT_NEAR(r.x(1), 1.0, 1e-5);
}

TEST(Bfgs, RespectsBounds) {
  auto f = [](const Vector& x, Vector& g) {
    g = 2.0 * (x.array() + 1.0).matrix();
    return (x.array() + 1.0).square().sum();
  };
  OptimizeOptions o;
  o.lower = Vector::Zero(2);
  const auto r = minimize_bfgs(f, Vector::Constant(2, 3.0), o);
  EXPECT_TRUE(r.converged);
  EXPECT_DOUBLE_EQ(r.x(0), 0.0);
  EXPECT_DOUBLE_EQ(r.x(1), 0.0);
}
