#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "wcrit/dist1d.hpp"
#include "wcrit/random.hpp"

using namespace wcrit;

TEST(Quantile, LeftContinuousConvention) {
  const EmpiricalDistribution d({3.0, 1.0, 2.0});
  EXPECT_EQ(quantile_function(d, 0.5), 2.0);
  EXPECT_EQ(quantile_function(d, 1.0), 3.0);
  EXPECT_EQ(quantile_function(d, 0.0), 1.0);
  EXPECT_EQ(quantile_function(d, 1.0 / 3.0), 1.0);
  EXPECT_THROW(quantile_function(d, 1.5), UsageError);
}

TEST(Quantile, CategoricalSkipsZeroMass) {
  const CategoricalDistribution c({-1.0, 0.0, 1.0}, {0.5, 0.0, 0.5});
  EXPECT_EQ(quantile_function(c, 0.0), -1.0);
  EXPECT_EQ(quantile_function(c, 0.5), -1.0);
  EXPECT_EQ(quantile_function(c, 0.51), 1.0);
}

TEST(Quantile, GridLevels) {
  const auto g = quantile_grid(4);
  ASSERT_EQ(g.size(), 4u);
  EXPECT_DOUBLE_EQ(g[0], 0.125);
  EXPECT_DOUBLE_EQ(g[3], 0.875);
}

TEST(WassersteinEmp, SortedPairing) {
  const EmpiricalDistribution a({1.0, 3.0}), b({2.0, 4.0});
  // crossed bijection costs ((1-4)^2 + (3-2)^2)/2 = 5, sorted costs 1
  EXPECT_DOUBLE_EQ(std::pow(wasserstein_emp(a, b, 2.0), 2.0), 1.0);
  EXPECT_DOUBLE_EQ(brute_force_wasserstein(a, b, 2.0), 1.0);
}

TEST(WassersteinEmp, TrivialCases) {
  const EmpiricalDistribution x({0.3, -1.0, 2.5});
  for (double p : {1.0, 2.0, 3.0}) EXPECT_EQ(wasserstein_emp(x, x, p), 0.0);
  EXPECT_DOUBLE_EQ(wasserstein_emp(EmpiricalDistribution({0.0}), EmpiricalDistribution({-4.0}), 1.0), 4.0);
}

TEST(WassersteinEmp, UnequalCountsNeedResampling) {
  const EmpiricalDistribution a({0.0, 1.0}), b({0.0, 1.0, 2.0});
  EXPECT_THROW(wasserstein_emp(a, b, 2.0), UsageError);
  EXPECT_NO_THROW(wasserstein_emp(a, b, 2.0, Resample::common_grid));
}

TEST(WassersteinEmp, RejectsOrderBelowOne) {
  const EmpiricalDistribution a({0.0}), b({1.0});
  EXPECT_THROW(wasserstein_emp(a, b, 0.5), UsageError);
}

TEST(WassersteinCat, DiracVersusTwoAtoms) {
  const auto d0 = CategoricalDistribution::dirac(0.0);
  const CategoricalDistribution b({0.0, 1.0}, {0.5, 0.5});
  EXPECT_NEAR(wasserstein_cat(d0, b, 1.0), 0.5, 1e-15);
  EXPECT_EQ(wasserstein_cat(b, b, 2.0), 0.0);
}

TEST(WassersteinCat, AgreesWithAtomizedEmpirical) {
  Rng rng(41);
  for (int c = 0; c < 50; ++c) {
    const std::size_t n = 2 + rng.index(6);
    std::vector<double> xa, xb, pa, pb;
    double va = -2.0, vb = -2.0;
    for (std::size_t i = 0; i < n; ++i) {
      xa.push_back(va += rng.uniform(0.1, 1.0));
      xb.push_back(vb += rng.uniform(0.1, 1.0));
      pa.push_back(1.0 + static_cast<double>(rng.index(3)));
      pb.push_back(1.0 + static_cast<double>(rng.index(3)));
    }
    // integer weights: with the atom count a multiple of both totals, the
    // midpoint levels resolve every CDF step exactly
    auto norm = [](std::vector<double>& p) {
      double t = 0.0;
      for (double v : p) t += v;
      for (double& v : p) v /= t;
      return static_cast<std::size_t>(t);
    };
    const std::size_t ta = norm(pa), tb = norm(pb);
    const CategoricalDistribution a(xa, pa), b(xb, pb);
    const std::size_t atoms = 10 * std::lcm(ta, tb);
    const double w = wasserstein_cat(a, b, 2.0);
    const double e = wasserstein_emp(atomize(a, atoms), atomize(b, atoms), 2.0);
    EXPECT_NEAR(w, e, 1e-9) << "case " << c;
  }
}

TEST(Coupling, SortsBothSides) {
  const std::vector<double> src{0.7, 0.2}, tgt{5.0, 1.0};
  const auto c = monotone_coupling(src, tgt);
  ASSERT_EQ(c.pairs.size(), 2u);
  EXPECT_EQ(c.pairs[0], std::make_pair(0.2, 1.0));
  EXPECT_EQ(c.pairs[1], std::make_pair(0.7, 5.0));
  EXPECT_TRUE(c.is_monotone());
  const std::vector<double> one{1.0};
  EXPECT_THROW(monotone_coupling(src, one), UsageError);
}

TEST(Coupling, SortedInputsPairByIndex) {
  const std::vector<double> src{1.0, 2.0, 3.0}, tgt{-1.0, 0.0, 4.0};
  const auto c = monotone_coupling(src, tgt);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(c.pairs[i], std::make_pair(src[i], tgt[i]));
}

TEST(BruteForce, RefusesLargeInputs) {
  const EmpiricalDistribution a(std::vector<double>(9, 0.0));
  EXPECT_THROW(brute_force_wasserstein(a, a, 2.0), UsageError);
  EXPECT_DOUBLE_EQ(brute_force_wasserstein(EmpiricalDistribution({2.0}), EmpiricalDistribution({-0.5}), 1.0), 2.5);
}

TEST(BruteForce, MatchesSortedOnRandomInstances) {
  Rng rng(7);
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = 1 + rng.index(6);
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = rng.normal();
    for (auto& v : y) v = rng.uniform(-2.0, 2.0);
    const EmpiricalDistribution a(x), b(y);
    EXPECT_NEAR(wasserstein_emp(a, b, 2.0), brute_force_wasserstein(a, b, 2.0), 1e-12);
  }
}

TEST(Iqm, Examples) {
  const std::vector<double> a{1, 2, 3, 4}, c(8, 3.25), o{0, 0, 0, 100}, short_{1, 2, 3};
  EXPECT_DOUBLE_EQ(iqm(a), 2.5);
  EXPECT_DOUBLE_EQ(iqm(c), 3.25);
  EXPECT_DOUBLE_EQ(iqm(o), 0.0);
  EXPECT_THROW(iqm(short_), UsageError);
  EXPECT_DOUBLE_EQ(iqm_or_mean(short_), 2.0);
}

TEST(Distributions, ConstructionErrors) {
  EXPECT_THROW(EmpiricalDistribution(std::vector<double>{}), UsageError);
  EXPECT_THROW(CategoricalDistribution({0.0, 0.0}, {0.5, 0.5}), UsageError);
  EXPECT_THROW(CategoricalDistribution({0.0, 1.0}, {0.5, 0.6}), UsageError);
  EXPECT_THROW(CategoricalDistribution({0.0}, {}), UsageError);
}
