#include <gtest/gtest.h>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>

#include "samda/errors.hpp"
#include "samda/rng.hpp"
#include "samda/stats.hpp"

namespace samda {
namespace {

struct Oracle {
  double t, p;
};

// Textbook paired t-test with boost's Student-t CDF for the tail.
Oracle oracle(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = double(a.size());
  double md = 0;
  for (std::size_t i = 0; i < a.size(); ++i) md += (a[i] - b[i]) / n;
  double ss = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i] - md) * (a[i] - b[i] - md);
  const double sd = std::sqrt(ss / (n - 1));
  const double t = md / (sd / std::sqrt(n));
  boost::math::students_t dist(n - 1);
  return {t, 2 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)))};
}

TEST(TTest, TextbookExample) {
  const std::vector<double> a = {2.1, 2.5, 2.3, 2.9}, b = {2.0, 2.1, 2.2, 2.4};
  const auto r = stats::paired_t_test(a, b);
  const auto o = oracle(a, b);
  EXPECT_NEAR(r.t, o.t, 1e-6);
  EXPECT_NEAR(r.p, o.p, 1e-6);
  EXPECT_EQ(r.dof, 3);
  EXPECT_FALSE(r.degenerate);
}

TEST(TTest, RandomSetsMatchOracle) {
  CounterRng rng(2024);
  for (int k = 0; k < 20; ++k) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 60));
    const double shift = rng.uniform(-0.1, 0.1);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.uniform(0.3, 0.95);
      b[i] = a[i] + shift + 0.05 * rng.normal();
    }
    const auto r = stats::paired_t_test(a, b);
    const auto o = oracle(a, b);
    EXPECT_NEAR(r.t, o.t, 1e-6 * std::max(1.0, std::fabs(o.t))) << k;
    EXPECT_NEAR(r.p, o.p, 1e-6) << k;
    EXPECT_EQ(r.dof, int(n) - 1);
  }
}

TEST(TTest, DegenerateBranches) {
  const std::vector<double> a = {1, 2, 3, 4}, b = {0, 1, 2, 3};
  auto r = stats::paired_t_test(a, b);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.p, 0.0);
  EXPECT_TRUE(std::isinf(r.t) && r.t > 0);
  r = stats::paired_t_test(b, a);
  EXPECT_TRUE(std::isinf(r.t) && r.t < 0);

  r = stats::paired_t_test(a, a);
  EXPECT_EQ(r.t, 0.0);
  EXPECT_EQ(r.p, 1.0);
  EXPECT_FALSE(r.degenerate);

  // 0.1 offsets are not exact in binary; the spread is pure rounding.
  r = stats::paired_t_test(std::vector<double>{0.7, 0.8, 0.9, 0.6}, std::vector<double>{0.6, 0.7, 0.8, 0.5});
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.p, 0.0);

  EXPECT_THROW(stats::paired_t_test(std::vector<double>{1.0}, std::vector<double>{2.0}), ValidationError);
  EXPECT_THROW(stats::paired_t_test(a, std::vector<double>{1, 2, 3}), ValidationError);
}

TEST(TTest, Antisymmetry) {
  const std::vector<double> a = {0.7, 0.8, 0.65, 0.9, 0.71}, b = {0.6, 0.82, 0.6, 0.85, 0.7};
  const auto ab = stats::paired_t_test(a, b);
  const auto ba = stats::paired_t_test(b, a);
  EXPECT_DOUBLE_EQ(ab.t, -ba.t);
  EXPECT_DOUBLE_EQ(ab.p, ba.p);
}

TEST(IncompleteBeta, MatchesBoost) {
  for (double a : {0.5, 1.0, 2.5, 10.0})
    for (double b : {0.5, 3.0, 7.0})
      for (double x : {0.0, 0.01, 0.3, 0.5, 0.77, 0.999, 1.0})
        EXPECT_NEAR(stats::incomplete_beta(a, b, x), boost::math::ibeta(a, b, x), 1e-10) << a << " " << b << " " << x;
}

TEST(Descriptive, MeanAndSampleStd) {
  const std::vector<double> v = {1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(stats::mean(v), 2.5);
  EXPECT_NEAR(stats::stddev(v), std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(stats::stddev(std::vector<double>{3.0}), 0.0);
}

}  // namespace
}  // namespace samda
