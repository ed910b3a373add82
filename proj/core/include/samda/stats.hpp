#pragma once

#include <span>

namespace samda::stats {

struct TTestResult {
  double t = 0.0;
  double p = 1.0;  // two-sided
  int dof = 0;
  double mean_diff = 0.0;
  double sd_diff = 0.0;
  // Differences have zero spread but nonzero mean: t is +-inf and p is 0.
  bool degenerate = false;
};

// Regularized incomplete beta I_x(a, b), via the Lentz continued fraction.
double incomplete_beta(double a, double b, double x);

// Two-sided tail probability P(|T| >= |t|) for Student t with `dof` degrees.
double student_t_two_sided(double t, double dof);

// Paired t-test on per-image scores a[i] vs b[i]. Needs equal lengths >= 2.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

double mean(std::span<const double> v);
// Sample standard deviation (n - 1); 0 for fewer than two values.
double stddev(std::span<const double> v);

}  // namespace samda::stats
