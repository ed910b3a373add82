#include "samda/stats.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "samda/errors.hpp"

namespace samda::stats {

namespace {

// Continued fraction for I_x(a, b); converges quickly for x < (a + 1) / (a + b + 2).
double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0 && b > 0)) throw ValidationError("incomplete_beta: a and b must be positive");
  if (!(x >= 0 && x <= 1)) throw ValidationError("incomplete_beta: x must lie in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_two_sided(double t, double dof) {
  if (!(dof > 0)) throw ValidationError("student_t_two_sided: dof must be positive");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ValidationError("paired_t_test: lengths differ (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  }
  if (a.size() < 2) throw ValidationError("paired_t_test: need at least two pairs");
  const auto n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  TTestResult r;
  r.dof = static_cast<int>(n - 1);
  r.mean_diff = mean(d);
  r.sd_diff = stddev(d);
  // Differences that are constant up to rounding count as zero variance.
  if (r.sd_diff <= 1e-12 * std::fabs(r.mean_diff) || r.sd_diff == 0.0) {
    if (r.mean_diff == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = std::copysign(std::numeric_limits<double>::infinity(), r.mean_diff);
      r.p = 0.0;
      r.degenerate = true;
    }
    return r;
  }
  r.t = r.mean_diff / (r.sd_diff / std::sqrt(static_cast<double>(n)));
  r.p = student_t_two_sided(r.t, r.dof);
  return r;
}

}  // namespace samda::stats
