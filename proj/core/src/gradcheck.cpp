#include "samda/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "samda/errors.hpp"
#include "samda/rng.hpp"

namespace samda {

GradCheckResult finite_diff_check(const std::function<Tensor<double>()>& loss, ParamStore<double>& params,
                                  const GradCheckOptions& options) {
  if (!(options.eps >= 1e-7 && options.eps <= 1e-3)) {
    throw ContractError("finite_diff_check: eps must lie in [1e-7, 1e-3]");
  }
  const auto eval = [&] {
    NoGradGuard guard;
    return loss().item();
  };
  const double base_a = eval();
  const double base_b = eval();
  if (base_a != base_b) throw ContractError("finite_diff_check: loss function is not deterministic");

  params.zero_grad();
  loss().backward();
  std::map<std::string, std::vector<double>> analytic;
  for (const auto& [name, p] : params) {
    if (p.trainable) analytic.emplace(name, std::vector<double>(p.tensor.grad().begin(), p.tensor.grad().end()));
  }
  params.zero_grad();

  GradCheckResult result;
  CounterRng rng(options.seed);
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    const auto n = p.tensor.numel();
    std::vector<std::int64_t> coords;
    if (n <= options.coords_per_param) {
      for (std::int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int i = 0; i < options.coords_per_param; ++i) coords.push_back(rng.uniform_int(0, n - 1));
    }
    auto values = p.tensor.mutable_data();
    for (auto i : coords) {
      auto& w = values[static_cast<std::size_t>(i)];
      const double saved = w;
      w = saved + options.eps;
      const double up = eval();
      w = saved - options.eps;
      const double down = eval();
      w = saved;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = analytic.at(name)[static_cast<std::size_t>(i)];
      // Below a few ulps of the loss over 2*eps the difference quotient is
      // rounding noise; both sides that small count as zero.
      const double resolution = 8.0 * std::numeric_limits<double>::epsilon() *
                                std::max({std::abs(up), std::abs(down), 1.0}) / (2.0 * options.eps);
      const bool both_zero = std::abs(a) <= resolution && std::abs(numeric) <= resolution;
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = both_zero ? 0.0 : std::abs(a - numeric) / denom;
      ++result.coords_checked;
      if (err > result.max_rel_error || result.worst_index < 0) {
        result.max_rel_error = err;
        result.worst_param = name;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace samda
