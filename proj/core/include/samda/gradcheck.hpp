#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "samda/params.hpp"

namespace samda {

struct GradCheckOptions {
  double eps = 1e-6;
  // Coordinates sampled per trainable parameter; smaller tensors are checked in full.
  int coords_per_param = 6;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::int64_t coords_checked = 0;
};

// Compares reverse-mode gradients of `loss` against central differences on
// sampled coordinates of every trainable parameter. The relative error of one
// coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8), or 0
// when both lie below the rounding resolution of the difference quotient.
//
// `loss` must be deterministic; two baseline evaluations that differ raise
// ContractError. eps must lie in [1e-7, 1e-3].
GradCheckResult finite_diff_check(const std::function<Tensor<double>()>& loss, ParamStore<double>& params,
                                  const GradCheckOptions& options = {});

}  // namespace samda
