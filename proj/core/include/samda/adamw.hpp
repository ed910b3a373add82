#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "samda/params.hpp"

namespace samda {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Adam with decoupled weight decay:
//   w <- w - lr * wd * w
//   w <- w - lr * m_hat / (sqrt(v_hat) + eps)
// Moments are kept per parameter name and created on first use.
template <typename S>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  // Updates every trainable parameter, then zeroes its gradient. Throws
  // ContractError if a trainable parameter has no gradient buffer.
  void step(ParamStore<S>& params);

  std::int64_t steps() const noexcept { return step_; }
  const AdamWConfig& config() const noexcept { return config_; }
  void set_lr(double lr) noexcept { config_.lr = lr; }

  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  const std::map<std::string, Moments>& moments() const noexcept { return moments_; }

 private:
  AdamWConfig config_;
  std::int64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace samda
