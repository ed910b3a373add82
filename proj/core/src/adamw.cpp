#include "samda/adamw.hpp"

#include <cmath>

#include "samda/errors.hpp"

namespace samda {

template <typename S>
void AdamW<S>::step(ParamStore<S>& params) {
  for (const auto& [name, p] : params) {
    if (p.trainable && !p.tensor.has_grad()) {
      throw ContractError("adamw: trainable parameter '" + name + "' has no gradient");
    }
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  const double decay = 1.0 - config_.lr * config_.weight_decay;

  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    auto w = p.tensor.mutable_data();
    auto g = p.tensor.mutable_grad();
    auto& mom = moments_[name];
    if (mom.m.size() != w.size()) {
      mom.m.assign(w.size(), 0.0);
      mom.v.assign(w.size(), 0.0);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      mom.m[i] = config_.beta1 * mom.m[i] + (1.0 - config_.beta1) * gi;
      mom.v[i] = config_.beta2 * mom.v[i] + (1.0 - config_.beta2) * gi * gi;
      const double m_hat = mom.m[i] / bc1;
      const double v_hat = mom.v[i] / bc2;
      double wi = static_cast<double>(w[i]) * decay;
      wi -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
      w[i] = static_cast<S>(wi);
      g[i] = S(0);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace samda
