#include "samda/params.hpp"

#include "samda/errors.hpp"
#include "samda/rng.hpp"

namespace samda {

template <typename S>
Tensor<S> ParamStore<S>::create(const std::string& name, Shape shape, InitSpec init) {
  if (params_.count(name)) throw ContractError("duplicate parameter name: " + name);
  if (init.kind == InitSpec::Kind::kIdentity && (shape.size() != 2 || shape[0] != shape[1])) {
    throw DimensionError("identity init needs a square matrix, got " + shape_to_string(shape) + " for " + name);
  }
  auto t = Tensor<S>::zeros(std::move(shape));
  t.set_requires_grad(true);
  params_.emplace(name, Parameter<S>{name, t, true, init});
  return t;
}

template <typename S>
const Parameter<S>& ParamStore<S>::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

template <typename S>
Parameter<S>& ParamStore<S>::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

template <typename S>
std::vector<std::string> ParamStore<S>::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

template <typename S>
void ParamStore<S>::initialize(std::uint64_t seed, const NamePredicate& select) {
  CounterRng rng(seed);
  for (auto& [name, p] : params_) {
    if (select && !select(name)) continue;
    auto values = p.tensor.mutable_data();
    switch (p.init.kind) {
      case InitSpec::Kind::kZeros:
        std::fill(values.begin(), values.end(), S(0));
        break;
      case InitSpec::Kind::kOnes:
        std::fill(values.begin(), values.end(), S(1));
        break;
      case InitSpec::Kind::kNormal:
        for (auto& v : values) v = static_cast<S>(rng.normal() * p.init.stddev);
        break;
      case InitSpec::Kind::kIdentity: {
        const auto n = p.tensor.dim(0);
        std::fill(values.begin(), values.end(), S(0));
        for (std::int64_t i = 0; i < n; ++i) values[static_cast<std::size_t>(i * n + i)] = S(1);
        break;
      }
    }
  }
}

template <typename S>
void ParamStore<S>::set_trainable(const NamePredicate& trainable) {
  for (auto& [name, p] : params_) {
    p.trainable = trainable(name);
    p.tensor.set_requires_grad(p.trainable);
  }
}

template <typename S>
std::int64_t ParamStore<S>::count(bool trainable_only) const {
  std::int64_t n = 0;
  for (const auto& [_, p] : params_) {
    if (!trainable_only || p.trainable) n += p.tensor.numel();
  }
  return n;
}

template <typename S>
void ParamStore<S>::zero_grad() {
  for (auto& [_, p] : params_) {
    if (p.trainable) p.tensor.zero_grad();
  }
}

template <typename S>
std::map<std::string, std::vector<S>> ParamStore<S>::snapshot(const NamePredicate& select) const {
  std::map<std::string, std::vector<S>> out;
  for (const auto& [name, p] : params_) {
    if (select && !select(name)) continue;
    out.emplace(name, std::vector<S>(p.tensor.data().begin(), p.tensor.data().end()));
  }
  return out;
}

template <typename S>
void ParamStore<S>::restore(const std::map<std::string, std::vector<S>>& values) {
  for (const auto& [name, v] : values) {
    auto dst = at(name).tensor.mutable_data();
    if (dst.size() != v.size()) throw DimensionError("restore: size mismatch for " + name);
    std::copy(v.begin(), v.end(), dst.begin());
  }
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace samda
