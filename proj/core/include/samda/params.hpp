#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "samda/tensor.hpp"

namespace samda {

struct InitSpec {
  enum class Kind { kZeros, kOnes, kNormal, kIdentity };
  Kind kind = Kind::kZeros;
  double stddev = 0.0;

  static InitSpec zeros() { return {Kind::kZeros, 0.0}; }
  static InitSpec ones() { return {Kind::kOnes, 0.0}; }
  static InitSpec normal(double stddev) { return {Kind::kNormal, stddev}; }
  static InitSpec identity() { return {Kind::kIdentity, 0.0}; }
};

template <typename S>
struct Parameter {
  std::string name;
  Tensor<S> tensor;
  bool trainable = true;
  InitSpec init;
};

using NamePredicate = std::function<bool(const std::string&)>;

// Named parameter registry. Iteration is in lexicographic name order, which
// is also the order in which initialisation draws random numbers.
template <typename S>
class ParamStore {
 public:
  using Map = std::map<std::string, Parameter<S>>;

  // Registers a parameter. Values are filled by initialize().
  Tensor<S> create(const std::string& name, Shape shape, InitSpec init);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Parameter<S>& at(const std::string& name) const;
  Parameter<S>& at(const std::string& name);
  Tensor<S> tensor(const std::string& name) const { return at(name).tensor; }

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  std::vector<std::string> names() const;

  // Draws initial values for every parameter accepted by `select`, in name
  // order, from one counter-based stream keyed by `seed`.
  void initialize(std::uint64_t seed, const NamePredicate& select = {});

  // Marks exactly the parameters accepted by `trainable` as trainable; the
  // rest lose requires_grad and their grad buffers.
  void set_trainable(const NamePredicate& trainable);

  std::int64_t count(bool trainable_only) const;

  // Allocates (or clears) grad buffers for all trainable parameters.
  void zero_grad();

  // Value copies keyed by name, for audits and restores.
  std::map<std::string, std::vector<S>> snapshot(const NamePredicate& select = {}) const;
  void restore(const std::map<std::string, std::vector<S>>& values);

 private:
  Map params_;
};

// Sum of element counts over the registry (optionally trainable only).
template <typename S>
std::int64_t param_count(const ParamStore<S>& store, bool trainable_only) {
  return store.count(trainable_only);
}

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace samda
