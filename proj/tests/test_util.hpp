#pragma once

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "samda/rng.hpp"
#include "samda/tensor.hpp"

namespace samda::testing {

inline Tensor<double> random_leaf(Shape shape, std::uint64_t seed, double scale = 1.0) {
  CounterRng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = scale * rng.normal();
  auto t = Tensor<double>::from(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

inline Tensor<float> random_tensor_f(Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  CounterRng rng(seed);
  std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor<float>::from(std::move(shape), std::move(v));
}

// Central-difference check of d f / d inputs, written without the library's
// gradcheck so it can serve as an oracle for it.
inline double max_grad_error(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                             std::vector<Tensor<double>> inputs, double eps = 1e-6) {
  for (auto& t : inputs) t.zero_grad();
  f(inputs).backward();
  double worst = 0.0;
  for (auto& t : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      double fp, fm;
      {
        NoGradGuard g;
        data[i] = orig + eps;
        fp = f(inputs).item();
        data[i] = orig - eps;
        fm = f(inputs).item();
      }
      data[i] = orig;
      const double numeric = (fp - fm) / (2 * eps);
      const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-6});
      worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

// Fresh scratch directory under the build tree, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() / ("samda_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace samda::testing
