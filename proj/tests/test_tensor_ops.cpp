#include <gtest/gtest.h>

#include <cmath>

#include "samda/errors.hpp"
#include "samda/ops.hpp"
#include "test_util.hpp"

namespace samda {
namespace {

using testing::max_grad_error;
using testing::random_leaf;
using TD = Tensor<double>;
using Inputs = std::vector<TD>;

// Weighted sum so every output element gets a distinct upstream gradient.
TD probe(const TD& y, std::uint64_t seed = 99) {
  CounterRng rng(seed);
  std::vector<double> w(static_cast<std::size_t>(y.numel()));
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return ops::sum(ops::mul(y, TD::from(y.shape(), w)));
}

TEST(Tensor, ShapeValidation) {
  EXPECT_THROW(TD::zeros({2, 0}), DimensionError);
  EXPECT_THROW(TD::from({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_EQ(shape_numel({2, 3, 4}), 24);
  EXPECT_THROW(TD::zeros({2, 2}).item(), DimensionError);
}

TEST(Tensor, BackwardNeedsScalar) {
  auto a = random_leaf({2, 2}, 1);
  auto b = ops::scale(a, 2.0);
  EXPECT_THROW(b.backward(), ContractError);
  auto c = TD::scalar(3.0);
  EXPECT_THROW(c.backward(), ContractError);
}

TEST(Tensor, RequiresGradOnlyOnLeaves) {
  auto a = random_leaf({3}, 2);
  auto b = ops::exp(a);
  EXPECT_THROW(b.set_requires_grad(false), ContractError);
}

TEST(Tensor, NoGradGuardRecordsNothing) {
  auto a = random_leaf({3}, 3);
  {
    NoGradGuard g;
    EXPECT_FALSE(grad_enabled());
    auto b = ops::sum(ops::exp(a));
    EXPECT_FALSE(b.requires_grad());
    EXPECT_THROW(b.backward(), ContractError);
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(ops::sum(a).requires_grad());
}

TEST(Tensor, GradientsAccumulateUntilZeroed) {
  auto a = random_leaf({4}, 4);
  ops::sum(ops::scale(a, 3.0)).backward();
  ops::sum(ops::scale(a, 3.0)).backward();
  for (double g : a.grad()) EXPECT_DOUBLE_EQ(g, 6.0);
  a.zero_grad();
  for (double g : a.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Tensor, SharedSubexpressionGradient) {
  // y = sum(x * x) with x used twice through the same node.
  auto x = random_leaf({5}, 5);
  auto e = ops::exp(x);
  ops::sum(ops::mul(e, e)).backward();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(x.grad()[i], 2 * std::exp(2 * x.data()[i]), 1e-9);
}

TEST(Ops, MatmulMatchesTripleLoop) {
  auto a = random_leaf({5, 7}, 10);
  auto b = random_leaf({7, 3}, 11);
  auto c = ops::matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{5, 3}));
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 7; ++k) s += a[i * 7 + k] * b[k * 3 + j];
      EXPECT_NEAR(c[i * 3 + j], s, 1e-12);
    }
  auto bt = random_leaf({3, 7}, 12);
  auto d = ops::matmul_nt(a, bt);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 7; ++k) s += a[i * 7 + k] * bt[j * 7 + k];
      EXPECT_NEAR(d[i * 3 + j], s, 1e-12);
    }
}

TEST(Ops, ShapeErrors) {
  auto a = random_leaf({2, 3}, 1);
  auto b = random_leaf({2, 3}, 2);
  EXPECT_THROW(ops::matmul(a, b), DimensionError);
  EXPECT_THROW(ops::add(a, random_leaf({3, 2}, 3)), DimensionError);
  EXPECT_THROW(ops::mul(a, random_leaf({6}, 3)), DimensionError);
  EXPECT_THROW(ops::matmul(random_leaf({6}, 3), b), DimensionError);
  EXPECT_THROW(ops::softmax(a, 2), DimensionError);
  EXPECT_THROW(ops::reshape(a, {4}), DimensionError);
  EXPECT_THROW(ops::slice_rows(a, 1, 2), DimensionError);
  EXPECT_THROW(ops::slice_cols(a, 2, 2), DimensionError);
  EXPECT_THROW(ops::pixel_shuffle(random_leaf({4, 6}, 4), 2, 2), DimensionError);
  EXPECT_THROW(ops::layer_norm(a, random_leaf({3}, 5), random_leaf({3}, 6), 0.0), DimensionError);
}

TEST(Ops, ScalarBroadcast) {
  auto a = random_leaf({2, 3}, 1);
  auto s = random_leaf({1}, 2);
  auto c = ops::mul(a, s);
  for (int i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(c[i], a[i] * s[0]);
  EXPECT_LT(max_grad_error([](const Inputs& in) { return probe(ops::mul(in[0], in[1])); }, {a, s}), 1e-6);
}

TEST(Ops, SoftmaxOracle) {
  auto x = random_leaf({3, 4}, 20, 3.0);
  for (std::int64_t axis : {0, 1}) {
    auto y = ops::softmax(x, axis);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) {
        double denom = 0;
        if (axis == 1) {
          for (int k = 0; k < 4; ++k) denom += std::exp(x[i * 4 + k]);
        } else {
          for (int k = 0; k < 3; ++k) denom += std::exp(x[k * 4 + j]);
        }
        EXPECT_NEAR(y[i * 4 + j], std::exp(x[i * 4 + j]) / denom, 1e-12);
      }
  }
  // Large logits stay finite.
  auto big = TD::from({1, 3}, {1000.0, 999.0, -1000.0});
  auto p = ops::softmax(big, 1);
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(Ops, LayerNormOracle) {
  auto x = random_leaf({4, 6}, 30, 2.0);
  auto g = random_leaf({6}, 31);
  auto b = random_leaf({6}, 32);
  auto y = ops::layer_norm(x, g, b, 1e-5);
  for (int i = 0; i < 4; ++i) {
    double mu = 0, var = 0;
    for (int j = 0; j < 6; ++j) mu += x[i * 6 + j] / 6;
    for (int j = 0; j < 6; ++j) var += (x[i * 6 + j] - mu) * (x[i * 6 + j] - mu) / 6;
    for (int j = 0; j < 6; ++j)
      EXPECT_NEAR(y[i * 6 + j], (x[i * 6 + j] - mu) / std::sqrt(var + 1e-5) * g[j] + b[j], 1e-12);
  }
}

TEST(Ops, PixelShuffleLayout) {
  const int h = 2, w = 3, c = 2;
  std::vector<double> v(h * w * 4 * c);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  auto y = ops::pixel_shuffle(TD::from({h * w, 4 * c}, v), h, w);
  ASSERT_EQ(y.shape(), (Shape{4 * h * w, c}));
  // Output pixel (r, q) on the 2h x 2w grid comes from token (r/2, q/2),
  // channel block (r%2)*2 + q%2.
  for (int r = 0; r < 2 * h; ++r)
    for (int q = 0; q < 2 * w; ++q)
      for (int k = 0; k < c; ++k) {
        const int token = (r / 2) * w + q / 2;
        const int block = (r % 2) * 2 + q % 2;
        EXPECT_EQ(y[(r * 2 * w + q) * c + k], v[token * 4 * c + block * c + k]);
      }
}

TEST(Ops, ConcatSliceRoundTrip) {
  auto a = random_leaf({2, 3}, 1);
  auto b = random_leaf({4, 3}, 2);
  auto r = ops::concat_rows<double>({a, b});
  auto back = ops::slice_rows(r, 2, 4);
  for (int i = 0; i < 12; ++i) EXPECT_EQ(back[i], b[i]);
  auto c = random_leaf({2, 5}, 3);
  auto cc = ops::concat_cols<double>({a, c});
  auto s = ops::slice_cols(cc, 3, 5);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(s[i], c[i]);
}

TEST(Ops, GeluOracle) {
  auto x = random_leaf({7}, 40, 2.0);
  auto y = ops::gelu(x);
  for (int i = 0; i < 7; ++i) EXPECT_NEAR(y[i], 0.5 * x[i] * (1 + std::erf(x[i] / std::sqrt(2.0))), 1e-12);
}

TEST(Ops, LogClampHasZeroGradient) {
  auto x = TD::from({2}, {0.0, 2.0});
  x.set_requires_grad(true);
  auto y = ops::log(x);
  EXPECT_NEAR(y[0], std::log(ops::kLogClamp), 1e-9);
  ops::sum(y).backward();
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 0.5);
}

struct GradCase {
  const char* name;
  std::vector<Shape> shapes;
  bool positive;
  std::function<TD(const Inputs&)> f;
};

void PrintTo(const GradCase& gc, std::ostream* os) { *os << gc.name; }

class OpGradient : public ::testing::TestWithParam<GradCase> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  const auto& gc = GetParam();
  Inputs in;
  std::uint64_t seed = 100;
  for (const auto& s : gc.shapes) {
    auto t = random_leaf(s, seed++);
    if (gc.positive) {
      for (auto& v : t.mutable_data()) v = 0.5 + std::fabs(v);
    }
    in.push_back(t);
  }
  EXPECT_LT(max_grad_error([&](const Inputs& x) { return probe(gc.f(x)); }, in), 1e-6) << gc.name;
}

INSTANTIATE_TEST_SUITE_P(
    All, OpGradient,
    ::testing::Values(
        GradCase{"matmul", {{3, 4}, {4, 2}}, false, [](const Inputs& x) { return ops::matmul(x[0], x[1]); }},
        GradCase{"matmul_nt", {{3, 4}, {2, 4}}, false, [](const Inputs& x) { return ops::matmul_nt(x[0], x[1]); }},
        GradCase{"transpose", {{3, 4}}, false, [](const Inputs& x) { return ops::transpose(x[0]); }},
        GradCase{"linear", {{3, 4}, {4, 5}, {5}}, false,
                 [](const Inputs& x) { return ops::linear(x[0], x[1], x[2]); }},
        GradCase{"add", {{2, 3}, {2, 3}}, false, [](const Inputs& x) { return ops::add(x[0], x[1]); }},
        GradCase{"sub", {{2, 3}, {1}}, false, [](const Inputs& x) { return ops::sub(x[0], x[1]); }},
        GradCase{"mul", {{2, 3}, {2, 3}}, false, [](const Inputs& x) { return ops::mul(x[0], x[1]); }},
        GradCase{"scale", {{2, 3}}, false, [](const Inputs& x) { return ops::scale(x[0], -1.7); }},
        GradCase{"add_scalar", {{2, 3}}, false, [](const Inputs& x) { return ops::add_scalar(x[0], 0.3); }},
        GradCase{"sigmoid", {{2, 3}}, false, [](const Inputs& x) { return ops::sigmoid(x[0]); }},
        GradCase{"gelu", {{2, 3}}, false, [](const Inputs& x) { return ops::gelu(x[0]); }},
        GradCase{"relu", {{2, 3}}, true, [](const Inputs& x) { return ops::relu(ops::add_scalar(x[0], -1.0)); }},
        GradCase{"log", {{2, 3}}, true, [](const Inputs& x) { return ops::log(x[0]); }},
        GradCase{"exp", {{2, 3}}, false, [](const Inputs& x) { return ops::exp(x[0]); }},
        GradCase{"pow", {{2, 3}}, true, [](const Inputs& x) { return ops::pow(x[0], 1.5); }},
        GradCase{"mean", {{2, 3}}, false, [](const Inputs& x) { return ops::mean(x[0]); }},
        GradCase{"mean_rows", {{4, 3}}, false, [](const Inputs& x) { return ops::mean_rows(x[0]); }},
        GradCase{"softmax0", {{3, 4}}, false, [](const Inputs& x) { return ops::softmax(x[0], 0); }},
        GradCase{"softmax1", {{3, 4}}, false, [](const Inputs& x) { return ops::softmax(x[0], 1); }},
        GradCase{"layer_norm", {{3, 5}, {5}, {5}}, false,
                 [](const Inputs& x) { return ops::layer_norm(x[0], x[1], x[2], 1e-5); }},
        GradCase{"reshape", {{2, 6}}, false, [](const Inputs& x) { return ops::reshape(x[0], {3, 4}); }},
        GradCase{"concat_rows", {{2, 3}, {1, 3}}, false,
                 [](const Inputs& x) { return ops::concat_rows<double>({x[0], x[1]}); }},
        GradCase{"slice_rows", {{4, 3}}, false, [](const Inputs& x) { return ops::slice_rows(x[0], 1, 2); }},
        GradCase{"concat_cols", {{2, 3}, {2, 2}}, false,
                 [](const Inputs& x) { return ops::concat_cols<double>({x[0], x[1]}); }},
        GradCase{"slice_cols", {{2, 5}}, false, [](const Inputs& x) { return ops::slice_cols(x[0], 1, 3); }},
        GradCase{"pixel_shuffle", {{6, 8}}, false, [](const Inputs& x) { return ops::pixel_shuffle(x[0], 2, 3); }}),
    [](const ::testing::TestParamInfo<GradCase>& info) { return std::string(info.param.name); });

}  // namespace
}  // namespace samda
