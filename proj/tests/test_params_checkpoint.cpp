#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "samda/adamw.hpp"
#include "samda/checkpoint.hpp"
#include "samda/errors.hpp"
#include "samda/gradcheck.hpp"
#include "samda/ops.hpp"
#include "samda/params.hpp"
#include "test_util.hpp"

namespace samda {
namespace {

TEST(ParamStore, DuplicateAndUnknownNames) {
  ParamStore<float> ps;
  ps.create("a.w", {2, 2}, InitSpec::normal(0.1));
  EXPECT_THROW(ps.create("a.w", {2, 2}, InitSpec::zeros()), ContractError);
  EXPECT_THROW(ps.at("nope"), ContractError);
  EXPECT_THROW(ps.create("eye", {2, 3}, InitSpec::identity()), DimensionError);
}

TEST(ParamStore, InitializationIsSeededAndOrderStable) {
  auto build = [](bool reversed) {
    ParamStore<float> ps;
    if (reversed) {
      ps.create("z", {3}, InitSpec::normal(1.0));
      ps.create("a", {4}, InitSpec::normal(1.0));
    } else {
      ps.create("a", {4}, InitSpec::normal(1.0));
      ps.create("z", {3}, InitSpec::normal(1.0));
    }
    ps.create("one", {2}, InitSpec::ones());
    ps.create("eye", {2, 2}, InitSpec::identity());
    ps.initialize(7);
    return ps.snapshot();
  };
  EXPECT_EQ(build(false), build(true));
  const auto s = build(false);
  EXPECT_EQ(s.at("one"), (std::vector<float>{1, 1}));
  EXPECT_EQ(s.at("eye"), (std::vector<float>{1, 0, 0, 1}));
  ParamStore<float> other;
  other.create("a", {4}, InitSpec::normal(1.0));
  other.initialize(8);
  EXPECT_NE(other.snapshot().at("a"), s.at("a"));
}

TEST(ParamStore, TrainableCountsAndSnapshotRestore) {
  ParamStore<double> ps;
  ps.create("enc.w", {3, 4}, InitSpec::normal(1.0));
  ps.create("dec.w", {2, 5}, InitSpec::normal(1.0));
  ps.initialize(1);
  EXPECT_EQ(ps.count(false), 22);
  ps.set_trainable([](const std::string& n) { return n.rfind("dec.", 0) == 0; });
  EXPECT_EQ(ps.count(true), 10);
  EXPECT_FALSE(ps.at("enc.w").tensor.requires_grad());
  const auto snap = ps.snapshot();
  ps.at("dec.w").tensor.mutable_data()[0] += 1.0;
  ps.restore(snap);
  EXPECT_EQ(ps.snapshot(), snap);
}

TEST(AdamW, MatchesHandRecurrence) {
  AdamWConfig cfg{0.05, 0.8, 0.95, 1e-8, 0.1};
  ParamStore<double> ps;
  auto w = ps.create("w", {3}, InitSpec::zeros());
  auto frozen = ps.create("f", {2}, InitSpec::ones());
  ps.initialize(0);
  w.mutable_data()[0] = 1.0;
  w.mutable_data()[1] = -2.0;
  w.mutable_data()[2] = 0.5;
  ps.set_trainable([](const std::string& n) { return n == "w"; });
  AdamW<double> opt(cfg);

  std::vector<double> x = {1.0, -2.0, 0.5}, m(3, 0.0), v(3, 0.0);
  for (int t = 1; t <= 4; ++t) {
    ps.zero_grad();
    // loss = sum(w^3 / 3) -> grad w^2
    ops::sum(ops::scale(ops::mul(ops::mul(w, w), w), 1.0 / 3.0)).backward();
    opt.step(ps);
    for (int i = 0; i < 3; ++i) {
      const double g = x[i] * x[i];
      m[i] = 0.8 * m[i] + 0.2 * g;
      v[i] = 0.95 * v[i] + 0.05 * g * g;
      const double mh = m[i] / (1 - std::pow(0.8, t));
      const double vh = v[i] / (1 - std::pow(0.95, t));
      x[i] = x[i] - 0.05 * 0.1 * x[i] - 0.05 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(w[i], x[i], 1e-12) << "step " << t << " coord " << i;
    }
    for (double g : w.grad()) EXPECT_EQ(g, 0.0);
  }
  EXPECT_EQ(frozen[0], 1.0);
  EXPECT_EQ(opt.steps(), 4);
}

TEST(AdamW, MissingGradientIsContractError) {
  ParamStore<float> ps;
  ps.create("w", {2}, InitSpec::ones());
  AdamW<float> opt;
  EXPECT_THROW(opt.step(ps), ContractError);
}

Checkpoint sample_checkpoint() {
  return {{"b", {2}, {1.5f, -2.0f}}, {"a.long_name", {2, 1, 3}, {0, 1, 2, 3, 4, 5}}};
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(v & 0xff);
  out.push_back(v >> 8);
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

TEST(Checkpoint, ByteLayout) {
  std::vector<std::uint8_t> expect = {'S', 'D', 'C', 'K'};
  put_u16(expect, 1);
  const auto ckpt = sample_checkpoint();
  put_u32(expect, static_cast<std::uint32_t>(ckpt.size()));
  for (const auto& e : ckpt) {
    put_u16(expect, static_cast<std::uint16_t>(e.name.size()));
    expect.insert(expect.end(), e.name.begin(), e.name.end());
    expect.push_back(static_cast<std::uint8_t>(e.shape.size()));
    for (auto d : e.shape) put_u32(expect, static_cast<std::uint32_t>(d));
    for (float f : e.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(expect, bits);
    }
  }
  EXPECT_EQ(encode_checkpoint(ckpt), expect);
  EXPECT_EQ(decode_checkpoint(expect), ckpt);
}

TEST(Checkpoint, EveryTruncationIsFormatError) {
  const auto bytes = encode_checkpoint(sample_checkpoint());
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    std::span<const std::uint8_t> prefix(bytes.data(), n);
    EXPECT_THROW(decode_checkpoint(prefix), FormatError) << "prefix " << n;
  }
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode_checkpoint(extra), FormatError);
}

TEST(Checkpoint, BadMagicAndVersion) {
  auto bytes = encode_checkpoint(sample_checkpoint());
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  try {
    decode_checkpoint(bad);
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
}

TEST(Checkpoint, StoreRoundTripAndStrictness) {
  ParamStore<float> ps;
  ps.create("x", {2, 3}, InitSpec::normal(1.0));
  ps.create("y", {4}, InitSpec::normal(1.0));
  ps.initialize(3);
  testing::TempDir dir("ckpt");
  const auto path = dir.path() / "m.sdck";
  write_checkpoint(path, to_checkpoint(ps));

  ParamStore<float> other;
  other.create("x", {2, 3}, InitSpec::zeros());
  other.create("y", {4}, InitSpec::zeros());
  other.initialize(0);
  load_checkpoint(other, read_checkpoint(path), true);
  EXPECT_EQ(other.snapshot(), ps.snapshot());

  ParamStore<float> extra;
  extra.create("x", {2, 3}, InitSpec::zeros());
  extra.create("y", {4}, InitSpec::zeros());
  extra.create("z", {1}, InitSpec::zeros());
  EXPECT_THROW(load_checkpoint(extra, read_checkpoint(path), true), ValidationError);
  EXPECT_NO_THROW(load_checkpoint(extra, read_checkpoint(path), false));

  ParamStore<float> wrong;
  wrong.create("x", {3, 2}, InitSpec::zeros());
  wrong.create("y", {4}, InitSpec::zeros());
  EXPECT_THROW(load_checkpoint(wrong, read_checkpoint(path), true), DimensionError);

  auto bytes = read_file_bytes(path);
  bytes.resize(bytes.size() - 3);
  write_file_bytes(path, bytes);
  EXPECT_THROW(read_checkpoint(path), FormatError);
}

TEST(GradCheck, AgreesOnSmoothLossAndFlagsWrongGradient) {
  ParamStore<double> ps;
  auto w = ps.create("w", {3, 3}, InitSpec::normal(0.5));
  auto b = ps.create("b", {3}, InitSpec::normal(0.5));
  ps.initialize(11);
  auto x = testing::random_leaf({4, 3}, 12);
  x.set_requires_grad(false);
  auto loss = [&] { return ops::mean(ops::sigmoid(ops::linear(x, w, b))); };
  auto r = finite_diff_check(loss, ps, {1e-6, 20, 0});
  EXPECT_LT(r.max_rel_error, 1e-6);
  EXPECT_EQ(r.coords_checked, 9 + 3);

  // An op whose backward pass is deliberately wrong (factor 2) must be caught.
  auto broken = [&] {
    auto y = ops::sum(ops::mul(w, w));
    return Tensor<double>::make({1}, {y.item()}, {w}, [](detail::Node<double>& n) {
      auto& in = *n.inputs[0];
      auto& g = in.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 4 * in.value[i] * n.grad[0];
    });
  };
  ps.set_trainable([](const std::string& n) { return n == "w"; });
  EXPECT_GT(finite_diff_check(broken, ps).max_rel_error, 0.3);
}

TEST(GradCheck, StructurallyZeroGradientScoresZero) {
  // Softmax over q.k^T ignores the key bias: its gradient is exactly zero and
  // the difference quotient is rounding noise.
  ParamStore<double> ps;
  auto wk = ps.create("k.weight", {4, 4}, InitSpec::normal(0.5));
  auto bk = ps.create("k.bias", {4}, InitSpec::normal(0.5));
  ps.initialize(5);
  auto q = testing::random_leaf({3, 4}, 6);
  auto keys = testing::random_leaf({5, 4}, 7);
  auto c = testing::random_leaf({3, 5}, 8);
  for (auto* t : {&q, &keys, &c}) t->set_requires_grad(false);
  auto loss = [&] { return ops::sum(ops::mul(ops::softmax(ops::matmul_nt(q, ops::linear(keys, wk, bk)), 1), c)); };
  const auto r = finite_diff_check(loss, ps, {1e-6, 16, 0});
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_param << " " << r.worst_analytic << " vs " << r.worst_numeric;
  ps.zero_grad();
  loss().backward();
  for (double g : bk.grad()) EXPECT_LT(std::abs(g), 1e-14);
}

TEST(GradCheck, RejectsNondeterminismAndBadEps) {
  ParamStore<double> ps;
  auto w = ps.create("w", {2}, InitSpec::ones());
  ps.initialize(0);
  int calls = 0;
  auto drifting = [&] { return ops::add_scalar(ops::sum(w), 1e-3 * ++calls); };
  EXPECT_THROW(finite_diff_check(drifting, ps), ContractError);
  auto fine = [&] { return ops::sum(w); };
  EXPECT_THROW(finite_diff_check(fine, ps, {1e-9}), ContractError);
  EXPECT_THROW(finite_diff_check(fine, ps, {1e-2}), ContractError);
}

}  // namespace
}  // namespace samda
