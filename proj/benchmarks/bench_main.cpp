#include <benchmark/benchmark.h>

#include "samda/adapter.hpp"
#include "samda/losses.hpp"
#include "samda/model.hpp"
#include "samda/ops.hpp"
#include "samda/rng.hpp"
#include "samda/synth.hpp"

namespace {

using namespace samda;

Tensor<float> random_matrix(std::int64_t r, std::int64_t c, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<float> v(static_cast<std::size_t>(r * c));
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return Tensor<float>::from({r, c}, v);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = state.range(0);
  const auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  NoGradGuard g;
  for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

struct Fixture {
  sam::SamModel<float> model{sam::ModelConfig{}};
  data::Sample sample = data::generate_sample(data::default_source_domain(), data::volume_seed(1, 1), 3);
  Tensor<float> image = Tensor<float>::from({64, 64}, sample.image);
  sam::PromptSet prompt{{{32.0, 32.0, true}}};
};

void BM_Forward(benchmark::State& state) {
  Fixture f;
  NoGradGuard g;
  for (auto _ : state) benchmark::DoNotOptimize(f.model.predict(f.image, f.prompt));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  Fixture f;
  const auto method = static_cast<adapt::Method>(state.range(0));
  adapt::prepare_method(f.model, method, {}, {}, 1);
  state.SetLabel(adapt::method_name(method));
  for (auto _ : state) {
    f.model.params().zero_grad();
    auto l = loss::supervised_loss(f.model.predict(f.image, f.prompt), f.sample.mask, {});
    l.total.backward();
  }
}
BENCHMARK(BM_ForwardBackward)
    ->Arg(static_cast<int>(adapt::Method::kFullFt))
    ->Arg(static_cast<int>(adapt::Method::kSamDaDec))
    ->Unit(benchmark::kMillisecond);

void BM_AdapterApply(benchmark::State& state) {
  ParamStore<float> ps;
  adapt::AdapterLayer<float> layer(ps, "a", 64, {});
  ps.initialize(1);
  const auto t = random_matrix(64, 64, 3);
  NoGradGuard g;
  for (auto _ : state) benchmark::DoNotOptimize(layer.apply(t));
}
BENCHMARK(BM_AdapterApply);

void BM_GenerateSample(benchmark::State& state) {
  const auto d = data::default_target_domain();
  std::uint32_t v = 0;
  for (auto _ : state) benchmark::DoNotOptimize(data::generate_sample(d, data::volume_seed(1, v++ % 64), 3));
}
BENCHMARK(BM_GenerateSample)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
