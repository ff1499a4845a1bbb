#include <benchmark/benchmark.h>

#include "physctl/control_loop.hpp"
#include "physctl/models.hpp"
#include "physctl/ops.hpp"
#include "physctl/parameters.hpp"
#include "physctl/systems.hpp"

using namespace physctl;

namespace {

Tensor uniform(Shape shape, std::uint64_t seed) {
  RandomStream rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform();
  return t;
}

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Parameter a("a", uniform({n, n}, 1)), b("b", uniform({n, n}, 2));
  for (auto _ : state) {
    Graph g;
    g.backward(sum(matmul(g.parameter(a), g.parameter(b))));
    benchmark::DoNotOptimize(a.grad.raw());
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(256);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  Parameter in("x", uniform({20, c, 16, 16}, 3)), k("k", uniform({c, c, 3, 3}, 4));
  for (auto _ : state) {
    Graph g;
    g.backward(sum(conv2d(g.parameter(in), g.parameter(k))));
    benchmark::DoNotOptimize(k.grad.raw());
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(1)->Arg(4);

void BM_OpticalForward(benchmark::State& state) {
  OpticalConfig c;
  c.drift_rate = 1e-3;
  c.noise_sigma = 0.01;
  OpticalSystem sys(c);
  Tensor x = uniform({c.n}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(sys.forward(x).raw());
}
BENCHMARK(BM_OpticalForward);

void BM_RetinaRates(benchmark::State& state) {
  RetinaSystem sys(RetinaConfig{});
  Tensor x = uniform({20, 16, 16}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(sys.rates(x).raw());
}
BENCHMARK(BM_RetinaRates);

void BM_VaeStep(benchmark::State& state) {
  ModelSpec spec;
  if (state.range(0) == 1) {
    spec.task = TaskKind::Retina;
    spec.latent_dim = 8;
  }
  VaeModel model = init_vae(spec, 1);
  const std::size_t batch = spec.task == TaskKind::Optical ? 64 : 16;
  Shape xs{batch}, ys{batch};
  for (auto d : spec.input_shape()) xs.push_back(d);
  for (auto d : spec.output_shape()) ys.push_back(d);
  Tensor x = uniform(xs, 7), y = uniform(ys, 8);
  RandomStream rng(9);
  for (auto _ : state) {
    Graph g;
    ParamScope scope(g, model.params);
    LossParts loss = vae_loss(scope, spec, g.constant(x), g.constant(y), 1.0, rng);
    g.backward(loss.total);
    model.params.adam_step(AdamConfig{});
  }
  state.SetLabel(spec.task == TaskKind::Optical ? "optical bs64" : "retina bs16");
}
BENCHMARK(BM_VaeStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Pearson(benchmark::State& state) {
  Tensor a = uniform({16, 16}, 10), b = uniform({16, 16}, 11);
  for (auto _ : state) benchmark::DoNotOptimize(pearson2d(a, b));
}
BENCHMARK(BM_Pearson);

}  // namespace

BENCHMARK_MAIN();
