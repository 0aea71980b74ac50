#include <benchmark/benchmark.h>

#include <cmath>

#include "wdae/class_graph.hpp"
#include "wdae/config.hpp"
#include "wdae/evaluator.hpp"
#include "wdae/trainer.hpp"

using namespace wdae;

namespace {

std::vector<double> unit_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t k = 0; k < d; ++k) ss += (v[i * d + k] = rng.normal()) * v[i * d + k];
    for (std::size_t k = 0; k < d; ++k) v[i * d + k] /= std::sqrt(ss);
  }
  return v;
}

struct Setup {
  RunConfig config = RunConfig::preset("synthetic");
  FeatureDataset data;
  ClassifierWeights weights;

  Setup() {
    data = generate_synthetic(config.synthetic());
    weights = pretrain_base(data, config.pretrain());
  }
};

const Setup& setup() {
  static const Setup s;
  return s;
}

}  // namespace

static void BM_BuildGraph(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::vector<double> rows = unit_rows(n, 64, 1);
  for (auto _ : state) benchmark::DoNotOptimize(build_graph(rows, 64, 10, 5.0));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_BuildGraph)->RangeMultiplier(2)->Range(16, 512)->Complexity(benchmark::oNSquared);

static void BM_ReconstructEval(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 32;
  ModelConfig mc;
  mc.dim = d;
  mc.hidden_width = static_cast<std::size_t>(state.range(1));
  const WdaeModel model(mc, 0);
  const std::vector<double> rows = unit_rows(n, d, 2);
  const ClassGraph graph = build_graph(rows, d, mc.neighbors, mc.inverse_temperature);
  const Tensor w = Tensor::from({n, d}, rows);
  for (auto _ : state) benchmark::DoNotOptimize(model.reconstruct(w, &graph, Mode::eval, nullptr));
}
BENCHMARK(BM_ReconstructEval)->Args({25, 64})->Args({25, 256})->Args({100, 256})->Unit(benchmark::kMicrosecond);

static void BM_TrainStep(benchmark::State& state) {
  const Setup& s = setup();
  const WdaeModel model(s.config.model(s.data.dim), 0);
  const EpisodeConfig ec = s.config.episode();
  const TrainConfig tc = s.config.train();
  Rng rng(3);
  for (auto _ : state) {
    state.PauseTiming();
    Rng sampling = rng.split(1), noise = rng.split(2), drop = rng.split(3);
    rng = rng.split(4);
    const Episode ep = sample_episode(s.data, s.weights, ec, sampling);
    const NoisyInput in = make_noisy_input(ep, s.weights, ec.noise_sigma, noise);
    const ClassGraph graph = build_graph(in.clean, ep.dim, model.config().neighbors, model.config().inverse_temperature);
    for (Tensor& p : model.parameters()) p.zero_grad();
    state.ResumeTiming();
    const LossParts loss = episode_loss(ep, model, &graph, in.input, tc, &drop);
    loss.total.backward();
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMicrosecond);

static void BM_EvalEpisode(benchmark::State& state) {
  const Setup& s = setup();
  const WdaeModel model(s.config.model(s.data.dim), 0);
  const EvalConfig ec = s.config.eval();
  std::size_t index = 0;
  for (auto _ : state) benchmark::DoNotOptimize(run_episode(s.data, s.weights, model, ec, index++));
}
BENCHMARK(BM_EvalEpisode)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
