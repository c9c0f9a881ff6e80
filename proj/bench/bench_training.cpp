// Serial reference vs OpenMP ensemble training on a synthetic feature matrix.

#include <benchmark/benchmark.h>

#include <random>

#include "cachexia/learner.hpp"

using namespace cachexia;

namespace {

struct Data {
  Rows x;
  std::vector<int> y;
};

Data make_data(std::size_t n, std::size_t d) {
  Data data;
  Rng rng(17);
  std::normal_distribution<double> z(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(d);
    for (auto& v : row) v = z(rng);
    data.y.push_back(row[0] + 0.5 * row[1] + 0.3 * z(rng) > 0 ? 1 : 0);
    data.x.push_back(std::move(row));
  }
  return data;
}

std::vector<MlpArchitecture> archs(std::size_t d) {
  std::vector<MlpArchitecture> out;
  const std::array<std::array<std::size_t, 4>, 5> widths{{{32, 16, 16, 8}, {24, 24, 12, 8}, {16, 16, 8, 8},
                                                          {32, 32, 16, 16}, {12, 8, 8, 4}}};
  for (std::size_t a = 0; a < widths.size(); ++a) {
    MlpArchitecture arch;
    arch.input_dim = d;
    arch.hidden = widths[a];
    arch.dropout = {0.1, 0.1, 0.1, 0.1};
    arch.learning_rate = 0.01;
    arch.seed = 100 + a;
    out.push_back(arch);
  }
  return out;
}

void run(benchmark::State& state, Execution ex) {
  const auto data = make_data(static_cast<std::size_t>(state.range(0)), 24);
  const auto a = archs(24);
  LearnerConfig cfg;
  cfg.train.max_epochs = 20;
  cfg.train.patience = 20;
  cfg.execution = ex;
  for (auto _ : state) {
    auto ens = ensemble_train(data.x, data.y, a, cfg);
    benchmark::DoNotOptimize(ens.variance_threshold);
  }
  state.counters["networks"] = 50;
}

void BM_EnsembleSerial(benchmark::State& state) { run(state, Execution::serial); }
void BM_EnsembleParallel(benchmark::State& state) { run(state, Execution::parallel); }

}  // namespace

BENCHMARK(BM_EnsembleSerial)->Arg(236)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EnsembleParallel)->Arg(236)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
