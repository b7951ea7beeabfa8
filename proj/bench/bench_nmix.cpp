// Serial reference against the OpenMP paths for likelihood and simulation.
#include <cmath>

#include <benchmark/benchmark.h>

#include "nmix/likelihood.hpp"
#include "nmix/simulate.hpp"

using namespace nmix;

namespace {

SimConfig config(const char* model, std::size_t R) {
  return SimConfig{SurveyDesign::constant(R, 4, 1.0), *parse_protocol(model),
                   Parameterization::constant(std::log(8.0), std::log(0.5)), 11};
}

void bm_loglik(benchmark::State& state, const char* model, bool parallel) {
  const auto d = simulate_dataset(config(model, static_cast<std::size_t>(state.range(0))));
  const auto p = Parameterization::constant(std::log(7.0), std::log(0.6));
  for (auto _ : state) {
    auto ll = parallel ? total_loglik(d, p) : total_loglik_serial(d, p);
    benchmark::DoNotOptimize(ll.total);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void bm_simulate(benchmark::State& state, const char* model, bool parallel) {
  const auto cfg = config(model, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    auto d = parallel ? simulate_dataset(cfg) : simulate_dataset_serial(cfg);
    benchmark::DoNotOptimize(d.records.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK_CAPTURE(bm_loglik, count_m_serial, "Count:M", false)->Arg(1000)->Arg(10000);
BENCHMARK_CAPTURE(bm_loglik, count_m_omp, "Count:M", true)->Arg(1000)->Arg(10000);
BENCHMARK_CAPTURE(bm_loglik, binary_m_serial, "Binary:M", false)->Arg(1000)->Arg(10000);
BENCHMARK_CAPTURE(bm_loglik, binary_m_omp, "Binary:M", true)->Arg(1000)->Arg(10000);
BENCHMARK_CAPTURE(bm_loglik, pcountt_m_serial, "PCountT:M", false)->Arg(1000)->Arg(10000);
BENCHMARK_CAPTURE(bm_loglik, pcountt_m_omp, "PCountT:M", true)->Arg(1000)->Arg(10000);
BENCHMARK_CAPTURE(bm_simulate, countt_m_serial, "CountT:M", false)->Arg(10000)->Arg(100000);
BENCHMARK_CAPTURE(bm_simulate, countt_m_omp, "CountT:M", true)->Arg(10000)->Arg(100000);

BENCHMARK_MAIN();
