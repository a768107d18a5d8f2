#include <benchmark/benchmark.h>

#include "fbsde/benchmarks.hpp"
#include "fbsde/forward.hpp"

namespace {

void BM_generate_noise(benchmark::State& state) {
    fbsde::TimeGrid grid(1.0, state.range(0));
    for (auto _ : state) {
        auto noise = fbsde::generate_noise(grid, 4096, 7);
        benchmark::DoNotOptimize(noise.increments.data());
    }
    state.SetItemsProcessed(state.iterations() * 4096 * state.range(0));
}
BENCHMARK(BM_generate_noise)->Arg(64)->Arg(256);

void BM_simulate_forward(benchmark::State& state) {
    auto bench = fbsde::make_benchmark("quadratic");
    fbsde::TimeGrid grid(1.0, state.range(0));
    auto noise = fbsde::generate_noise(grid, 4096, 7);
    for (auto _ : state) {
        auto x = fbsde::simulate_forward(bench.spec, bench.candidate, noise);
        benchmark::DoNotOptimize(x.components[0].data());
    }
    state.SetItemsProcessed(state.iterations() * 4096 * state.range(0));
}
BENCHMARK(BM_simulate_forward)->Arg(64)->Arg(256);

void BM_simulate_variations(benchmark::State& state) {
    auto bench = fbsde::make_benchmark("quadratic");
    fbsde::TimeGrid grid(1.0, 128);
    auto noise = fbsde::generate_noise(grid, 4096, 7);
    auto xbar = fbsde::simulate_forward(bench.spec, bench.candidate, noise);
    fbsde::SpikeConfig spike{0.0, 0.25, bench.spike_u};
    for (auto _ : state) {
        auto x1 = fbsde::simulate_x1(bench.spec, xbar, bench.candidate, spike, noise);
        auto x2 = fbsde::simulate_x2(bench.spec, xbar, bench.candidate, x1, spike, noise);
        benchmark::DoNotOptimize(x2.components[0].data());
    }
}
BENCHMARK(BM_simulate_variations);

}  // namespace
