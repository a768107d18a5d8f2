#include <benchmark/benchmark.h>

#include "fbsde/benchmarks.hpp"
#include "fbsde/bsde.hpp"
#include "fbsde/forward.hpp"

namespace {

void BM_solve_bsde(benchmark::State& state) {
    auto bench = fbsde::make_benchmark(state.range(1) == 0 ? "linear" : "quadratic");
    fbsde::TimeGrid grid(1.0, state.range(0));
    auto noise = fbsde::generate_noise(grid, 8192, 7);
    auto x = fbsde::simulate_forward(bench.spec, bench.candidate, noise);
    for (auto _ : state) {
        auto yz = fbsde::solve_bsde(bench.spec, x, bench.candidate, noise, fbsde::SolverOptions{});
        benchmark::DoNotOptimize(yz.y0);
    }
    state.SetItemsProcessed(state.iterations() * 8192 * state.range(0));
}
BENCHMARK(BM_solve_bsde)->Args({64, 0})->Args({64, 1})->Args({128, 1})
    ->Unit(benchmark::kMillisecond);

}  // namespace
