#include <benchmark/benchmark.h>

#include <random>

#include "fbsde/regression.hpp"

namespace {

void BM_node_regression(benchmark::State& state) {
    const std::int64_t N = state.range(0);
    const int vars = static_cast<int>(state.range(1));
    Eigen::MatrixXd raw(N, vars);
    Eigen::VectorXd target(N);
    std::mt19937_64 eng(3);
    std::normal_distribution<double> n01;
    for (std::int64_t i = 0; i < N; ++i) {
        for (int v = 0; v < vars; ++v) raw(i, v) = n01(eng);
        target[i] = raw(i, 0) + n01(eng);
    }
    for (auto _ : state) {
        fbsde::NodeRegression reg(raw, fbsde::RegressionBasis{}, 0, N);
        auto fit = reg.fit(target);
        benchmark::DoNotOptimize(fit.data());
    }
    state.SetItemsProcessed(state.iterations() * N);
}
BENCHMARK(BM_node_regression)->Args({16384, 1})->Args({16384, 3});

}  // namespace
