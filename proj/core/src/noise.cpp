#include "fbsde/noise.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "fbsde/parallel.hpp"

namespace fbsde {

NoiseEnsemble generate_noise(const TimeGrid& grid, std::int64_t N, std::uint64_t seed,
                             int workers) {
    if (N < 1) throw std::invalid_argument("generate_noise: need at least one path");
    NoiseEnsemble out;
    out.grid = grid;
    out.N = N;
    out.seed = seed;
    out.increments.resize(N, grid.M);
    const double sdt = std::sqrt(grid.dt());
    for_each_block(N, workers, [&](std::int64_t, std::int64_t begin, std::int64_t end) {
        for (std::int64_t p = begin; p < end; ++p) {
            // One engine per path: increments depend only on (seed, path),
            // never on how paths are partitioned across workers.
            std::mt19937_64 eng(derive_seed(seed, static_cast<std::uint64_t>(SeedPurpose::brownian),
                                            static_cast<std::uint64_t>(p)));
            std::normal_distribution<double> normal(0.0, 1.0);
            for (std::int64_t i = 0; i < grid.M; ++i) out.increments(p, i) = sdt * normal(eng);
        }
    });
    return out;
}

}  // namespace fbsde
