#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "fbsde/grid.hpp"

namespace fbsde {

// splitmix64; used to derive independent per-path / per-purpose streams from
// one 64-bit seed.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index) {
    return mix64(mix64(seed ^ mix64(purpose)) ^ index);
}

// Purpose tags for the seed-splitting rule. Everything stochastic in a run
// draws from the config seed through one of these streams.
enum class SeedPurpose : std::uint64_t {
    brownian = 1,
    derivative_check = 2,
};

// Brownian increments on a uniform grid: increments(p, i) ~ N(0, dt) for path
// p and step i. The single source of randomness for every coupled simulation
// of a run; regenerating with the same arguments is bit-identical.
struct NoiseEnsemble {
    TimeGrid grid;
    std::int64_t N = 0;
    std::uint64_t seed = 0;
    Eigen::MatrixXd increments;  // N x M

    double dw(std::int64_t path, std::int64_t step) const { return increments(path, step); }
};

NoiseEnsemble generate_noise(const TimeGrid& grid, std::int64_t N, std::uint64_t seed,
                             int workers = 0);

}  // namespace fbsde
