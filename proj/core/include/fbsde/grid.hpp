#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace fbsde {

// Uniform partition of [0, T] into M steps; nodes t_i = i*T/M.
struct TimeGrid {
    double T = 1.0;
    std::int64_t M = 1;

    TimeGrid() = default;
    TimeGrid(double horizon, std::int64_t steps) : T(horizon), M(steps) {
        if (!(T > 0.0)) throw std::invalid_argument("TimeGrid: horizon must be positive");
        if (M < 1) throw std::invalid_argument("TimeGrid: need at least one step");
    }

    double dt() const { return T / static_cast<double>(M); }
    std::int64_t nodes() const { return M + 1; }
    double time(std::int64_t i) const { return static_cast<double>(i) * T / static_cast<double>(M); }

    // Nearest node index for a time value, or -1 if t is not grid-aligned.
    std::int64_t aligned_node(double t, double rel_tol = 1e-9) const {
        double pos = t / dt();
        auto i = static_cast<std::int64_t>(pos + 0.5);
        if (i < 0 || i > M) return -1;
        if (std::abs(pos - static_cast<double>(i)) > rel_tol * static_cast<double>(M)) return -1;
        return i;
    }

    bool operator==(const TimeGrid& o) const { return T == o.T && M == o.M; }
};

}  // namespace fbsde
