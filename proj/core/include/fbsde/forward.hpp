#pragma once

#include "fbsde/model.hpp"
#include "fbsde/noise.hpp"
#include "fbsde/trajectory.hpp"

namespace fbsde {

// Euler-Maruyama for the controlled state equation:
//   x_{i+1} = x_i + b(t_i, x_i, u_i) dt + sigma(t_i, x_i, u_i) dW_i.
// Aborts with a path/step diagnostic if the state leaves the finite range.
TrajectoryEnsemble simulate_forward(const ModelSpec& spec, const ControlPolicy& policy,
                                    const NoiseEnsemble& noise, int workers = 0);

struct X1Options {
    // Fault injection for order-study self tests: flips the sign of the
    // delta-sigma forcing, which collapses the first-order expansion.
    bool negate_delta_sigma = false;
};

// First variational process, driven by the base trajectory:
//   dx1 = b_x(t) x1 dt + { sigma_x(t) x1 + delta_sigma(t) 1_E(t) } dW,  x1(0)=0,
// where delta_sigma(t) = sigma(t, xbar(t), u_spike) - sigma(t, xbar(t), ubar(t)).
TrajectoryEnsemble simulate_x1(const ModelSpec& spec, const TrajectoryEnsemble& base,
                               const ControlPolicy& base_policy, const SpikeConfig& spike,
                               const NoiseEnsemble& noise, const X1Options& opts = {},
                               int workers = 0);

// Second variational process:
//   dx2 = { b_x x2 + delta_b 1_E + 1/2 b_xx x1 x1 } dt
//       + { sigma_x x2 + delta_sigma_x x1 1_E + 1/2 sigma_xx x1 x1 } dW,  x2(0)=0,
// with (b_xx x1 x1)^i = x1^T b_xx^i x1 (trace form), likewise for sigma_xx.
TrajectoryEnsemble simulate_x2(const ModelSpec& spec, const TrajectoryEnsemble& base,
                               const ControlPolicy& base_policy, const TrajectoryEnsemble& x1,
                               const SpikeConfig& spike, const NoiseEnsemble& noise,
                               int workers = 0);

// Exponential adjoint dgamma = f_y(t) gamma dt + f_z(t) gamma dW, advanced in
// log space: gamma_{i+1} = gamma_i * exp((f_y - f_z^2/2) dt + f_z dW_i). The
// sign of gamma0 is preserved exactly; gamma0 <= 0 is rejected unless
// allow_any_sign is set (the constrained problem needs general initial data).
TrajectoryEnsemble simulate_gamma(const ModelSpec& spec, const TrajectoryEnsemble& base_x,
                                  const TrajectoryEnsemble& base_y,
                                  const TrajectoryEnsemble& base_z,
                                  const ControlPolicy& base_policy, const NoiseEnsemble& noise,
                                  double gamma0, bool allow_any_sign = false, int workers = 0);

// Spike interval [s, s+eps) snapped to grid nodes; throws if s or eps is not
// grid-aligned or the interval leaves [0, T]. Returns {first_node, node_count}.
std::pair<std::int64_t, std::int64_t> spike_node_range(const TimeGrid& grid,
                                                       const SpikeConfig& spike);

}  // namespace fbsde
