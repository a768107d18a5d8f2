#pragma once

#include "fbsde/bsde.hpp"
#include "fbsde/model.hpp"
#include "fbsde/noise.hpp"

namespace fbsde {

// First-order adjoint (p, q): componentwise backward regression solve of
//   -dp = { f_y p + [f_z sigma_x^T + b_x^T] p + f_z q + sigma_x^T q + f_x } dt - q dW,
//   p(T) = phi_x(x(T)).
FirstAdjoint solve_p_q(const ModelSpec& spec, const BaseSolution& base,
                       const NoiseEnsemble& noise, const SolverOptions& opts);

struct SecondAdjointOptions {
    // Replace P by its symmetric part after every step. Off by default: the
    // raw entry-wise solve is kept honest and asymmetry is measured instead.
    bool symmetrize_each_step = false;
};

// Second-order adjoint (P, Q), entry-wise with shared regression features.
SecondAdjoint solve_P_Q(const ModelSpec& spec, const BaseSolution& base, const FirstAdjoint& pq,
                        const NoiseEnsemble& noise, const SolverOptions& opts,
                        const SecondAdjointOptions& sopts = {});

// Constrained-problem adjoints (p0, q0), (P0, Q0): f-free drivers, terminal
// data mu-scaled constraint derivatives at (x(T), y(0)).
AdjointProcesses solve_constrained_adjoints(const ModelSpec& spec, const BaseSolution& base,
                                            double mu, const NoiseEnsemble& noise,
                                            const SolverOptions& opts);

// Driver of the (p, q) equation at one point; reference implementation for
// tests of the hot-path assembly.
Vec first_adjoint_driver(const CoeffBundle& c, const Vec& p, const Vec& q);

// Terms of the (P, Q) driver, selectable by bitmask so tests can pin each
// group separately:
//   bit 0: f_y P
//   bit 1: [f_z sigma_x^T + b_x^T] P + P [f_z sigma_x + b_x]
//   bit 2: sigma_x^T P sigma_x
//   bit 3: f_z Q
//   bit 4: sigma_x^T Q + Q sigma_x
//   bit 5: b_xx^T p        (sum_i p^i b_xx^i)
//   bit 6: sigma_xx^T [f_z p + q]
//   bit 7: [I, p, sigma_x^T p + q] D2f [I, p, sigma_x^T p + q]^T
Mat second_adjoint_driver_terms(const CoeffBundle& c, const Vec& p, const Vec& q, const Mat& P,
                                const Mat& Q, unsigned mask = ~0u);

// Largest deviation from symmetry of the P component over all paths/nodes.
double max_asymmetry(const TrajectoryEnsemble& P, int n);

}  // namespace fbsde
