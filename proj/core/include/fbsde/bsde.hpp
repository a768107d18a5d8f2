#pragma once

#include "fbsde/model.hpp"
#include "fbsde/noise.hpp"
#include "fbsde/regression.hpp"
#include "fbsde/stats.hpp"
#include "fbsde/trajectory.hpp"

namespace fbsde {

struct SolverOptions {
    RegressionBasis basis;
    int fixed_point_iters = 5;
    double fixed_point_tol = 1e-12;
    int workers = 0;
    // When > 0, y(0) gets a batch-means standard error from this many
    // contiguous path batches solved independently.
    int se_batches = 0;
    double guard_ratio = 20.0;
};

struct SolverDiagnostics {
    double worst_condition = 1.0;
    int max_fp_iterations = 0;
};

struct BsdeSolution {
    TrajectoryEnsemble y;  // scalar
    TrajectoryEnsemble z;  // scalar; node M entry is 0 by convention
    double y0 = 0.0;
    double y0_se = 0.0;  // 0 unless se_batches was set
    RegressionBasis basis;
    SolverDiagnostics diag;
};

// View of the data along a candidate control, shared by the adjoint and
// variational solvers.
struct BaseSolution {
    const TrajectoryEnsemble& x;
    const TrajectoryEnsemble& y;
    const TrajectoryEnsemble& z;
    const ControlPolicy& policy;
    double y0 = 0.0;
};

struct FirstAdjoint {
    TrajectoryEnsemble p, q;  // dim n
    SolverDiagnostics diag;
};
struct SecondAdjoint {
    TrajectoryEnsemble P, Q;  // dim n*n, component (i, j) stored at i*n + j
    SolverDiagnostics diag;
};
struct AdjointProcesses {
    FirstAdjoint first;
    SecondAdjoint second;
};

// Backward Euler + least-squares Monte Carlo for the recursive-cost BSDE
//   y_i = E[y_{i+1} | x_i] + f(t_i, x_i, y_i, z_i, u_i) dt   (implicit in y)
//   z_i = E[y_{i+1} dW_i | x_i] / dt
// with y_M = terminal(x_M) exactly. Regression features are polynomials in
// the forward state.
BsdeSolution solve_bsde(const ModelSpec& spec, const TrajectoryEnsemble& forward,
                        const ControlPolicy& policy, const NoiseEnsemble& noise,
                        const SolverOptions& opts);

// Linear BSDE for the spike variation (yhat, zhat): driver
//   f_y(t) yhat + f_z(t) zhat + forcing(t) 1_E(t),  terminal 0,
// where forcing(t) = <p, db> + <q, dsig> + 1/2 <P dsig, dsig>
//                  + f(t, xbar, ybar, zbar + <p, dsig>, u) - f(t).
// Features are polynomials in (xbar, x1).
BsdeSolution solve_variational_bsde(const ModelSpec& spec, const BaseSolution& base,
                                    const AdjointProcesses& adjoints, const SpikeConfig& spike,
                                    const TrajectoryEnsemble& x1, const NoiseEnsemble& noise,
                                    const SolverOptions& opts);

// Dual estimate of yhat(0): E[ integral of gamma(s) * forcing(s) 1_E(s) ds ]
// with left-endpoint quadrature on the grid. Independent of the backward
// solver; the two estimates are compared in the acceptance tests.
MeanSe hat_y0_via_gamma(const ModelSpec& spec, const BaseSolution& base,
                        const AdjointProcesses& adjoints, const TrajectoryEnsemble& gamma,
                        const SpikeConfig& spike);

// First-order expansion BSDE: driver <f_x, x1> + f_y y + f_z z, terminal
// <phi_x(xbar_T), x1_T>. Features are polynomials in (xbar, x1).
BsdeSolution solve_first_expansion(const ModelSpec& spec, const BaseSolution& base,
                                   const TrajectoryEnsemble& x1, const NoiseEnsemble& noise,
                                   const SolverOptions& opts);

// Second-order expansion BSDE: driver
//   <f_x, x2> + f_y y + f_z z + 1/2 [x1^T, y1t, z1t] D2f [x1^T, y1t, z1t]^T
//   + [ f(t, xbar, ybar, zbar + <p, dsig>, u) - f(t)
//       - f_z(t) <p, dsig> - 1/2 f_zz(t) <p, dsig>^2 ] 1_E(t),
// terminal <phi_x, x2_T> + 1/2 <phi_xx x1_T, x1_T>. Features are polynomials
// in (xbar, x1, x2).
BsdeSolution solve_second_expansion(const ModelSpec& spec, const BaseSolution& base,
                                    const TrajectoryEnsemble& x1, const TrajectoryEnsemble& x2,
                                    const SpikeConfig& spike, const AdjointProcesses& adjoints,
                                    const BsdeSolution& first, const NoiseEnsemble& noise,
                                    const SolverOptions& opts);

}  // namespace fbsde
