#pragma once

#include <string>
#include <vector>

#include "fbsde/benchmarks.hpp"
#include "fbsde/bsde.hpp"
#include "fbsde/model.hpp"
#include "fbsde/noise.hpp"
#include "fbsde/stats.hpp"

namespace fbsde {

// u^eps: the base policy replaced by the constant u on [s, s+eps).
ControlPolicy make_spike_control(const ControlPolicy& base, const SpikeConfig& spike,
                                 const ControlSet& control_set);

// Pathwise first-order reconstruction:
//   y1 = <p, x1>,   z1 = <p, dsig> 1_E + <sigma_x^T p + q, x1>.
struct ReconstructedPair {
    TrajectoryEnsemble y, z;
};
ReconstructedPair reconstruct_y1z1(const ModelSpec& spec, const BaseSolution& base,
                                   const FirstAdjoint& pq, const TrajectoryEnsemble& x1,
                                   const SpikeConfig& spike);

// Pathwise second-order reconstruction:
//   y2 = <p, x2> + 1/2 <P x1, x1> + yhat,
//   z2 = <sigma_x^T p + q, x2>
//      + <dsig_x^T p + 1/2 (P + P^T) dsig, x1> 1_E
//      + 1/2 <[sigma_xx^T p + P sigma_x + sigma_x^T P + Q] x1, x1> + zhat.
ReconstructedPair reconstruct_y2z2(const ModelSpec& spec, const BaseSolution& base,
                                   const FirstAdjoint& pq, const SecondAdjoint& PQ,
                                   const TrajectoryEnsemble& x1, const TrajectoryEnsemble& x2,
                                   const BsdeSolution& hat, const SpikeConfig& spike);

struct OrderPoint {
    double eps = 0.0;
    double residual = 0.0;
    double se = 0.0;
};

struct OrderEstimate {
    std::string label;
    std::vector<OrderPoint> points;  // eps strictly decreasing
    double slope = 0.0;
    double ci_lo = 0.0, ci_hi = 0.0;
    bool inconclusive = false;  // some residual is within its own standard error
    std::string note;
};

// Log-log least squares of residual against eps. Residuals must be positive
// unless the estimate is inconclusive.
OrderEstimate estimate_order(const std::string& label, const std::vector<OrderPoint>& points);

struct StudyConfig {
    std::int64_t N = 10000;
    std::int64_t M = 512;
    std::uint64_t seed = 1;
    double spike_s = 0.0;
    Vec spike_u;                     // defaults to the benchmark's spike_u when empty
    std::vector<double> eps_ladder;  // absolute widths, strictly decreasing, grid-aligned
    SolverOptions solver;
    bool negate_delta_sigma = false;  // fault injection for self tests
    int workers = 0;
    // Regression-noise floors are estimated from two replicate solves on
    // windows of N / replicate_denominator paths. Smaller denominators cost
    // more but give steadier floor estimates.
    int replicate_denominator = 8;
};

// Default dyadic ladder {2^-3, ..., 2^-7} T.
std::vector<double> default_eps_ladder(double T);

struct CrossCheckPoint {
    double eps = 0.0;
    double yhat0_bsde = 0.0;
    double yhat0_bsde_se = 0.0;
    double yhat0_gamma = 0.0;
    double yhat0_gamma_se = 0.0;
};

struct OrderReport {
    std::string benchmark;
    std::int64_t N = 0, M = 0;
    std::uint64_t seed = 0;
    double spike_s = 0.0;
    std::vector<OrderEstimate> estimates;
    std::vector<CrossCheckPoint> cross_checks;
    double base_y0 = 0.0;

    const OrderEstimate* find(const std::string& label) const;
    std::string to_json() const;
    void write_csv(std::ostream& os) const;
};

// Runs the coupled spike-variation study: for every eps on the ladder,
// simulates {x, x^eps, x1, x2} on one noise ensemble, solves the coupled
// BSDEs and adjoints, and accumulates the residuals behind every estimate
// label (est1..est6, vbs1..vbs4, veq123, veq123_z (diagnostic), equivalence) plus the
// two yhat(0) estimators. One seed drives the whole ladder.
OrderReport run_order_study(const Benchmark& bench, const StudyConfig& cfg);

// Fitted-slope thresholds: 0.1 below the integer order for O(.) claims and
// 0.1 above it for o(.) claims.
double slope_threshold(const std::string& label);

struct VerifyOutcome {
    bool pass = true;
    std::vector<std::string> failures;      // conclusive slope below threshold
    std::vector<std::string> inconclusive;  // noise-dominated estimates (warnings)
};
VerifyOutcome verify_order_report(const OrderReport& report);

}  // namespace fbsde
