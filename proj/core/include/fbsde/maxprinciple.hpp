#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "fbsde/adjoint.hpp"
#include "fbsde/bsde.hpp"
#include "fbsde/model.hpp"

namespace fbsde {

// H(t,x,y,z,u,p,q,P) with reference point (ref_x, ref_u):
//   <p, b(t,x,u)> + <q, sigma(t,x,u)>
//   + 1/2 <P (sigma(t,x,u) - sigma(t,ref_x,ref_u)), sigma(t,x,u) - sigma(t,ref_x,ref_u)>
//   + f(t, x, y, z + <p, sigma(t,x,u) - sigma(t,ref_x,ref_u)>, u).
double hamiltonian(const ModelSpec& spec, double t, const Vec& x, double y, double z,
                   const Vec& u, const Vec& p, const Vec& q, const Mat& P, const Vec& ref_x,
                   const Vec& ref_u);

// Constrained version:
//   <p0 + gamma p, b> + <q0 + gamma q, sigma>
//   + 1/2 <(P0 + gamma P) dsig, dsig> + gamma f(t, x, y, z + <p, dsig>, u).
double constrained_hamiltonian(const ModelSpec& spec, double t, const Vec& x, double y, double z,
                               const Vec& u, const Vec& ref_x, const Vec& ref_u, const Vec& p0,
                               const Vec& q0, const Mat& P0, const Vec& p, const Vec& q,
                               const Mat& P, double gamma);

struct MPTolerance {
    double abs = 1e-12;   // absolute floor
    double se_mult = 3.0;  // cells below -(abs + se_mult * se) count as violations
};

struct MPCell {
    double mean = 0.0;
    double se = 0.0;
    double min = 0.0;
    std::int64_t argmin_path = 0;
};

struct MPReport {
    std::string benchmark;
    std::int64_t N = 0;
    std::int64_t nodes = 0;  // grid.nodes()
    std::vector<Vec> control_grid;
    // Node-major cells: index node * control_grid.size() + u_index.
    std::vector<MPCell> delta_h;
    std::vector<MPCell> first_order;  // f_z(t) <p, dsig_u>, the weaker test
    double worst = 0.0;
    std::int64_t worst_node = 0, worst_path = 0;
    int worst_control = 0;
    std::int64_t violation_cells = 0;  // (node, path) cells with min_u below tolerance
    std::int64_t total_cells = 0;
    MPTolerance tol;

    bool pass() const { return violation_cells == 0; }
    const MPCell& cell(std::int64_t node, int u_index) const {
        return delta_h[static_cast<std::size_t>(node * static_cast<std::int64_t>(control_grid.size()) + u_index)];
    }
    std::string to_json() const;
    void write_csv(std::ostream& os) const;
};

// Evaluates dH(u) = H(..., u, ...) - H(..., ubar(t), ...) over the control
// grid on every (node, path) cell. The self-comparison cell is exactly zero.
MPReport check_mp(const ModelSpec& spec, const BaseSolution& base,
                  const AdjointProcesses& adjoints, const std::vector<Vec>& control_grid,
                  const MPTolerance& tol, int workers = 0);

// Convex-domain corollary: cells hold
//   < b_u^T p + sigma_u^T q + f_z sigma_u^T p + f_u, u - ubar(t) >.
// Requires the spec's u-derivatives.
MPReport check_convex_corollary(const ModelSpec& spec, const BaseSolution& base,
                                const AdjointProcesses& adjoints,
                                const std::vector<Vec>& control_grid, const MPTolerance& tol,
                                int workers = 0);

struct ConstrainedScanPoint {
    double lambda = 0.0, mu = 0.0;
    double worst = 0.0;
};

struct ConstrainedMPReport {
    double feasibility_residual = 0.0, feasibility_se = 0.0;
    bool feasible = true;
    double phi_y_mean = 0.0;  // E[phi_y(x(T), y(0))], enters gamma(0)
    double best_lambda = 1.0, best_mu = 0.0;
    std::vector<ConstrainedScanPoint> scan;
    MPReport at_best;  // gamma-normalized cells at the certifying pair
    std::string to_json() const;
};

struct ConstrainedMPOptions {
    int circle_points = 720;
    MPTolerance tol;
    SolverOptions solver;
    int workers = 0;
};

// Scans (lambda, mu) over the unit circle, using that the constrained
// adjoints are linear in mu (solved once at mu = 1 and scaled) and gamma is
// gamma(0) times a fixed positive exponential factor. Returns the pair with
// the least-negative worst cell and the full report there.
ConstrainedMPReport check_constrained_mp(const ModelSpec& spec, const BaseSolution& base,
                                         const NoiseEnsemble& noise,
                                         const std::vector<Vec>& control_grid,
                                         const ConstrainedMPOptions& opts);

// Full constrained report at one (lambda, mu). Cells are divided by
// |gamma(t)| when gamma(0) != 0 (sign-preserving), which makes the vacuous
// constraint at (1, 0) reproduce the unconstrained report exactly.
MPReport check_constrained_at(const ModelSpec& spec, const BaseSolution& base,
                              const NoiseEnsemble& noise, double lambda, double mu,
                              const std::vector<Vec>& control_grid,
                              const ConstrainedMPOptions& opts);

}  // namespace fbsde
