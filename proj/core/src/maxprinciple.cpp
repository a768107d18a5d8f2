#include "fbsde/maxprinciple.hpp"

#include <cmath>
#include <ostream>

#include <json.hpp>

#include "fbsde/adjoint.hpp"
#include "fbsde/forward.hpp"
#include "tracks.hpp"

namespace fbsde {

double hamiltonian(const ModelSpec& spec, double t, const Vec& x, double y, double z,
                   const Vec& u, const Vec& p, const Vec& q, const Mat& P, const Vec& ref_x,
                   const Vec& ref_u) {
    spec.check_dims(x, u);
    Vec b(spec.n), sig(spec.n), sig_ref(spec.n);
    spec.drift(t, x, u, b);
    spec.diffusion(t, x, u, sig);
    spec.diffusion(t, ref_x, ref_u, sig_ref);
    Vec dsig = sig - sig_ref;
    return p.dot(b) + q.dot(sig) + 0.5 * dsig.dot(P * dsig) +
           spec.driver(t, x, y, z + p.dot(dsig), u);
}

double constrained_hamiltonian(const ModelSpec& spec, double t, const Vec& x, double y, double z,
                               const Vec& u, const Vec& ref_x, const Vec& ref_u, const Vec& p0,
                               const Vec& q0, const Mat& P0, const Vec& p, const Vec& q,
                               const Mat& P, double gamma) {
    spec.check_dims(x, u);
    Vec b(spec.n), sig(spec.n), sig_ref(spec.n);
    spec.drift(t, x, u, b);
    spec.diffusion(t, x, u, sig);
    spec.diffusion(t, ref_x, ref_u, sig_ref);
    Vec dsig = sig - sig_ref;
    return (p0 + gamma * p).dot(b) + (q0 + gamma * q).dot(sig) +
           0.5 * dsig.dot((P0 + gamma * P) * dsig) +
           gamma * spec.driver(t, x, y, z + p.dot(dsig), u);
}

namespace {

struct CellAccumulator {
    // One pass per control point: mean/se/min across paths, then violation
    // flags against -(abs + se_mult * se).
    static MPCell summarize(const Eigen::VectorXd& vals) {
        MPCell cell;
        auto ms = mean_se(vals);
        cell.mean = ms.mean;
        cell.se = ms.se;
        std::int64_t arg = 0;
        cell.min = vals.minCoeff(&arg);
        cell.argmin_path = arg;
        return cell;
    }
};

// Shared grid walk for the unconstrained / constrained / corollary checks.
// eval(node, u_idx, values) fills the per-path cell column.
template <class EvalFn, class FirstOrderFn>
MPReport grid_check(const ModelSpec& spec, const BaseSolution& base,
                    const std::vector<Vec>& control_grid, const MPTolerance& tol, int workers,
                    EvalFn&& eval, FirstOrderFn&& first_order, bool with_first_order) {
    if (control_grid.empty()) throw std::invalid_argument("check_mp: empty control grid");
    const TimeGrid& grid = base.x.grid;
    const std::int64_t N = base.x.N;
    const auto U = static_cast<std::int64_t>(control_grid.size());

    MPReport rep;
    rep.benchmark = spec.name;
    rep.N = N;
    rep.nodes = grid.nodes();
    rep.control_grid = control_grid;
    rep.tol = tol;
    rep.delta_h.resize(static_cast<std::size_t>(grid.nodes() * U));
    if (with_first_order) rep.first_order.resize(static_cast<std::size_t>(grid.nodes() * U));
    rep.total_cells = grid.nodes() * N;
    rep.worst = std::numeric_limits<double>::infinity();

    Eigen::VectorXd vals(N), fo(N);
    std::vector<char> flagged(static_cast<std::size_t>(N));
    for (std::int64_t node = 0; node < grid.nodes(); ++node) {
        std::fill(flagged.begin(), flagged.end(), 0);
        for (std::int64_t ui = 0; ui < U; ++ui) {
            eval(node, ui, vals);
            MPCell cell = CellAccumulator::summarize(vals);
            rep.delta_h[static_cast<std::size_t>(node * U + ui)] = cell;
            const double tau = tol.abs + tol.se_mult * cell.se;
            for (std::int64_t r = 0; r < N; ++r)
                if (vals[r] < -tau) flagged[static_cast<std::size_t>(r)] = 1;
            if (cell.min < rep.worst) {
                rep.worst = cell.min;
                rep.worst_node = node;
                rep.worst_path = cell.argmin_path;
                rep.worst_control = static_cast<int>(ui);
            }
            if (with_first_order) {
                first_order(node, ui, fo);
                rep.first_order[static_cast<std::size_t>(node * U + ui)] =
                    CellAccumulator::summarize(fo);
            }
        }
        for (std::int64_t r = 0; r < N; ++r)
            if (flagged[static_cast<std::size_t>(r)]) ++rep.violation_cells;
    }
    (void)workers;
    return rep;
}

}  // namespace

MPReport check_mp(const ModelSpec& spec, const BaseSolution& base,
                  const AdjointProcesses& adjoints, const std::vector<Vec>& control_grid,
                  const MPTolerance& tol, int workers) {
    const TimeGrid& grid = base.x.grid;
    const std::int64_t N = base.x.N;
    const int n = spec.n;
    auto cache = detail::make_cache(spec, grid, N, workers,
                                    detail::source_from_ensemble(base.x, 0, N),
                                    detail::source_from_ensemble(base.y, 0, N),
                                    detail::source_from_ensemble(base.z, 0, N), base.policy);

    Eigen::MatrixXd pbuf, qbuf, Pbuf, tmp;
    std::int64_t cached_node = -1;
    auto load_node = [&](std::int64_t node) {
        if (cached_node == node) return;
        cached_node = node;
        cache->ensure(node);
        detail::source_from_ensemble(adjoints.first.p, 0, N)(node, tmp);
        pbuf = tmp.transpose();
        detail::source_from_ensemble(adjoints.first.q, 0, N)(node, tmp);
        qbuf = tmp.transpose();
        detail::source_from_ensemble(adjoints.second.P, 0, N)(node, tmp);
        Pbuf = tmp.transpose();
    };

    auto eval = [&](std::int64_t node, std::int64_t ui, Eigen::VectorXd& out) {
        load_node(node);
        const Vec& u = control_grid[static_cast<std::size_t>(ui)];
        const Vec& ubar = cache->u_nodes[static_cast<std::size_t>(node)];
        const double t = grid.time(node);
        for_each_block(N, workers, [&](std::int64_t, std::int64_t b, std::int64_t e) {
            Vec bu(n), bbar(n), su(n), sbar(n), dsig(n);
            for (std::int64_t r = b; r < e; ++r) {
                auto x = cache->xbuf.col(r);
                Eigen::Map<const detail::RowMat> P(&Pbuf(0, r), n, n);
                spec.drift(t, x, u, bu);
                spec.drift(t, x, ubar, bbar);
                spec.diffusion(t, x, u, su);
                spec.diffusion(t, x, ubar, sbar);
                dsig = su - sbar;
                const double pds = pbuf.col(r).dot(dsig);
                out[r] = pbuf.col(r).dot(bu - bbar) + qbuf.col(r).dot(dsig) +
                         0.5 * dsig.dot(P * dsig) +
                         spec.driver(t, x, cache->ybar[r], cache->zbar[r] + pds, u) - cache->f0[r];
            }
        });
    };
    auto first_order = [&](std::int64_t node, std::int64_t ui, Eigen::VectorXd& out) {
        load_node(node);
        const Vec& u = control_grid[static_cast<std::size_t>(ui)];
        const Vec& ubar = cache->u_nodes[static_cast<std::size_t>(node)];
        const double t = grid.time(node);
        for_each_block(N, workers, [&](std::int64_t, std::int64_t b, std::int64_t e) {
            Vec su(n), sbar(n);
            for (std::int64_t r = b; r < e; ++r) {
                auto x = cache->xbuf.col(r);
                spec.diffusion(t, x, u, su);
                spec.diffusion(t, x, ubar, sbar);
                out[r] = cache->fz[r] * pbuf.col(r).dot(su - sbar);
            }
        });
    };
    return grid_check(spec, base, control_grid, tol, workers, eval, first_order, true);
}

MPReport check_convex_corollary(const ModelSpec& spec, const BaseSolution& base,
                                const AdjointProcesses& adjoints,
                                const std::vector<Vec>& control_grid, const MPTolerance& tol,
                                int workers) {
    if (!spec.has_control_derivatives)
        throw std::invalid_argument("check_convex_corollary: spec lacks u-derivatives");
    const TimeGrid& grid = base.x.grid;
    const std::int64_t N = base.x.N;
    const int n = spec.n, k = spec.k;
    auto cache = detail::make_cache(spec, grid, N, workers,
                                    detail::source_from_ensemble(base.x, 0, N),
                                    detail::source_from_ensemble(base.y, 0, N),
                                    detail::source_from_ensemble(base.z, 0, N), base.policy);

    Eigen::MatrixXd pbuf, qbuf, tmp;
    std::int64_t cached_node = -1;
    auto load_node = [&](std::int64_t node) {
        if (cached_node == node) return;
        cached_node = node;
        cache->ensure(node);
        detail::source_from_ensemble(adjoints.first.p, 0, N)(node, tmp);
        pbuf = tmp.transpose();
        detail::source_from_ensemble(adjoints.first.q, 0, N)(node, tmp);
        qbuf = tmp.transpose();
    };

    auto eval = [&](std::int64_t node, std::int64_t ui, Eigen::VectorXd& out) {
        load_node(node);
        const Vec& u = control_grid[static_cast<std::size_t>(ui)];
        const Vec& ubar = cache->u_nodes[static_cast<std::size_t>(node)];
        const double t = grid.time(node);
        for_each_block(N, workers, [&](std::int64_t, std::int64_t b, std::int64_t e) {
            Mat bu(n, k), su(n, k);
            Vec fu(k), g(k);
            for (std::int64_t r = b; r < e; ++r) {
                auto x = cache->xbuf.col(r);
                spec.drift_ctrl_jac(t, x, ubar, bu);
                spec.diffusion_ctrl_jac(t, x, ubar, su);
                spec.driver_ctrl_grad(t, x, cache->ybar[r], cache->zbar[r], ubar, fu);
                g = bu.transpose() * pbuf.col(r) + su.transpose() * qbuf.col(r) +
                    cache->fz[r] * (su.transpose() * pbuf.col(r)) + fu;
                out[r] = g.dot(u - ubar);
            }
        });
    };
    auto noop = [](std::int64_t, std::int64_t, Eigen::VectorXd&) {};
    return grid_check(spec, base, control_grid, tol, workers, eval, noop, false);
}

namespace {

// Path arrays behind the constrained scan: at each (node, u),
//   dH_c = mu * A + gamma0 * E .* B
// with A the (p0, q0, P0)-part at mu = 1 and B the unconstrained part.
struct ConstrainedParts {
    const ModelSpec* spec;
    detail::CachePtr cache;
    const AdjointProcesses* adj;       // unconstrained (p, q, P, Q)
    const AdjointProcesses* adj0;      // constrained at mu = 1
    const TrajectoryEnsemble* efactor;  // gamma with gamma(0) = 1
    std::int64_t N;
    int workers;
    Eigen::MatrixXd pbuf, qbuf, Pbuf, p0buf, q0buf, P0buf, tmp;
    std::int64_t cached_node = -1;

    void load(std::int64_t node) {
        if (cached_node == node) return;
        cached_node = node;
        cache->ensure(node);
        auto grab = [&](const TrajectoryEnsemble& ens, Eigen::MatrixXd& dst) {
            detail::source_from_ensemble(ens, 0, N)(node, tmp);
            dst = tmp.transpose();
        };
        grab(adj->first.p, pbuf);
        grab(adj->first.q, qbuf);
        grab(adj->second.P, Pbuf);
        grab(adj0->first.p, p0buf);
        grab(adj0->first.q, q0buf);
        grab(adj0->second.P, P0buf);
    }

    void eval(std::int64_t node, const Vec& u, Eigen::VectorXd& a_part,
              Eigen::VectorXd& b_part) {
        load(node);
        const int n = spec->n;
        const Vec& ubar = cache->u_nodes[static_cast<std::size_t>(node)];
        const double t = cache->grid->time(node);
        a_part.resize(N);
        b_part.resize(N);
        for_each_block(N, workers, [&](std::int64_t, std::int64_t b, std::int64_t e) {
            Vec bu(n), bbar(n), su(n), sbar(n), dsig(n);
            for (std::int64_t r = b; r < e; ++r) {
                auto x = cache->xbuf.col(r);
                Eigen::Map<const detail::RowMat> P(&Pbuf(0, r), n, n);
                Eigen::Map<const detail::RowMat> P0(&P0buf(0, r), n, n);
                spec->drift(t, x, u, bu);
                spec->drift(t, x, ubar, bbar);
                spec->diffusion(t, x, u, su);
                spec->diffusion(t, x, ubar, sbar);
                dsig = su - sbar;
                const double pds = pbuf.col(r).dot(dsig);
                bu -= bbar;
                a_part[r] = p0buf.col(r).dot(bu) + q0buf.col(r).dot(dsig) +
                            0.5 * dsig.dot(P0 * dsig);
                b_part[r] = pbuf.col(r).dot(bu) + qbuf.col(r).dot(dsig) +
                            0.5 * dsig.dot(P * dsig) +
                            spec->driver(t, x, cache->ybar[r], cache->zbar[r] + pds, u) -
                            cache->f0[r];
            }
        });
    }
};

}  // namespace

MPReport check_constrained_at(const ModelSpec& spec, const BaseSolution& base,
                              const NoiseEnsemble& noise, double lambda, double mu,
                              const std::vector<Vec>& control_grid,
                              const ConstrainedMPOptions& opts) {
    if (!spec.has_constraint)
        throw std::invalid_argument("check_constrained_at: spec has no constraint");
    const std::int64_t N = base.x.N;
    auto adj_pq = solve_p_q(spec, base, noise, opts.solver);
    auto adj_PQ = solve_P_Q(spec, base, adj_pq, noise, opts.solver);
    AdjointProcesses adj{std::move(adj_pq), std::move(adj_PQ)};
    AdjointProcesses adj0 = solve_constrained_adjoints(spec, base, 1.0, noise, opts.solver);
    TrajectoryEnsemble efactor = simulate_gamma(spec, base.x, base.y, base.z, base.policy, noise,
                                                1.0, false, opts.workers);

    // Mean of phi_y at the terminal pair, part of gamma(0).
    Eigen::VectorXd phiy(N);
    {
        Vec x(spec.n);
        for (std::int64_t r = 0; r < N; ++r) {
            for (int c = 0; c < spec.n; ++c)
                x[c] = base.x.components[static_cast<std::size_t>(c)](r, base.x.grid.M);
            phiy[r] = spec.constraint_grad_y(x, base.y0);
        }
    }
    const double gamma0 = lambda + mu * mean_se(phiy).mean;

    ConstrainedParts parts{&spec,
                           detail::make_cache(spec, base.x.grid, N, opts.workers,
                                              detail::source_from_ensemble(base.x, 0, N),
                                              detail::source_from_ensemble(base.y, 0, N),
                                              detail::source_from_ensemble(base.z, 0, N),
                                              base.policy),
                           &adj,
                           &adj0,
                           &efactor,
                           N,
                           opts.workers,
                           {}, {}, {}, {}, {}, {}, {},
                           -1};

    Eigen::VectorXd a_part(N), b_part(N);
    auto eval = [&](std::int64_t node, std::int64_t ui, Eigen::VectorXd& out) {
        parts.eval(node, control_grid[static_cast<std::size_t>(ui)], a_part, b_part);
        auto efac = efactor.components[0].col(node);
        out = mu * a_part + gamma0 * efac.cwiseProduct(b_part);
        if (gamma0 != 0.0) {
            // Sign-preserving normalization by |gamma(t)|; with the vacuous
            // constraint and (lambda, mu) = (1, 0) this reproduces the
            // unconstrained report cell-by-cell.
            out.array() /= (std::abs(gamma0) * efac.array());
        }
    };
    auto noop = [](std::int64_t, std::int64_t, Eigen::VectorXd&) {};
    MPReport rep = grid_check(spec, base, control_grid, opts.tol, opts.workers, eval, noop,
                              false);
    rep.benchmark = spec.name + " (constrained)";
    return rep;
}

ConstrainedMPReport check_constrained_mp(const ModelSpec& spec, const BaseSolution& base,
                                         const NoiseEnsemble& noise,
                                         const std::vector<Vec>& control_grid,
                                         const ConstrainedMPOptions& opts) {
    if (!spec.has_constraint)
        throw std::invalid_argument("check_constrained_mp: spec has no constraint");
    if (control_grid.empty())
        throw std::invalid_argument("check_constrained_mp: empty control grid");
    const std::int64_t N = base.x.N;
    ConstrainedMPReport out;

    // Candidate feasibility: E[phi(x(T), y(0))] within MC error of zero.
    Eigen::VectorXd phi_vals(N), phiy(N);
    {
        Vec x(spec.n);
        for (std::int64_t r = 0; r < N; ++r) {
            for (int c = 0; c < spec.n; ++c)
                x[c] = base.x.components[static_cast<std::size_t>(c)](r, base.x.grid.M);
            phi_vals[r] = spec.constraint(x, base.y0);
            phiy[r] = spec.constraint_grad_y(x, base.y0);
        }
    }
    auto feas = mean_se(phi_vals);
    out.feasibility_residual = feas.mean;
    out.feasibility_se = feas.se;
    out.feasible = std::abs(feas.mean) <= 3.0 * feas.se + 1e-14;
    out.phi_y_mean = mean_se(phiy).mean;

    auto adj_pq = solve_p_q(spec, base, noise, opts.solver);
    auto adj_PQ = solve_P_Q(spec, base, adj_pq, noise, opts.solver);
    AdjointProcesses adj{std::move(adj_pq), std::move(adj_PQ)};
    AdjointProcesses adj0 = solve_constrained_adjoints(spec, base, 1.0, noise, opts.solver);
    TrajectoryEnsemble efactor = simulate_gamma(spec, base.x, base.y, base.z, base.policy, noise,
                                                1.0, false, opts.workers);

    ConstrainedParts parts{&spec,
                           detail::make_cache(spec, base.x.grid, N, opts.workers,
                                              detail::source_from_ensemble(base.x, 0, N),
                                              detail::source_from_ensemble(base.y, 0, N),
                                              detail::source_from_ensemble(base.z, 0, N),
                                              base.policy),
                           &adj,
                           &adj0,
                           &efactor,
                           N,
                           opts.workers,
                           {}, {}, {}, {}, {}, {}, {},
                           -1};

    const int L = opts.circle_points;
    out.scan.resize(static_cast<std::size_t>(L));
    for (int l = 0; l < L; ++l) {
        const double theta = 2.0 * M_PI * static_cast<double>(l) / static_cast<double>(L);
        out.scan[static_cast<std::size_t>(l)] = {std::cos(theta), std::sin(theta),
                                                 std::numeric_limits<double>::infinity()};
    }

    Eigen::VectorXd a_part(N), b_part(N), combo(N);
    for (std::int64_t node = 0; node < base.x.grid.nodes(); ++node) {
        auto efac = efactor.components[0].col(node);
        for (std::size_t ui = 0; ui < control_grid.size(); ++ui) {
            parts.eval(node, control_grid[ui], a_part, b_part);
            Eigen::VectorXd eb = efac.cwiseProduct(b_part);
            for (auto& pt : out.scan) {
                const double gamma0 = pt.lambda + pt.mu * out.phi_y_mean;
                combo = pt.mu * a_part + gamma0 * eb;
                pt.worst = std::min(pt.worst, combo.minCoeff());
            }
        }
    }
    const ConstrainedScanPoint* best = &out.scan.front();
    for (const auto& pt : out.scan)
        if (pt.worst > best->worst) best = &pt;
    out.best_lambda = best->lambda;
    out.best_mu = best->mu;
    out.at_best = check_constrained_at(spec, base, noise, best->lambda, best->mu, control_grid,
                                       opts);
    return out;
}

std::string MPReport::to_json() const {
    nlohmann::ordered_json j;
    j["benchmark"] = benchmark;
    j["N"] = N;
    j["nodes"] = nodes;
    j["controls"] = control_grid.size();
    j["worst_delta_h"] = worst;
    j["worst_node"] = worst_node;
    j["worst_path"] = worst_path;
    j["worst_control"] = worst_control;
    j["violation_cells"] = violation_cells;
    j["total_cells"] = total_cells;
    j["violation_fraction"] =
        total_cells ? static_cast<double>(violation_cells) / static_cast<double>(total_cells) : 0.0;
    j["tol_abs"] = tol.abs;
    j["tol_se_mult"] = tol.se_mult;
    j["pass"] = pass();
    return j.dump(2);
}

void MPReport::write_csv(std::ostream& os) const {
    os << "node,u_index,u0,mean,se,min,argmin_path";
    const bool fo = !first_order.empty();
    if (fo) os << ",first_order_mean,first_order_se,first_order_min";
    os << "\n";
    char buf[32];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << buf;
    };
    const auto U = static_cast<std::int64_t>(control_grid.size());
    for (std::int64_t node = 0; node < nodes; ++node) {
        for (std::int64_t ui = 0; ui < U; ++ui) {
            const auto& c = delta_h[static_cast<std::size_t>(node * U + ui)];
            os << node << ',' << ui << ',';
            put(control_grid[static_cast<std::size_t>(ui)][0]);
            os << ',';
            put(c.mean);
            os << ',';
            put(c.se);
            os << ',';
            put(c.min);
            os << ',' << c.argmin_path;
            if (fo) {
                const auto& f = first_order[static_cast<std::size_t>(node * U + ui)];
                os << ',';
                put(f.mean);
                os << ',';
                put(f.se);
                os << ',';
                put(f.min);
            }
            os << "\n";
        }
    }
}

std::string ConstrainedMPReport::to_json() const {
    nlohmann::ordered_json j;
    j["feasibility_residual"] = feasibility_residual;
    j["feasibility_se"] = feasibility_se;
    j["feasible"] = feasible;
    j["phi_y_mean"] = phi_y_mean;
    j["best_lambda"] = best_lambda;
    j["best_mu"] = best_mu;
    j["best_worst_cell"] = at_best.worst;
    j["pass"] = at_best.pass();
    j["scan_points"] = scan.size();
    return j.dump(2);
}

}  // namespace fbsde
