#pragma once

// Track factories for every linear/nonlinear BSDE the library solves. The
// standalone operations and the fused order-study sweep both build their
// tracks here, so each driver has exactly one implementation.

#include <memory>
#include <utility>

#include "engine.hpp"
#include "fbsde/bsde.hpp"
#include "fbsde/forward.hpp"
#include "fbsde/model.hpp"
#include "fbsde/trajectory.hpp"

namespace fbsde::detail {

inline EngineOptions to_engine_options(const SolverOptions& opts) {
    EngineOptions e;
    e.basis = opts.basis;
    e.fixed_point_iters = opts.fixed_point_iters;
    e.fixed_point_tol = opts.fixed_point_tol;
    e.workers = opts.workers;
    e.guard_ratio = opts.guard_ratio;
    return e;
}

// Feature family from a list of processes: the raw variables are the stacked
// components of each process at the node, over paths [begin, begin + rows).
inline FamilyBuilder stacked_features(std::vector<const TrajectoryEnsemble*> procs,
                                      std::int64_t begin, std::int64_t rows) {
    return [procs = std::move(procs), begin, rows](std::int64_t node, Eigen::MatrixXd& raw) {
        int col = 0;
        for (const auto* p : procs)
            for (int c = 0; c < p->dim(); ++c)
                raw.col(col++) =
                    p->components[static_cast<std::size_t>(c)].col(node).segment(begin, rows);
    };
}

// Copies node values of a process into out (rows x dim).
using NodeSource = std::function<void(std::int64_t node, Eigen::MatrixXd& out)>;

inline NodeSource source_from_ensemble(const TrajectoryEnsemble& ens, std::int64_t begin,
                                       std::int64_t rows) {
    return [&ens, begin, rows](std::int64_t node, Eigen::MatrixXd& out) {
        out.resize(rows, ens.dim());
        for (int c = 0; c < ens.dim(); ++c)
            out.col(c) = ens.components[static_cast<std::size_t>(c)].col(node).segment(begin, rows);
    };
}

// Reads another track's current values; valid because tracks are stepped in
// registration order within a node.
inline NodeSource source_from_track_y(const BackwardSweep& sweep, int idx) {
    return [&sweep, idx](std::int64_t, Eigen::MatrixXd& out) { out = sweep.track(idx).y_cur; };
}
inline NodeSource source_from_track_z(const BackwardSweep& sweep, int idx) {
    return [&sweep, idx](std::int64_t, Eigen::MatrixXd& out) { out = sweep.track(idx).z_cur; };
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Coefficients of the spec along the base trajectory at one node, evaluated
// once and shared by all adjoint/variational tracks. Buffers are transposed
// (coefficient dimension x rows) so per-path views are contiguous columns.
// Flattened matrices are row-major: entry (i, j) sits at i*n + j.
struct BaseCoeffCache {
    const ModelSpec* spec = nullptr;
    const TimeGrid* grid = nullptr;
    std::int64_t rows = 0;
    int workers = 0;
    NodeSource x_src, y_src, z_src;
    std::vector<Vec> u_nodes;  // base control per node

    // Spike data (filled only on spike nodes when configured).
    bool spike_enabled = false;
    std::int64_t spike_first = 0, spike_end = 0;
    Vec spike_u;

    std::int64_t stamp = -1;
    Eigen::MatrixXd xbuf;  // n x rows
    Eigen::VectorXd ybar, zbar, fy, fz, f0;
    Eigen::MatrixXd fx;          // n x rows
    Eigen::MatrixXd d2f;         // (n+2)^2 x rows
    Eigen::MatrixXd bx, sx;      // n^2 x rows
    Eigen::MatrixXd bxx, sxx;    // n^3 x rows (Hessian of component i at offset i*n*n)
    bool node_on_spike = false;
    Eigen::MatrixXd db, dsig;    // n x rows
    Eigen::MatrixXd dsigx;       // n^2 x rows

    void configure_spike(const SpikeConfig& spike) {
        auto [first, len] = spike_node_range(*grid, spike);
        spike_enabled = len > 0;
        spike_first = first;
        spike_end = first + len;
        spike_u = spike.u;
    }

    void ensure(std::int64_t node) {
        if (stamp == node) return;
        stamp = node;
        const int n = spec->n;
        const double t = grid->time(node);
        const Vec& ubar = u_nodes[static_cast<std::size_t>(node)];
        xbuf.resize(n, rows);
        ybar.resize(rows);
        zbar.resize(rows);
        fy.resize(rows);
        fz.resize(rows);
        f0.resize(rows);
        fx.resize(n, rows);
        d2f.resize((n + 2) * (n + 2), rows);
        bx.resize(n * n, rows);
        sx.resize(n * n, rows);
        bxx.resize(n * n * n, rows);
        sxx.resize(n * n * n, rows);
        node_on_spike = spike_enabled && node >= spike_first && node < spike_end;
        if (node_on_spike) {
            db.resize(n, rows);
            dsig.resize(n, rows);
            dsigx.resize(n * n, rows);
        }

        Eigen::MatrixXd xrows, yrows, zrows;
        x_src(node, xrows);
        y_src(node, yrows);
        z_src(node, zrows);

        for_each_block(rows, workers, [&](std::int64_t, std::int64_t b, std::int64_t e) {
            Vec grad(n + 2);
            Mat jac(n, n), hess_small(n + 2, n + 2);
            Vec v1(n), v2(n);
            std::vector<Mat> hess(static_cast<std::size_t>(n), Mat(n, n));
            for (std::int64_t r = b; r < e; ++r) {
                for (int c = 0; c < n; ++c) xbuf(c, r) = xrows(r, c);
                auto x = xbuf.col(r);
                const double yv = yrows(r, 0);
                const double zv = zrows(r, 0);
                ybar[r] = yv;
                zbar[r] = zv;
                f0[r] = spec->driver(t, x, yv, zv, ubar);
                spec->driver_grad(t, x, yv, zv, ubar, grad);
                fx.col(r) = grad.head(n);
                fy[r] = grad[n];
                fz[r] = grad[n + 1];
                spec->driver_hess(t, x, yv, zv, ubar, hess_small);
                for (int i = 0; i < n + 2; ++i)
                    for (int j = 0; j < n + 2; ++j) d2f(i * (n + 2) + j, r) = hess_small(i, j);
                spec->drift_jac(t, x, ubar, jac);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) bx(i * n + j, r) = jac(i, j);
                spec->diffusion_jac(t, x, ubar, jac);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) sx(i * n + j, r) = jac(i, j);
                spec->drift_hess(t, x, ubar, hess);
                for (int c = 0; c < n; ++c)
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < n; ++j)
                            bxx(c * n * n + i * n + j, r) = hess[static_cast<std::size_t>(c)](i, j);
                spec->diffusion_hess(t, x, ubar, hess);
                for (int c = 0; c < n; ++c)
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < n; ++j)
                            sxx(c * n * n + i * n + j, r) = hess[static_cast<std::size_t>(c)](i, j);
                if (node_on_spike) {
                    spec->drift(t, x, spike_u, v1);
                    spec->drift(t, x, ubar, v2);
                    db.col(r) = v1 - v2;
                    spec->diffusion(t, x, spike_u, v1);
                    spec->diffusion(t, x, ubar, v2);
                    dsig.col(r) = v1 - v2;
                    spec->diffusion_jac(t, x, spike_u, jac);
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < n; ++j)
                            dsigx(i * n + j, r) = jac(i, j) - sx(i * n + j, r);
                }
            }
        });
    }

    // Views for one path row.
    Eigen::Map<const RowMat> bx_at(std::int64_t r) const {
        return {&bx(0, r), spec->n, spec->n};
    }
    Eigen::Map<const RowMat> sx_at(std::int64_t r) const {
        return {&sx(0, r), spec->n, spec->n};
    }
    Eigen::Map<const RowMat> d2f_at(std::int64_t r) const {
        return {&d2f(0, r), spec->n + 2, spec->n + 2};
    }
    Eigen::Map<const RowMat> bxx_at(std::int64_t r, int comp) const {
        return {&bxx(comp * spec->n * spec->n, r), spec->n, spec->n};
    }
    Eigen::Map<const RowMat> sxx_at(std::int64_t r, int comp) const {
        return {&sxx(comp * spec->n * spec->n, r), spec->n, spec->n};
    }
    double f_zz_at(std::int64_t r) const {
        const int m = spec->n + 2;
        return d2f(m * m - 1, r);
    }
};

using CachePtr = std::shared_ptr<BaseCoeffCache>;

inline CachePtr make_cache(const ModelSpec& spec, const TimeGrid& grid, std::int64_t rows,
                           int workers, NodeSource x_src, NodeSource y_src, NodeSource z_src,
                           const ControlPolicy& base_policy) {
    auto cache = std::make_shared<BaseCoeffCache>();
    cache->spec = &spec;
    cache->grid = &grid;
    cache->rows = rows;
    cache->workers = workers;
    cache->x_src = std::move(x_src);
    cache->y_src = std::move(y_src);
    cache->z_src = std::move(z_src);
    cache->u_nodes.resize(static_cast<std::size_t>(grid.nodes()));
    for (std::int64_t i = 0; i < grid.nodes(); ++i)
        cache->u_nodes[static_cast<std::size_t>(i)] = base_policy(grid.time(i));
    return cache;
}

// ---------------------------------------------------------------------------
// Nonlinear driver track (the recursive-cost BSDE along any control).
// ---------------------------------------------------------------------------

struct DriverTrackWs {
    const ModelSpec* spec;
    const TimeGrid* grid;
    std::int64_t rows;
    NodeSource state;
    std::vector<Vec> u_nodes;
    Eigen::MatrixXd xbuf;  // n x rows
    double t = 0.0;
    const Vec* u = nullptr;
};

inline Track make_driver_bsde_track(const ModelSpec& spec, const TimeGrid& grid,
                                    std::int64_t rows, NodeSource state,
                                    const ControlPolicy& policy, int family,
                                    const std::string& label) {
    auto ws = std::make_shared<DriverTrackWs>();
    ws->spec = &spec;
    ws->grid = &grid;
    ws->rows = rows;
    ws->state = std::move(state);
    ws->u_nodes.resize(static_cast<std::size_t>(grid.nodes()));
    for (std::int64_t i = 0; i < grid.nodes(); ++i)
        ws->u_nodes[static_cast<std::size_t>(i)] = policy(grid.time(i));

    Track t;
    t.label = label;
    t.dim = 1;
    t.family = family;
    t.terminal = [ws](Eigen::MatrixXd& yM) {
        Eigen::MatrixXd xrows;
        ws->state(ws->grid->M, xrows);
        Vec x(ws->spec->n);
        for (std::int64_t r = 0; r < ws->rows; ++r) {
            x = xrows.row(r).transpose();
            yM(r, 0) = ws->spec->terminal(x);
        }
    };
    t.prepare = [ws](std::int64_t node) {
        Eigen::MatrixXd xrows;
        ws->state(node, xrows);
        ws->xbuf = xrows.transpose();
        ws->t = ws->grid->time(node);
        ws->u = &ws->u_nodes[static_cast<std::size_t>(node)];
    };
    t.driver = [ws](std::int64_t r, const double* y, const double* z, double* out) {
        out[0] = ws->spec->driver(ws->t, ws->xbuf.col(r), y[0], z[0], *ws->u);
    };
    return t;
}

// ---------------------------------------------------------------------------
// First-order adjoint (p, q).
// ---------------------------------------------------------------------------

inline Track make_pq_track(CachePtr cache, int family, const std::string& label = "pq") {
    const int n = cache->spec->n;
    Track t;
    t.label = label;
    t.dim = n;
    t.family = family;
    t.terminal = [cache, n](Eigen::MatrixXd& yM) {
        Eigen::MatrixXd xrows;
        cache->x_src(cache->grid->M, xrows);
        Vec x(n), g(n);
        for (std::int64_t r = 0; r < cache->rows; ++r) {
            x = xrows.row(r).transpose();
            cache->spec->terminal_grad(x, g);
            yM.row(r) = g.transpose();
        }
    };
    t.prepare = [cache](std::int64_t node) { cache->ensure(node); };
    t.driver = [cache, n](std::int64_t r, const double* y, const double* z, double* out) {
        Eigen::Map<const Vec> p(y, n), q(z, n);
        Eigen::Map<Vec> o(out, n);
        auto sxT = cache->sx_at(r).transpose();
        o = cache->fy[r] * p + cache->fz[r] * (sxT * p) + cache->bx_at(r).transpose() * p +
            cache->fz[r] * q + sxT * q + cache->fx.col(r);
    };
    return t;
}

// ---------------------------------------------------------------------------
// Second-order adjoint (P, Q); dim n*n, row-major component layout.
// ---------------------------------------------------------------------------

struct PQWs {
    CachePtr cache;
    NodeSource p_src, q_src;
    Eigen::MatrixXd pbuf, qbuf;   // n x rows
    Eigen::MatrixXd a;            // n^2 x rows:  A = f_z sigma_x + b_x
    Eigen::MatrixXd c0;           // n^2 x rows:  terms constant in (P, Q)
};

inline Track make_PQ_track(CachePtr cache, NodeSource p_src, NodeSource q_src, int family,
                           const std::string& label = "PQ") {
    const int n = cache->spec->n;
    auto ws = std::make_shared<PQWs>();
    ws->cache = cache;
    ws->p_src = std::move(p_src);
    ws->q_src = std::move(q_src);

    Track t;
    t.label = label;
    t.dim = n * n;
    t.family = family;
    t.terminal = [cache, n](Eigen::MatrixXd& yM) {
        Eigen::MatrixXd xrows;
        cache->x_src(cache->grid->M, xrows);
        Vec x(n);
        Mat h(n, n);
        for (std::int64_t r = 0; r < cache->rows; ++r) {
            x = xrows.row(r).transpose();
            cache->spec->terminal_hess(x, h);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) yM(r, i * n + j) = h(i, j);
        }
    };
    t.prepare = [ws, n](std::int64_t node) {
        auto& c = *ws->cache;
        c.ensure(node);
        Eigen::MatrixXd prow, qrow;
        ws->p_src(node, prow);
        ws->q_src(node, qrow);
        ws->pbuf = prow.transpose();
        ws->qbuf = qrow.transpose();
        ws->a.resize(n * n, c.rows);
        ws->c0.resize(n * n, c.rows);
        for_each_block(c.rows, c.workers, [&](std::int64_t, std::int64_t b, std::int64_t e) {
            Mat border(n, n + 2), cmat(n, n), quad(n, n);
            for (std::int64_t r = b; r < e; ++r) {
                auto bxm = c.bx_at(r);
                auto sxm = c.sx_at(r);
                Vec p = ws->pbuf.col(r), q = ws->qbuf.col(r);
                // A = f_z sigma_x + b_x
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j)
                        ws->a(i * n + j, r) = c.fz[r] * sxm(i, j) + bxm(i, j);
                // Hessian contractions: sum_i p^i b_xx^i + sum_i (f_z p + q)^i sigma_xx^i.
                cmat.setZero();
                for (int i = 0; i < n; ++i) {
                    cmat += p[i] * c.bxx_at(r, i);
                    cmat += (c.fz[r] * p[i] + q[i]) * c.sxx_at(r, i);
                }
                // Bordered quadratic form [I, p, sigma_x^T p + q] D2f [.]^T.
                border.leftCols(n) = Mat::Identity(n, n);
                border.col(n) = p;
                border.col(n + 1) = sxm.transpose() * p + q;
                quad.noalias() = border * c.d2f_at(r) * border.transpose();
                cmat += quad;
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) ws->c0(i * n + j, r) = cmat(i, j);
            }
        });
    };
    t.driver = [ws, n](std::int64_t r, const double* y, const double* z, double* out) {
        auto& c = *ws->cache;
        Eigen::Map<const RowMat> P(y, n, n), Q(z, n, n);
        Eigen::Map<RowMat> o(out, n, n);
        Eigen::Map<const RowMat> A(&ws->a(0, r), n, n);
        auto sxm = c.sx_at(r);
        o = c.fy[r] * P + A.transpose() * P + P * A + sxm.transpose() * P * sxm +
            c.fz[r] * Q + sxm.transpose() * Q + Q * sxm;
        o += Eigen::Map<const RowMat>(&ws->c0(0, r), n, n);
    };
    return t;
}

// ---------------------------------------------------------------------------
// Constrained-problem adjoints (p0, q0) and (P0, Q0); f-free drivers with
// mu-scaled terminal data from the constraint derivatives at (x(T), y(0)).
// ---------------------------------------------------------------------------

inline Track make_p0_track(CachePtr cache, double mu, double base_y0, int family,
                           const std::string& label = "p0q0") {
    const int n = cache->spec->n;
    Track t;
    t.label = label;
    t.dim = n;
    t.family = family;
    t.terminal = [cache, n, mu, base_y0](Eigen::MatrixXd& yM) {
        Eigen::MatrixXd xrows;
        cache->x_src(cache->grid->M, xrows);
        Vec x(n), g(n);
        for (std::int64_t r = 0; r < cache->rows; ++r) {
            x = xrows.row(r).transpose();
            cache->spec->constraint_grad_x(x, base_y0, g);
            yM.row(r) = mu * g.transpose();
        }
    };
    t.prepare = [cache](std::int64_t node) { cache->ensure(node); };
    t.driver = [cache, n](std::int64_t r, const double* y, const double* z, double* out) {
        Eigen::Map<const Vec> p0(y, n), q0(z, n);
        Eigen::Map<Vec> o(out, n);
        o = cache->bx_at(r).transpose() * p0 + cache->sx_at(r).transpose() * q0;
    };
    return t;
}

struct P0Ws {
    CachePtr cache;
    NodeSource p0_src, q0_src;
    Eigen::MatrixXd p0buf, q0buf;  // n x rows
    Eigen::MatrixXd c0;            // n^2 x rows
};

inline Track make_P0_track(CachePtr cache, NodeSource p0_src, NodeSource q0_src, double mu,
                           double base_y0, int family, const std::string& label = "P0Q0") {
    const int n = cache->spec->n;
    auto ws = std::make_shared<P0Ws>();
    ws->cache = cache;
    ws->p0_src = std::move(p0_src);
    ws->q0_src = std::move(q0_src);

    Track t;
    t.label = label;
    t.dim = n * n;
    t.family = family;
    t.terminal = [cache, n, mu, base_y0](Eigen::MatrixXd& yM) {
        Eigen::MatrixXd xrows;
        cache->x_src(cache->grid->M, xrows);
        Vec x(n);
        Mat h(n, n);
        for (std::int64_t r = 0; r < cache->rows; ++r) {
            x = xrows.row(r).transpose();
            cache->spec->constraint_hess_x(x, base_y0, h);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) yM(r, i * n + j) = mu * h(i, j);
        }
    };
    t.prepare = [ws, n](std::int64_t node) {
        auto& c = *ws->cache;
        c.ensure(node);
        Eigen::MatrixXd prow, qrow;
        ws->p0_src(node, prow);
        ws->q0_src(node, qrow);
        ws->p0buf = prow.transpose();
        ws->q0buf = qrow.transpose();
        ws->c0.resize(n * n, c.rows);
        for_each_block(c.rows, c.workers, [&](std::int64_t, std::int64_t b, std::int64_t e) {
            Mat cmat(n, n);
            for (std::int64_t r = b; r < e; ++r) {
                cmat.setZero();
                for (int i = 0; i < n; ++i) {
                    cmat += ws->p0buf(i, r) * c.bxx_at(r, i);
                    cmat += ws->q0buf(i, r) * c.sxx_at(r, i);
                }
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) ws->c0(i * n + j, r) = cmat(i, j);
            }
        });
    };
    t.driver = [ws, n](std::int64_t r, const double* y, const double* z, double* out) {
        auto& c = *ws->cache;
        Eigen::Map<const RowMat> P0(y, n, n), Q0(z, n, n);
        Eigen::Map<RowMat> o(out, n, n);
        auto bxm = c.bx_at(r);
        auto sxm = c.sx_at(r);
        o = bxm.transpose() * P0 + P0 * bxm + sxm.transpose() * P0 * sxm +
            sxm.transpose() * Q0 + Q0 * sxm;
        o += Eigen::Map<const RowMat>(&ws->c0(0, r), n, n);
    };
    return t;
}

// ---------------------------------------------------------------------------
// Spike forcing shared by the variational BSDE and the gamma representation:
//   <p, db> + <q, dsig> + 1/2 <P dsig, dsig>
//   + f(t, xbar, ybar, zbar + <p, dsig>, u) - f(t, xbar, ybar, zbar, ubar).
// Requires cache->ensure(node) and node_on_spike; otherwise the forcing is 0.
// ---------------------------------------------------------------------------

inline void fill_spike_forcing(const BaseCoeffCache& c, std::int64_t node,
                               const Eigen::MatrixXd& pbuf, const Eigen::MatrixXd& qbuf,
                               const Eigen::MatrixXd& Pbuf, Eigen::VectorXd& out) {
    const int n = c.spec->n;
    out.resize(c.rows);
    if (!c.node_on_spike) {
        out.setZero();
        return;
    }
    const double t = c.grid->time(node);
    for_each_block(c.rows, c.workers, [&](std::int64_t, std::int64_t b, std::int64_t e) {
        for (std::int64_t r = b; r < e; ++r) {
            Eigen::Map<const RowMat> P(&Pbuf(0, r), n, n);
            auto p = pbuf.col(r);
            auto q = qbuf.col(r);
            auto ds = c.dsig.col(r);
            const double pds = p.dot(ds);
            out[r] = p.dot(c.db.col(r)) + q.dot(ds) + 0.5 * ds.dot(P * ds) +
                     c.spec->driver(t, c.xbuf.col(r), c.ybar[r], c.zbar[r] + pds, c.spike_u) -
                     c.f0[r];
        }
    });
}

// ---------------------------------------------------------------------------
// Variational BSDE (yhat, zhat).
// ---------------------------------------------------------------------------

struct YhatWs {
    CachePtr cache;
    NodeSource p_src, q_src, P_src;
    Eigen::MatrixXd pbuf, qbuf, Pbuf;  // transposed
    Eigen::VectorXd g;                 // forcing rows
};

inline Track make_yhat_track(CachePtr cache, NodeSource p_src, NodeSource q_src,
                             NodeSource P_src, int family, const std::string& label = "yhat") {
    auto ws = std::make_shared<YhatWs>();
    ws->cache = cache;
    ws->p_src = std::move(p_src);
    ws->q_src = std::move(q_src);
    ws->P_src = std::move(P_src);

    Track t;
    t.label = label;
    t.dim = 1;
    t.family = family;
    t.terminal = [](Eigen::MatrixXd& yM) { yM.setZero(); };
    t.prepare = [ws](std::int64_t node) {
        auto& c = *ws->cache;
        c.ensure(node);
        Eigen::MatrixXd tmp;
        ws->p_src(node, tmp);
        ws->pbuf = tmp.transpose();
        ws->q_src(node, tmp);
        ws->qbuf = tmp.transpose();
        ws->P_src(node, tmp);
        ws->Pbuf = tmp.transpose();
        fill_spike_forcing(c, node, ws->pbuf, ws->qbuf, ws->Pbuf, ws->g);
    };
    t.driver = [ws](std::int64_t r, const double* y, const double* z, double* out) {
        out[0] = ws->cache->fy[r] * y[0] + ws->cache->fz[r] * z[0] + ws->g[r];
    };
    return t;
}

// ---------------------------------------------------------------------------
// Expansion BSDEs (ytilde1, ztilde1) and (ytilde2, ztilde2).
// ---------------------------------------------------------------------------

struct Tilde1Ws {
    CachePtr cache;
    NodeSource x1_src;
    Eigen::VectorXd a;  // <f_x, x1>
};

inline Track make_tilde1_track(CachePtr cache, NodeSource x1_src, int family,
                               const std::string& label = "ytilde1") {
    const int n = cache->spec->n;
    auto ws = std::make_shared<Tilde1Ws>();
    ws->cache = cache;
    ws->x1_src = std::move(x1_src);

    Track t;
    t.label = label;
    t.dim = 1;
    t.family = family;
    t.terminal = [cache, ws, n](Eigen::MatrixXd& yM) {
        Eigen::MatrixXd xrows, x1rows;
        cache->x_src(cache->grid->M, xrows);
        ws->x1_src(cache->grid->M, x1rows);
        Vec x(n), g(n);
        for (std::int64_t r = 0; r < cache->rows; ++r) {
            x = xrows.row(r).transpose();
            cache->spec->terminal_grad(x, g);
            yM(r, 0) = g.dot(x1rows.row(r).transpose());
        }
    };
    t.prepare = [ws](std::int64_t node) {
        auto& c = *ws->cache;
        c.ensure(node);
        Eigen::MatrixXd x1rows;
        ws->x1_src(node, x1rows);
        ws->a.resize(c.rows);
        for (std::int64_t r = 0; r < c.rows; ++r)
            ws->a[r] = c.fx.col(r).dot(x1rows.row(r).transpose());
    };
    t.driver = [ws](std::int64_t r, const double* y, const double* z, double* out) {
        out[0] = ws->a[r] + ws->cache->fy[r] * y[0] + ws->cache->fz[r] * z[0];
    };
    return t;
}

struct Tilde2Ws {
    CachePtr cache;
    NodeSource x1_src, x2_src, p_src, y1t_src, z1t_src;
    Eigen::VectorXd a;  // everything except f_y y + f_z z
};

inline Track make_tilde2_track(CachePtr cache, NodeSource x1_src, NodeSource x2_src,
                               NodeSource p_src, NodeSource y1t_src, NodeSource z1t_src,
                               int family, const std::string& label = "ytilde2") {
    const int n = cache->spec->n;
    auto ws = std::make_shared<Tilde2Ws>();
    ws->cache = cache;
    ws->x1_src = std::move(x1_src);
    ws->x2_src = std::move(x2_src);
    ws->p_src = std::move(p_src);
    ws->y1t_src = std::move(y1t_src);
    ws->z1t_src = std::move(z1t_src);

    Track t;
    t.label = label;
    t.dim = 1;
    t.family = family;
    t.terminal = [cache, ws, n](Eigen::MatrixXd& yM) {
        Eigen::MatrixXd xrows, x1rows, x2rows;
        cache->x_src(cache->grid->M, xrows);
        ws->x1_src(cache->grid->M, x1rows);
        ws->x2_src(cache->grid->M, x2rows);
        Vec x(n), g(n), v1(n);
        Mat h(n, n);
        for (std::int64_t r = 0; r < cache->rows; ++r) {
            x = xrows.row(r).transpose();
            v1 = x1rows.row(r).transpose();
            cache->spec->terminal_grad(x, g);
            cache->spec->terminal_hess(x, h);
            yM(r, 0) = g.dot(x2rows.row(r).transpose()) + 0.5 * v1.dot(h * v1);
        }
    };
    t.prepare = [ws, n](std::int64_t node) {
        auto& c = *ws->cache;
        c.ensure(node);
        Eigen::MatrixXd x1rows, x2rows, prow, y1rows, z1rows;
        ws->x1_src(node, x1rows);
        ws->x2_src(node, x2rows);
        ws->p_src(node, prow);
        ws->y1t_src(node, y1rows);
        ws->z1t_src(node, z1rows);
        ws->a.resize(c.rows);
        const double t = c.grid->time(node);
        for_each_block(c.rows, c.workers, [&](std::int64_t, std::int64_t b, std::int64_t e) {
            Vec v(n + 2);
            for (std::int64_t r = b; r < e; ++r) {
                v.head(n) = x1rows.row(r).transpose();
                v[n] = y1rows(r, 0);
                v[n + 1] = z1rows(r, 0);
                double val = c.fx.col(r).dot(x2rows.row(r).transpose()) +
                             0.5 * v.dot(c.d2f_at(r) * v);
                if (c.node_on_spike) {
                    const double pds = prow.row(r).dot(c.dsig.col(r).transpose());
                    val += c.spec->driver(t, c.xbuf.col(r), c.ybar[r], c.zbar[r] + pds,
                                          c.spike_u) -
                           c.f0[r] - c.fz[r] * pds - 0.5 * c.f_zz_at(r) * pds * pds;
                }
                ws->a[r] = val;
            }
        });
    };
    t.driver = [ws](std::int64_t r, const double* y, const double* z, double* out) {
        out[0] = ws->a[r] + ws->cache->fy[r] * y[0] + ws->cache->fz[r] * z[0];
    };
    return t;
}

}  // namespace fbsde::detail
