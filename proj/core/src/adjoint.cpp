#include "fbsde/adjoint.hpp"

#include "engine.hpp"
#include "tracks.hpp"

namespace fbsde {

namespace {

void store_track(const detail::BackwardSweep& sweep, int idx, std::int64_t node,
                 TrajectoryEnsemble& y_ens, TrajectoryEnsemble& z_ens) {
    const auto& t = sweep.track(idx);
    for (int d = 0; d < t.dim; ++d) {
        y_ens.components[static_cast<std::size_t>(d)].col(node) = t.y_cur.col(d);
        z_ens.components[static_cast<std::size_t>(d)].col(node) = t.z_cur.col(d);
    }
}

}  // namespace

Vec first_adjoint_driver(const CoeffBundle& c, const Vec& p, const Vec& q) {
    return c.f_y * p + c.f_z * (c.sigma_x.transpose() * p) + c.b_x.transpose() * p +
           c.f_z * q + c.sigma_x.transpose() * q + c.f_x;
}

Mat second_adjoint_driver_terms(const CoeffBundle& c, const Vec& p, const Vec& q, const Mat& P,
                                const Mat& Q, unsigned mask) {
    const auto n = P.rows();
    Mat out = Mat::Zero(n, n);
    Mat A = c.f_z * c.sigma_x + c.b_x;
    if (mask & 1u) out += c.f_y * P;
    if (mask & 2u) out += A.transpose() * P + P * A;
    if (mask & 4u) out += c.sigma_x.transpose() * P * c.sigma_x;
    if (mask & 8u) out += c.f_z * Q;
    if (mask & 16u) out += c.sigma_x.transpose() * Q + Q * c.sigma_x;
    if (mask & 32u) {
        for (Eigen::Index i = 0; i < n; ++i) out += p[i] * c.b_xx[static_cast<std::size_t>(i)];
    }
    if (mask & 64u) {
        Vec w = c.f_z * p + q;
        for (Eigen::Index i = 0; i < n; ++i) out += w[i] * c.sigma_xx[static_cast<std::size_t>(i)];
    }
    if (mask & 128u) {
        Mat border(n, n + 2);
        border.leftCols(n) = Mat::Identity(n, n);
        border.col(n) = p;
        border.col(n + 1) = c.sigma_x.transpose() * p + q;
        out += border * c.d2f * border.transpose();
    }
    return out;
}

double max_asymmetry(const TrajectoryEnsemble& P, int n) {
    double worst = 0.0;
    for (std::int64_t node = 0; node < P.grid.nodes(); ++node) {
        for (std::int64_t path = 0; path < P.N; ++path) {
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j) {
                    double a = P.value(path, node, i * n + j);
                    double b = P.value(path, node, j * n + i);
                    worst = std::max(worst, std::abs(a - b));
                }
        }
    }
    return worst;
}

FirstAdjoint solve_p_q(const ModelSpec& spec, const BaseSolution& base,
                       const NoiseEnsemble& noise, const SolverOptions& opts) {
    auto eopts = detail::to_engine_options(opts);
    const std::int64_t N = noise.N;
    FirstAdjoint out;
    out.p = TrajectoryEnsemble("p", noise.grid, N, spec.n, noise.seed);
    out.q = TrajectoryEnsemble("q", noise.grid, N, spec.n, noise.seed);

    detail::BackwardSweep sweep(noise, eopts,
                                {detail::stacked_features({&base.x}, 0, N)}, 0, N);
    sweep.set_family_vars(0, spec.n);
    auto cache = detail::make_cache(spec, noise.grid, N, opts.workers,
                                    detail::source_from_ensemble(base.x, 0, N),
                                    detail::source_from_ensemble(base.y, 0, N),
                                    detail::source_from_ensemble(base.z, 0, N), base.policy);
    int idx = sweep.add_track(detail::make_pq_track(cache, 0));
    sweep.run([&](std::int64_t node) { store_track(sweep, idx, node, out.p, out.q); });
    out.diag.worst_condition = sweep.track(idx).worst_condition;
    out.diag.max_fp_iterations = sweep.track(idx).max_fp_iterations;
    return out;
}

SecondAdjoint solve_P_Q(const ModelSpec& spec, const BaseSolution& base, const FirstAdjoint& pq,
                        const NoiseEnsemble& noise, const SolverOptions& opts,
                        const SecondAdjointOptions& sopts) {
    auto eopts = detail::to_engine_options(opts);
    const std::int64_t N = noise.N;
    const int n = spec.n;
    SecondAdjoint out;
    out.P = TrajectoryEnsemble("P", noise.grid, N, n * n, noise.seed);
    out.Q = TrajectoryEnsemble("Q", noise.grid, N, n * n, noise.seed);

    detail::BackwardSweep sweep(noise, eopts,
                                {detail::stacked_features({&base.x}, 0, N)}, 0, N);
    sweep.set_family_vars(0, n);
    auto cache = detail::make_cache(spec, noise.grid, N, opts.workers,
                                    detail::source_from_ensemble(base.x, 0, N),
                                    detail::source_from_ensemble(base.y, 0, N),
                                    detail::source_from_ensemble(base.z, 0, N), base.policy);
    auto track = detail::make_PQ_track(cache, detail::source_from_ensemble(pq.p, 0, N),
                                       detail::source_from_ensemble(pq.q, 0, N), 0);
    if (sopts.symmetrize_each_step) {
        track.post_step = [n](std::int64_t, Eigen::MatrixXd& y_cur) {
            for (Eigen::Index r = 0; r < y_cur.rows(); ++r)
                for (int i = 0; i < n; ++i)
                    for (int j = i + 1; j < n; ++j) {
                        double s = 0.5 * (y_cur(r, i * n + j) + y_cur(r, j * n + i));
                        y_cur(r, i * n + j) = s;
                        y_cur(r, j * n + i) = s;
                    }
        };
    }
    int idx = sweep.add_track(std::move(track));
    sweep.run([&](std::int64_t node) { store_track(sweep, idx, node, out.P, out.Q); });
    out.diag.worst_condition = sweep.track(idx).worst_condition;
    out.diag.max_fp_iterations = sweep.track(idx).max_fp_iterations;
    return out;
}

AdjointProcesses solve_constrained_adjoints(const ModelSpec& spec, const BaseSolution& base,
                                            double mu, const NoiseEnsemble& noise,
                                            const SolverOptions& opts) {
    if (!spec.has_constraint)
        throw std::invalid_argument("solve_constrained_adjoints: spec has no constraint");
    auto eopts = detail::to_engine_options(opts);
    const std::int64_t N = noise.N;
    const int n = spec.n;
    AdjointProcesses out;
    out.first.p = TrajectoryEnsemble("p0", noise.grid, N, n, noise.seed);
    out.first.q = TrajectoryEnsemble("q0", noise.grid, N, n, noise.seed);
    out.second.P = TrajectoryEnsemble("P0", noise.grid, N, n * n, noise.seed);
    out.second.Q = TrajectoryEnsemble("Q0", noise.grid, N, n * n, noise.seed);

    detail::BackwardSweep sweep(noise, eopts,
                                {detail::stacked_features({&base.x}, 0, N)}, 0, N);
    sweep.set_family_vars(0, n);
    auto cache = detail::make_cache(spec, noise.grid, N, opts.workers,
                                    detail::source_from_ensemble(base.x, 0, N),
                                    detail::source_from_ensemble(base.y, 0, N),
                                    detail::source_from_ensemble(base.z, 0, N), base.policy);
    int ip = sweep.add_track(detail::make_p0_track(cache, mu, base.y0, 0));
    // (P0, Q0) reads the freshly stepped (p0, q0) values at the same node.
    int iP = sweep.add_track(detail::make_P0_track(cache, detail::source_from_track_y(sweep, ip),
                                                   detail::source_from_track_z(sweep, ip), mu,
                                                   base.y0, 0));
    sweep.run([&](std::int64_t node) {
        store_track(sweep, ip, node, out.first.p, out.first.q);
        store_track(sweep, iP, node, out.second.P, out.second.Q);
    });
    out.first.diag.worst_condition = sweep.track(ip).worst_condition;
    out.first.diag.max_fp_iterations = sweep.track(ip).max_fp_iterations;
    out.second.diag.worst_condition = sweep.track(iP).worst_condition;
    out.second.diag.max_fp_iterations = sweep.track(iP).max_fp_iterations;
    return out;
}

}  // namespace fbsde
