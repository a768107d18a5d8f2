#include "fbsde/bsde.hpp"

#include <cmath>

#include "engine.hpp"
#include "fbsde/forward.hpp"
#include "tracks.hpp"

namespace fbsde {

namespace detail {

// Runs a single-track sweep over a path window and returns the node-0 value;
// optionally stores the full (y, z) trajectories.
struct SingleRun {
    double y0 = 0.0;
    double worst_condition = 1.0;
    int max_fp = 0;
};

SingleRun run_single(const NoiseEnsemble& noise, const EngineOptions& eopts,
                     std::vector<FamilyBuilder> families, std::vector<int> family_vars,
                     const std::function<Track(const BackwardSweep&)>& factory,
                     std::int64_t begin, std::int64_t end, TrajectoryEnsemble* store_y,
                     TrajectoryEnsemble* store_z) {
    BackwardSweep sweep(noise, eopts, std::move(families), begin, end);
    for (std::size_t f = 0; f < family_vars.size(); ++f)
        sweep.set_family_vars(static_cast<int>(f), family_vars[f]);
    int idx = sweep.add_track(factory(sweep));
    sweep.run([&](std::int64_t node) {
        if (store_y) {
            const auto& t = sweep.track(idx);
            store_y->components[0].col(node).segment(begin, end - begin) = t.y_cur.col(0);
            store_z->components[0].col(node).segment(begin, end - begin) = t.z_cur.col(0);
        }
    });
    SingleRun out;
    out.y0 = sweep.track(idx).y_cur(0, 0);
    out.worst_condition = sweep.track(idx).worst_condition;
    out.max_fp = sweep.track(idx).max_fp_iterations;
    return out;
}

// Batch-means standard error of y(0): the same solve on K contiguous path
// batches; SE = sd(batch estimates) / sqrt(K).
double batch_se(const NoiseEnsemble& noise, const EngineOptions& eopts,
                const std::function<std::vector<FamilyBuilder>(std::int64_t, std::int64_t)>&
                    families_for_window,
                std::vector<int> family_vars,
                const std::function<Track(const BackwardSweep&, std::int64_t, std::int64_t)>&
                    factory,
                int batches) {
    const std::int64_t N = noise.N;
    if (batches < 2 || N < 2 * batches) return 0.0;
    Eigen::VectorXd vals(batches);
    for (int b = 0; b < batches; ++b) {
        std::int64_t begin = N * b / batches;
        std::int64_t end = N * (b + 1) / batches;
        auto fams = families_for_window(begin, end);
        BackwardSweep sweep(noise, eopts, std::move(fams), begin, end);
        for (std::size_t f = 0; f < family_vars.size(); ++f)
            sweep.set_family_vars(static_cast<int>(f), family_vars[f]);
        int idx = sweep.add_track(factory(sweep, begin, end));
        sweep.run(nullptr);
        vals[b] = sweep.track(idx).y_cur(0, 0);
    }
    // sd(batch estimates)/sqrt(K), the batch-means estimate of the full-N
    // estimator's standard error.
    return mean_se(vals).se;
}

}  // namespace detail

using detail::FamilyBuilder;
using detail::Track;

BsdeSolution solve_bsde(const ModelSpec& spec, const TrajectoryEnsemble& forward,
                        const ControlPolicy& policy, const NoiseEnsemble& noise,
                        const SolverOptions& opts) {
    if (forward.N != noise.N || !(forward.grid == noise.grid))
        throw std::invalid_argument("solve_bsde: forward not on this noise ensemble");
    auto eopts = detail::to_engine_options(opts);

    BsdeSolution sol;
    sol.basis = opts.basis;
    sol.y = TrajectoryEnsemble("y", noise.grid, noise.N, 1, noise.seed);
    sol.z = TrajectoryEnsemble("z", noise.grid, noise.N, 1, noise.seed);

    auto make_families = [&](std::int64_t begin, std::int64_t end) {
        return std::vector<FamilyBuilder>{detail::stacked_features({&forward}, begin, end - begin)};
    };
    auto make_track = [&](const detail::BackwardSweep&, std::int64_t begin, std::int64_t end) {
        return detail::make_driver_bsde_track(
            spec, noise.grid, end - begin,
            detail::source_from_ensemble(forward, begin, end - begin), policy, 0, "y");
    };

    auto run = detail::run_single(
        noise, eopts, make_families(0, noise.N), {spec.n},
        [&](const detail::BackwardSweep& s) { return make_track(s, 0, noise.N); }, 0, noise.N,
        &sol.y, &sol.z);
    sol.y0 = run.y0;
    sol.diag.worst_condition = run.worst_condition;
    sol.diag.max_fp_iterations = run.max_fp;

    if (opts.se_batches > 1) {
        sol.y0_se = detail::batch_se(noise, eopts, make_families, {spec.n}, make_track,
                                     opts.se_batches);
    }
    return sol;
}

BsdeSolution solve_variational_bsde(const ModelSpec& spec, const BaseSolution& base,
                                    const AdjointProcesses& adjoints, const SpikeConfig& spike,
                                    const TrajectoryEnsemble& x1, const NoiseEnsemble& noise,
                                    const SolverOptions& opts) {
    auto eopts = detail::to_engine_options(opts);
    BsdeSolution sol;
    sol.basis = opts.basis;
    sol.y = TrajectoryEnsemble("yhat", noise.grid, noise.N, 1, noise.seed);
    sol.z = TrajectoryEnsemble("zhat", noise.grid, noise.N, 1, noise.seed);

    auto make_families = [&](std::int64_t begin, std::int64_t end) {
        return std::vector<FamilyBuilder>{
            detail::stacked_features({&base.x, &x1}, begin, end - begin)};
    };
    auto make_track = [&](const detail::BackwardSweep&, std::int64_t begin, std::int64_t end) {
        const std::int64_t rows = end - begin;
        auto cache = detail::make_cache(spec, noise.grid, rows, opts.workers,
                                        detail::source_from_ensemble(base.x, begin, rows),
                                        detail::source_from_ensemble(base.y, begin, rows),
                                        detail::source_from_ensemble(base.z, begin, rows),
                                        base.policy);
        cache->configure_spike(spike);
        return detail::make_yhat_track(
            cache, detail::source_from_ensemble(adjoints.first.p, begin, rows),
            detail::source_from_ensemble(adjoints.first.q, begin, rows),
            detail::source_from_ensemble(adjoints.second.P, begin, rows), 0, "yhat");
    };

    auto run = detail::run_single(
        noise, eopts, make_families(0, noise.N), {2 * spec.n},
        [&](const detail::BackwardSweep& s) { return make_track(s, 0, noise.N); }, 0, noise.N,
        &sol.y, &sol.z);
    sol.y0 = run.y0;
    sol.diag.worst_condition = run.worst_condition;
    sol.diag.max_fp_iterations = run.max_fp;
    if (opts.se_batches > 1)
        sol.y0_se = detail::batch_se(noise, eopts, make_families, {2 * spec.n}, make_track,
                                     opts.se_batches);
    return sol;
}

MeanSe hat_y0_via_gamma(const ModelSpec& spec, const BaseSolution& base,
                        const AdjointProcesses& adjoints, const TrajectoryEnsemble& gamma,
                        const SpikeConfig& spike) {
    const TimeGrid& grid = base.x.grid;
    const std::int64_t N = base.x.N;
    auto [first, len] = spike_node_range(grid, spike);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(N);
    if (len == 0) return mean_se(acc);

    auto cache = detail::make_cache(spec, grid, N, 0,
                                    detail::source_from_ensemble(base.x, 0, N),
                                    detail::source_from_ensemble(base.y, 0, N),
                                    detail::source_from_ensemble(base.z, 0, N), base.policy);
    cache->configure_spike(spike);
    const double dt = grid.dt();
    Eigen::MatrixXd pbuf, qbuf, Pbuf, tmp;
    Eigen::VectorXd forcing;
    for (std::int64_t node = first; node < first + len; ++node) {
        cache->ensure(node);
        detail::source_from_ensemble(adjoints.first.p, 0, N)(node, tmp);
        pbuf = tmp.transpose();
        detail::source_from_ensemble(adjoints.first.q, 0, N)(node, tmp);
        qbuf = tmp.transpose();
        detail::source_from_ensemble(adjoints.second.P, 0, N)(node, tmp);
        Pbuf = tmp.transpose();
        detail::fill_spike_forcing(*cache, node, pbuf, qbuf, Pbuf, forcing);
        acc += gamma.components[0].col(node).cwiseProduct(forcing) * dt;
    }
    return mean_se(acc);
}

BsdeSolution solve_first_expansion(const ModelSpec& spec, const BaseSolution& base,
                                   const TrajectoryEnsemble& x1, const NoiseEnsemble& noise,
                                   const SolverOptions& opts) {
    auto eopts = detail::to_engine_options(opts);
    BsdeSolution sol;
    sol.basis = opts.basis;
    sol.y = TrajectoryEnsemble("ytilde1", noise.grid, noise.N, 1, noise.seed);
    sol.z = TrajectoryEnsemble("ztilde1", noise.grid, noise.N, 1, noise.seed);

    auto make_families = [&](std::int64_t begin, std::int64_t end) {
        return std::vector<FamilyBuilder>{
            detail::stacked_features({&base.x, &x1}, begin, end - begin)};
    };
    auto make_track = [&](const detail::BackwardSweep&, std::int64_t begin, std::int64_t end) {
        const std::int64_t rows = end - begin;
        auto cache = detail::make_cache(spec, noise.grid, rows, opts.workers,
                                        detail::source_from_ensemble(base.x, begin, rows),
                                        detail::source_from_ensemble(base.y, begin, rows),
                                        detail::source_from_ensemble(base.z, begin, rows),
                                        base.policy);
        return detail::make_tilde1_track(cache, detail::source_from_ensemble(x1, begin, rows), 0,
                                         "ytilde1");
    };
    auto run = detail::run_single(
        noise, eopts, make_families(0, noise.N), {2 * spec.n},
        [&](const detail::BackwardSweep& s) { return make_track(s, 0, noise.N); }, 0, noise.N,
        &sol.y, &sol.z);
    sol.y0 = run.y0;
    sol.diag.worst_condition = run.worst_condition;
    sol.diag.max_fp_iterations = run.max_fp;
    return sol;
}

BsdeSolution solve_second_expansion(const ModelSpec& spec, const BaseSolution& base,
                                    const TrajectoryEnsemble& x1, const TrajectoryEnsemble& x2,
                                    const SpikeConfig& spike, const AdjointProcesses& adjoints,
                                    const BsdeSolution& first, const NoiseEnsemble& noise,
                                    const SolverOptions& opts) {
    auto eopts = detail::to_engine_options(opts);
    BsdeSolution sol;
    sol.basis = opts.basis;
    sol.y = TrajectoryEnsemble("ytilde2", noise.grid, noise.N, 1, noise.seed);
    sol.z = TrajectoryEnsemble("ztilde2", noise.grid, noise.N, 1, noise.seed);

    auto make_families = [&](std::int64_t begin, std::int64_t end) {
        return std::vector<FamilyBuilder>{
            detail::stacked_features({&base.x, &x1, &x2}, begin, end - begin)};
    };
    auto make_track = [&](const detail::BackwardSweep&, std::int64_t begin, std::int64_t end) {
        const std::int64_t rows = end - begin;
        auto cache = detail::make_cache(spec, noise.grid, rows, opts.workers,
                                        detail::source_from_ensemble(base.x, begin, rows),
                                        detail::source_from_ensemble(base.y, begin, rows),
                                        detail::source_from_ensemble(base.z, begin, rows),
                                        base.policy);
        cache->configure_spike(spike);
        return detail::make_tilde2_track(cache, detail::source_from_ensemble(x1, begin, rows),
                                         detail::source_from_ensemble(x2, begin, rows),
                                         detail::source_from_ensemble(adjoints.first.p, begin, rows),
                                         detail::source_from_ensemble(first.y, begin, rows),
                                         detail::source_from_ensemble(first.z, begin, rows), 0,
                                         "ytilde2");
    };
    auto run = detail::run_single(
        noise, eopts, make_families(0, noise.N), {3 * spec.n},
        [&](const detail::BackwardSweep& s) { return make_track(s, 0, noise.N); }, 0, noise.N,
        &sol.y, &sol.z);
    sol.y0 = run.y0;
    sol.diag.worst_condition = run.worst_condition;
    sol.diag.max_fp_iterations = run.max_fp;
    return sol;
}

}  // namespace fbsde
