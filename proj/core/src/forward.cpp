#include "fbsde/forward.hpp"

#include <cmath>
#include <sstream>

#include "fbsde/parallel.hpp"

namespace fbsde {

namespace {

[[noreturn]] void blowup(const std::string& label, std::int64_t path, std::int64_t step) {
    std::ostringstream os;
    os << label << ": non-finite state at path " << path << ", step " << step;
    throw std::runtime_error(os.str());
}

// Controls are deterministic in t, so evaluate them once per node.
std::vector<Vec> controls_per_node(const ControlPolicy& policy, const TimeGrid& grid) {
    std::vector<Vec> u(static_cast<std::size_t>(grid.nodes()));
    for (std::int64_t i = 0; i < grid.nodes(); ++i) u[static_cast<std::size_t>(i)] = policy(grid.time(i));
    return u;
}

}  // namespace

std::pair<std::int64_t, std::int64_t> spike_node_range(const TimeGrid& grid,
                                                       const SpikeConfig& spike) {
    if (spike.eps == 0.0) return {0, 0};
    if (spike.eps < 0.0) throw std::invalid_argument("spike: negative width");
    std::int64_t first = grid.aligned_node(spike.s);
    std::int64_t last = grid.aligned_node(spike.s + spike.eps);
    if (first < 0 || last < 0)
        throw std::invalid_argument("spike: interval endpoints must be grid nodes");
    if (last <= first || last > grid.M)
        throw std::invalid_argument("spike: interval must be inside [0, T]");
    return {first, last - first};
}

TrajectoryEnsemble simulate_forward(const ModelSpec& spec, const ControlPolicy& policy,
                                    const NoiseEnsemble& noise, int workers) {
    const TimeGrid& grid = noise.grid;
    if (spec.x0.size() != spec.n) throw std::invalid_argument("simulate_forward: bad x0");
    if (policy.control_dim() != spec.k)
        throw std::invalid_argument("simulate_forward: policy dimension mismatch");
    TrajectoryEnsemble ens("x", grid, noise.N, spec.n, noise.seed);
    auto u_nodes = controls_per_node(policy, grid);
    const double dt = grid.dt();

    for_each_block(noise.N, workers, [&](std::int64_t, std::int64_t begin, std::int64_t end) {
        Vec x(spec.n), b(spec.n), sig(spec.n);
        for (std::int64_t p = begin; p < end; ++p) {
            x = spec.x0;
            for (int c = 0; c < spec.n; ++c) ens.components[static_cast<std::size_t>(c)](p, 0) = x[c];
            for (std::int64_t i = 0; i < grid.M; ++i) {
                const double t = grid.time(i);
                const Vec& u = u_nodes[static_cast<std::size_t>(i)];
                spec.drift(t, x, u, b);
                spec.diffusion(t, x, u, sig);
                const double dw = noise.dw(p, i);
                x += b * dt + sig * dw;
                if (!x.allFinite()) blowup("simulate_forward[" + spec.name + "]", p, i);
                for (int c = 0; c < spec.n; ++c)
                    ens.components[static_cast<std::size_t>(c)](p, i + 1) = x[c];
            }
        }
    });
    return ens;
}

TrajectoryEnsemble simulate_x1(const ModelSpec& spec, const TrajectoryEnsemble& base,
                               const ControlPolicy& base_policy, const SpikeConfig& spike,
                               const NoiseEnsemble& noise, const X1Options& opts, int workers) {
    const TimeGrid& grid = noise.grid;
    if (!(base.grid == grid) || base.N != noise.N)
        throw std::invalid_argument("simulate_x1: base not on this noise ensemble");
    auto [spike_first, spike_len] = spike_node_range(grid, spike);
    const std::int64_t spike_end = spike_first + spike_len;
    TrajectoryEnsemble ens("x1", grid, noise.N, spec.n, noise.seed);
    auto u_nodes = controls_per_node(base_policy, grid);
    const double dt = grid.dt();
    const double dsig_sign = opts.negate_delta_sigma ? -1.0 : 1.0;

    for_each_block(noise.N, workers, [&](std::int64_t, std::int64_t begin, std::int64_t end) {
        Vec x1(spec.n), xb(spec.n), dsig(spec.n), sig_u(spec.n), sig_bar(spec.n);
        Mat bx(spec.n, spec.n), sx(spec.n, spec.n);
        for (std::int64_t p = begin; p < end; ++p) {
            x1.setZero();
            for (int c = 0; c < spec.n; ++c) ens.components[static_cast<std::size_t>(c)](p, 0) = 0.0;
            for (std::int64_t i = 0; i < grid.M; ++i) {
                const double t = grid.time(i);
                const Vec& ubar = u_nodes[static_cast<std::size_t>(i)];
                for (int c = 0; c < spec.n; ++c) xb[c] = base.components[static_cast<std::size_t>(c)](p, i);
                spec.drift_jac(t, xb, ubar, bx);
                spec.diffusion_jac(t, xb, ubar, sx);
                const bool on_spike = i >= spike_first && i < spike_end;
                if (on_spike) {
                    spec.diffusion(t, xb, spike.u, sig_u);
                    spec.diffusion(t, xb, ubar, sig_bar);
                    dsig = dsig_sign * (sig_u - sig_bar);
                } else {
                    dsig.setZero();
                }
                const double dw = noise.dw(p, i);
                x1 = x1 + (bx * x1) * dt + (sx * x1 + dsig) * dw;
                if (!x1.allFinite()) blowup("simulate_x1[" + spec.name + "]", p, i);
                for (int c = 0; c < spec.n; ++c)
                    ens.components[static_cast<std::size_t>(c)](p, i + 1) = x1[c];
            }
        }
    });
    return ens;
}

TrajectoryEnsemble simulate_x2(const ModelSpec& spec, const TrajectoryEnsemble& base,
                               const ControlPolicy& base_policy, const TrajectoryEnsemble& x1,
                               const SpikeConfig& spike, const NoiseEnsemble& noise,
                               int workers) {
    const TimeGrid& grid = noise.grid;
    if (!(base.grid == grid) || base.N != noise.N || x1.N != noise.N)
        throw std::invalid_argument("simulate_x2: inputs not on this noise ensemble");
    auto [spike_first, spike_len] = spike_node_range(grid, spike);
    const std::int64_t spike_end = spike_first + spike_len;
    TrajectoryEnsemble ens("x2", grid, noise.N, spec.n, noise.seed);
    auto u_nodes = controls_per_node(base_policy, grid);
    const double dt = grid.dt();
    const int n = spec.n;

    for_each_block(noise.N, workers, [&](std::int64_t, std::int64_t begin, std::int64_t end) {
        Vec x2(n), xb(n), v1(n), db(n), dsig(n), dsx_v1(n), quad_b(n), quad_s(n);
        Vec b_u(n), b_bar(n), sig_u(n), sig_bar(n);
        Mat bx(n, n), sx(n, n), sx_u(n, n);
        std::vector<Mat> bxx(static_cast<std::size_t>(n), Mat(n, n));
        std::vector<Mat> sxx(static_cast<std::size_t>(n), Mat(n, n));
        for (std::int64_t p = begin; p < end; ++p) {
            x2.setZero();
            for (int c = 0; c < n; ++c) ens.components[static_cast<std::size_t>(c)](p, 0) = 0.0;
            for (std::int64_t i = 0; i < grid.M; ++i) {
                const double t = grid.time(i);
                const Vec& ubar = u_nodes[static_cast<std::size_t>(i)];
                for (int c = 0; c < n; ++c) {
                    xb[c] = base.components[static_cast<std::size_t>(c)](p, i);
                    v1[c] = x1.components[static_cast<std::size_t>(c)](p, i);
                }
                spec.drift_jac(t, xb, ubar, bx);
                spec.diffusion_jac(t, xb, ubar, sx);
                spec.drift_hess(t, xb, ubar, bxx);
                spec.diffusion_hess(t, xb, ubar, sxx);
                // Trace-form quadratic terms: component i is x1^T H^i x1.
                for (int c = 0; c < n; ++c) {
                    quad_b[c] = v1.dot(bxx[static_cast<std::size_t>(c)] * v1);
                    quad_s[c] = v1.dot(sxx[static_cast<std::size_t>(c)] * v1);
                }
                const bool on_spike = i >= spike_first && i < spike_end;
                if (on_spike) {
                    spec.drift(t, xb, spike.u, b_u);
                    spec.drift(t, xb, ubar, b_bar);
                    db = b_u - b_bar;
                    spec.diffusion(t, xb, spike.u, sig_u);
                    spec.diffusion(t, xb, ubar, sig_bar);
                    dsig = sig_u - sig_bar;
                    spec.diffusion_jac(t, xb, spike.u, sx_u);
                    dsx_v1 = (sx_u - sx) * v1;
                } else {
                    db.setZero();
                    dsx_v1.setZero();
                }
                const double dw = noise.dw(p, i);
                x2 = x2 + (bx * x2 + db + 0.5 * quad_b) * dt +
                     (sx * x2 + dsx_v1 + 0.5 * quad_s) * dw;
                if (!x2.allFinite()) blowup("simulate_x2[" + spec.name + "]", p, i);
                for (int c = 0; c < n; ++c)
                    ens.components[static_cast<std::size_t>(c)](p, i + 1) = x2[c];
            }
        }
    });
    return ens;
}

TrajectoryEnsemble simulate_gamma(const ModelSpec& spec, const TrajectoryEnsemble& base_x,
                                  const TrajectoryEnsemble& base_y,
                                  const TrajectoryEnsemble& base_z,
                                  const ControlPolicy& base_policy, const NoiseEnsemble& noise,
                                  double gamma0, bool allow_any_sign, int workers) {
    const TimeGrid& grid = noise.grid;
    if (!(base_x.grid == grid) || base_x.N != noise.N)
        throw std::invalid_argument("simulate_gamma: base not on this noise ensemble");
    if (!allow_any_sign && !(gamma0 > 0.0))
        throw std::invalid_argument("simulate_gamma: gamma0 must be positive (got nonpositive)");
    TrajectoryEnsemble ens("gamma", grid, noise.N, 1, noise.seed);
    auto u_nodes = controls_per_node(base_policy, grid);
    const double dt = grid.dt();
    const double mag0 = std::abs(gamma0);
    const double sign0 = gamma0 < 0.0 ? -1.0 : 1.0;

    for_each_block(noise.N, workers, [&](std::int64_t, std::int64_t begin, std::int64_t end) {
        Vec xb(spec.n), grad(spec.n + 2);
        for (std::int64_t p = begin; p < end; ++p) {
            double log_mag = 0.0;
            ens.components[0](p, 0) = gamma0;
            for (std::int64_t i = 0; i < grid.M; ++i) {
                const double t = grid.time(i);
                const Vec& ubar = u_nodes[static_cast<std::size_t>(i)];
                for (int c = 0; c < spec.n; ++c)
                    xb[c] = base_x.components[static_cast<std::size_t>(c)](p, i);
                spec.driver_grad(t, xb, base_y.components[0](p, i), base_z.components[0](p, i),
                                 ubar, grad);
                const double fy = grad[spec.n];
                const double fz = grad[spec.n + 1];
                log_mag += (fy - 0.5 * fz * fz) * dt + fz * noise.dw(p, i);
                if (!std::isfinite(log_mag)) blowup("simulate_gamma[" + spec.name + "]", p, i);
                ens.components[0](p, i + 1) = gamma0 == 0.0 ? 0.0 : sign0 * mag0 * std::exp(log_mag);
            }
        }
    });
    return ens;
}

}  // namespace fbsde
