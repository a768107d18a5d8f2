#include <doctest.h>

#include <cmath>
#include <random>

#include "fbsde/adjoint.hpp"
#include "fbsde/benchmarks.hpp"
#include "fbsde/forward.hpp"
#include "fbsde/maxprinciple.hpp"

using namespace fbsde;

namespace {
Vec sv(double v) {
    Vec out(1);
    out[0] = v;
    return out;
}

struct Setup {
    Benchmark bench;
    TimeGrid grid;
    NoiseEnsemble noise;
    TrajectoryEnsemble xbar;
    BsdeSolution yz;
    AdjointProcesses adj;
    Setup(const std::string& name, std::int64_t N, std::int64_t M, std::uint64_t seed)
        : bench(make_benchmark(name)),
          grid(bench.spec.T, M),
          noise(generate_noise(grid, N, seed)),
          xbar(simulate_forward(bench.spec, bench.candidate, noise)),
          yz(solve_bsde(bench.spec, xbar, bench.candidate, noise, SolverOptions{})) {
        BaseSolution b{xbar, yz.y, yz.z, bench.candidate, yz.y0};
        auto pq = solve_p_q(bench.spec, b, noise, SolverOptions{});
        auto PQ = solve_P_Q(bench.spec, b, pq, noise, SolverOptions{});
        adj = AdjointProcesses{std::move(pq), std::move(PQ)};
    }
    BaseSolution base() const {
        return BaseSolution{xbar, yz.y, yz.z, bench.candidate, yz.y0};
    }
};
}  // namespace

TEST_CASE("hamiltonian: vanishing increments collapse to <p,b> + <q,sigma> + f") {
    auto bench = make_benchmark("quadratic");
    Vec x = sv(0.4), u = sv(1.0), p = sv(0.7), q = sv(-0.2);
    Mat P(1, 1);
    P << 0.9;
    double h = hamiltonian(bench.spec, 0.3, x, 0.1, 0.2, u, p, q, P, x, u);
    Vec b(1), sig(1);
    bench.spec.drift(0.3, x, u, b);
    bench.spec.diffusion(0.3, x, u, sig);
    double expect = p.dot(b) + q.dot(sig) + bench.spec.driver(0.3, x, 0.1, 0.2, u);
    CHECK(h == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("hamiltonian on the example: dH(u) = f(u - ubar)") {
    auto bench = make_benchmark("example");
    Vec x0 = sv(0.0), u1 = sv(1.0), u0 = sv(0.0), p = sv(1.0), q = sv(0.0);
    Mat P = Mat::Zero(1, 1);
    double h1 = hamiltonian(bench.spec, 0.5, x0, 0.0, 0.0, u1, p, q, P, x0, u0);
    double h0 = hamiltonian(bench.spec, 0.5, x0, 0.0, 0.0, u0, p, q, P, x0, u0);
    CHECK(h1 - h0 == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("hamiltonian: the P term isolates the quadratic form") {
    auto bench = make_benchmark("example");  // b = 0, sigma = u
    ModelSpec spec = bench.spec;
    spec.driver = [](double, CVec, double, double, CVec) { return 0.0; };
    Vec x = sv(0.0), u = sv(1.0), ubar = sv(0.25), p = sv(0.0), q = sv(0.0);
    Mat P(1, 1);
    P << 1.6;
    double h = hamiltonian(spec, 0.1, x, 0.0, 0.0, u, p, q, P, x, ubar);
    double dsig = 1.0 - 0.25;
    CHECK(h == doctest::Approx(0.5 * 1.6 * dsig * dsig).epsilon(1e-14));
}

TEST_CASE("hamiltonian decomposes into its four terms on random inputs") {
    auto bench = make_benchmark("quadratic");
    std::mt19937_64 eng(101);
    std::normal_distribution<double> n01;
    for (int trial = 0; trial < 25; ++trial) {
        Vec x = sv(n01(eng)), rx = sv(n01(eng)), u = sv(1.0), ru = sv(0.0);
        Vec p = sv(n01(eng)), q = sv(n01(eng));
        Mat P(1, 1);
        P << n01(eng);
        double y = n01(eng), z = n01(eng), t = 0.37;
        Vec b(1), sig(1), sig_ref(1);
        bench.spec.drift(t, x, u, b);
        bench.spec.diffusion(t, x, u, sig);
        bench.spec.diffusion(t, rx, ru, sig_ref);
        double dsig = sig[0] - sig_ref[0];
        double expect = p[0] * b[0] + q[0] * sig[0] + 0.5 * P(0, 0) * dsig * dsig +
                        bench.spec.driver(t, x, y, z + p[0] * dsig, u);
        CHECK(hamiltonian(bench.spec, t, x, y, z, u, p, q, P, rx, ru) ==
              doctest::Approx(expect).epsilon(1e-13));
    }
}

TEST_CASE("example with U = {0, 1}: the candidate certifies, the weaker test fails") {
    Setup s("example", 4000, 64, 103);
    auto base = s.base();
    auto rep = check_mp(s.bench.spec, base, s.adj, s.bench.spec.control_set.enumerate(),
                        MPTolerance{});
    CHECK(rep.pass());
    CHECK(rep.worst >= -1e-10);
    // Self-comparison cells are exactly zero.
    for (std::int64_t node = 0; node < rep.nodes; node += 17) {
        CHECK(rep.cell(node, 0).mean == 0.0);
        CHECK(rep.cell(node, 0).min == 0.0);
    }
    // dH(1) concentrates near f(1) = 3/4.
    CHECK(rep.cell(5, 1).mean == doctest::Approx(0.75).epsilon(0.05));
    // First-order column: f_z(0) * (1 - 0) = -1/4 < 0 rejects the candidate.
    const auto& fo = rep.first_order[static_cast<std::size_t>(5 * 2 + 1)];
    CHECK(fo.mean == doctest::Approx(-0.25).epsilon(0.05));
}

TEST_CASE("example with U = [0, 1]: the interior violation is located") {
    Setup s("example-box", 2000, 32, 107);
    auto base = s.base();
    ControlSet set = s.bench.spec.control_set;
    set.resolution = 0.01;
    auto rep = check_mp(s.bench.spec, base, s.adj, set.enumerate(), MPTolerance{});
    CHECK(!rep.pass());
    // min of z^3 - z/4 over (0, 1] sits at z = sqrt(1/12) ~ 0.2887.
    double u_at_worst = rep.control_grid[static_cast<std::size_t>(rep.worst_control)][0];
    CHECK(u_at_worst == doctest::Approx(0.2887).epsilon(0.15));
    CHECK(rep.worst == doctest::Approx(-0.048).epsilon(0.15));
}

TEST_CASE("convex corollary on the example: value -1/4 at u = 1") {
    Setup s("example", 3000, 32, 109);
    auto base = s.base();
    auto rep = check_convex_corollary(s.bench.spec, base, s.adj,
                                      s.bench.spec.control_set.enumerate(), MPTolerance{});
    CHECK(!rep.pass());  // sign violation: the weaker condition rejects ubar
    CHECK(rep.cell(3, 1).mean == doctest::Approx(-0.25).epsilon(0.05));
    CHECK(rep.cell(3, 0).mean == 0.0);  // u = ubar
}

TEST_CASE("convex corollary requires u-derivatives") {
    Setup s("classical", 500, 8, 111);
    auto base = s.base();
    CHECK_THROWS_AS(check_convex_corollary(s.bench.spec, base, s.adj,
                                           s.bench.spec.control_set.enumerate(), MPTolerance{}),
                    std::invalid_argument);
}

TEST_CASE("constrained hamiltonian reduces pathwise to gamma times the free one") {
    auto bench = make_benchmark("example-vacuous");
    Vec x = sv(0.2), u = sv(1.0), ru = sv(0.0), p = sv(0.8), q = sv(-0.1);
    Mat P(1, 1), P0 = Mat::Zero(1, 1);
    P << 0.4;
    Vec p0 = sv(0.0), q0 = sv(0.0);
    for (double gamma : {1.0, 0.6, 2.3}) {
        double hc = constrained_hamiltonian(bench.spec, 0.3, x, 0.1, -0.2, u, x, ru, p0, q0, P0,
                                            p, q, P, gamma);
        double h = hamiltonian(bench.spec, 0.3, x, 0.1, -0.2, u, p, q, P, x, ru);
        CHECK(hc == doctest::Approx(gamma * h).epsilon(1e-13));
    }
}

TEST_CASE("vacuous constraint at (1, 0) reproduces the unconstrained report cell-by-cell") {
    Setup s("example-vacuous", 3000, 32, 113);
    auto base = s.base();
    auto grid_pts = s.bench.spec.control_set.enumerate();
    auto unconstrained = check_mp(s.bench.spec, base, s.adj, grid_pts, MPTolerance{});
    ConstrainedMPOptions copts;
    auto constrained = check_constrained_at(s.bench.spec, base, s.noise, 1.0, 0.0, grid_pts,
                                            copts);
    REQUIRE(constrained.delta_h.size() == unconstrained.delta_h.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < constrained.delta_h.size(); ++i) {
        worst = std::max(worst,
                         std::abs(constrained.delta_h[i].mean - unconstrained.delta_h[i].mean));
        worst = std::max(worst,
                         std::abs(constrained.delta_h[i].min - unconstrained.delta_h[i].min));
    }
    CHECK(worst <= 1e-10);
}

TEST_CASE("constrained scan on the example certifies and respects the sign flip") {
    Setup s("example-xcons", 2000, 16, 127);
    auto base = s.base();
    ConstrainedMPOptions copts;
    copts.circle_points = 72;  // coarse scan is enough at test scale
    auto grid_pts = s.bench.spec.control_set.enumerate();
    auto rep = check_constrained_mp(s.bench.spec, base, s.noise, grid_pts, copts);
    CHECK(rep.feasible);
    CHECK(rep.at_best.worst >= -3.0 * 1e-2);

    // Negating the constraint flips the mu-dependent terms; the best
    // multiplier pair reflects mu -> -mu up to scan resolution.
    auto flipped = make_benchmark("example-xcons");
    auto& spec2 = flipped.spec;
    spec2.constraint = [](CVec x, double) { return -x[0]; };
    spec2.constraint_grad_x = [](CVec, double, RVec g) { g[0] = -1.0; };
    auto rep2 = check_constrained_mp(spec2, base, s.noise, grid_pts, copts);
    CHECK(rep2.best_lambda == doctest::Approx(rep.best_lambda).epsilon(0.2));
    CHECK(rep2.best_mu == doctest::Approx(-rep.best_mu).epsilon(0.2));
}

TEST_CASE("infeasible candidates are flagged but still checked") {
    Setup s("example-xcons", 2000, 16, 131);
    auto& spec = s.bench.spec;
    spec.constraint = [](CVec x, double) { return x[0] + 1.0; };  // E[phi] = 1
    auto base = s.base();
    ConstrainedMPOptions copts;
    copts.circle_points = 36;
    auto rep = check_constrained_mp(spec, base, s.noise, spec.control_set.enumerate(), copts);
    CHECK(!rep.feasible);
    CHECK(rep.scan.size() == 36);
}

TEST_CASE("empty control grids are rejected") {
    Setup s("example", 500, 8, 137);
    auto base = s.base();
    CHECK_THROWS_AS(check_mp(s.bench.spec, base, s.adj, {}, MPTolerance{}),
                    std::invalid_argument);
}

TEST_CASE("MP report serializes with the violation summary") {
    Setup s("example", 1000, 16, 139);
    auto base = s.base();
    auto rep = check_mp(s.bench.spec, base, s.adj, s.bench.spec.control_set.enumerate(),
                        MPTolerance{});
    auto j = rep.to_json();
    CHECK(j.find("\"worst_delta_h\"") != std::string::npos);
    CHECK(j.find("\"violation_fraction\"") != std::string::npos);
    std::ostringstream os;
    rep.write_csv(os);
    CHECK(os.str().rfind("node,u_index,u0,mean,se,min,argmin_path", 0) == 0);
}
