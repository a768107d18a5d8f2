#include <doctest.h>

#include <cmath>
#include <random>

#include "fbsde/adjoint.hpp"
#include "fbsde/benchmarks.hpp"
#include "fbsde/forward.hpp"

using namespace fbsde;

namespace {
Vec sv(double v) {
    Vec out(1);
    out[0] = v;
    return out;
}

CoeffBundle random_bundle(int n, std::mt19937_64& eng) {
    std::normal_distribution<double> n01;
    CoeffBundle c;
    c.b = Vec::NullaryExpr(n, [&](Eigen::Index) { return n01(eng); });
    c.sigma = Vec::NullaryExpr(n, [&](Eigen::Index) { return n01(eng); });
    c.b_x = Mat::NullaryExpr(n, n, [&](Eigen::Index, Eigen::Index) { return n01(eng); });
    c.sigma_x = Mat::NullaryExpr(n, n, [&](Eigen::Index, Eigen::Index) { return n01(eng); });
    for (int i = 0; i < n; ++i) {
        Mat h = Mat::NullaryExpr(n, n, [&](Eigen::Index, Eigen::Index) { return n01(eng); });
        c.b_xx.push_back(0.5 * (h + h.transpose()));
        h = Mat::NullaryExpr(n, n, [&](Eigen::Index, Eigen::Index) { return n01(eng); });
        c.sigma_xx.push_back(0.5 * (h + h.transpose()));
    }
    c.has_driver = true;
    c.f = n01(eng);
    c.f_x = Vec::NullaryExpr(n, [&](Eigen::Index) { return n01(eng); });
    c.f_y = n01(eng);
    c.f_z = n01(eng);
    Mat d = Mat::NullaryExpr(n + 2, n + 2, [&](Eigen::Index, Eigen::Index) { return n01(eng); });
    c.d2f = 0.5 * (d + d.transpose());
    return c;
}

struct Setup {
    Benchmark bench;
    TimeGrid grid;
    NoiseEnsemble noise;
    TrajectoryEnsemble xbar;
    BsdeSolution yz;
    Setup(const std::string& name, std::int64_t N, std::int64_t M, std::uint64_t seed)
        : bench(make_benchmark(name)),
          grid(bench.spec.T, M),
          noise(generate_noise(grid, N, seed)),
          xbar(simulate_forward(bench.spec, bench.candidate, noise)),
          yz(solve_bsde(bench.spec, xbar, bench.candidate, noise, SolverOptions{})) {}
    BaseSolution base() const {
        return BaseSolution{xbar, yz.y, yz.z, bench.candidate, yz.y0};
    }
};
}  // namespace

TEST_CASE("example benchmark: (p, q) = (1, 0) and (P, Q) = (0, 0) to solver precision") {
    Setup s("example", 4000, 64, 41);
    auto base = s.base();
    auto pq = solve_p_q(s.bench.spec, base, s.noise, SolverOptions{});
    auto PQ = solve_P_Q(s.bench.spec, base, pq, s.noise, SolverOptions{});
    CHECK((pq.p.components[0].array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK(pq.q.components[0].cwiseAbs().maxCoeff() < 1e-12);
    CHECK(PQ.P.components[0].cwiseAbs().maxCoeff() < 1e-12);
    CHECK(PQ.Q.components[0].cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("constant terminal map: homogeneous adjoints vanish identically") {
    ModelSpec spec = make_benchmark("quadratic").spec;
    spec.terminal = [](CVec) { return 3.0; };
    spec.terminal_grad = [](CVec, RVec g) { g.setZero(); };
    spec.terminal_hess = [](CVec, RMat h) { h.setZero(); };
    TimeGrid grid(1.0, 32);
    auto noise = generate_noise(grid, 2000, 43);
    auto pol = ControlPolicy::constant(sv(0.0));
    auto x = simulate_forward(spec, pol, noise);
    auto yz = solve_bsde(spec, x, pol, noise, SolverOptions{});
    BaseSolution base{x, yz.y, yz.z, pol, yz.y0};
    auto pq = solve_p_q(spec, base, noise, SolverOptions{});
    CHECK(pq.p.components[0].cwiseAbs().maxCoeff() < 1e-10);
    CHECK(pq.q.components[0].cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("first-adjoint driver reduces to the classical one when f is (y,z)-free") {
    std::mt19937_64 eng(47);
    for (int trial = 0; trial < 20; ++trial) {
        auto c = random_bundle(2, eng);
        c.f_y = 0.0;
        c.f_z = 0.0;
        Vec p = Vec::NullaryExpr(2, [&](Eigen::Index) { return 0.3; });
        Vec q(2);
        q << -0.2, 0.5;
        Vec ours = first_adjoint_driver(c, p, q);
        Vec classical = c.b_x.transpose() * p + c.sigma_x.transpose() * q + c.f_x;
        CHECK((ours - classical).cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("second-adjoint driver terms add up and match dense arithmetic") {
    std::mt19937_64 eng(53);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 2;
        auto c = random_bundle(n, eng);
        std::normal_distribution<double> n01;
        Vec p = Vec::NullaryExpr(n, [&](Eigen::Index) { return n01(eng); });
        Vec q = Vec::NullaryExpr(n, [&](Eigen::Index) { return n01(eng); });
        Mat P = Mat::NullaryExpr(n, n, [&](Eigen::Index, Eigen::Index) { return n01(eng); });
        Mat Q = Mat::NullaryExpr(n, n, [&](Eigen::Index, Eigen::Index) { return n01(eng); });

        Mat whole = second_adjoint_driver_terms(c, p, q, P, Q);
        Mat sum = Mat::Zero(n, n);
        for (unsigned bit = 0; bit < 8; ++bit)
            sum += second_adjoint_driver_terms(c, p, q, P, Q, 1u << bit);
        CHECK((whole - sum).cwiseAbs().maxCoeff() < 1e-12);

        // A few groups pinned against independent arithmetic.
        Mat t0 = second_adjoint_driver_terms(c, p, q, P, Q, 1u);
        CHECK((t0 - c.f_y * P).cwiseAbs().maxCoeff() < 1e-14);
        Mat t5 = second_adjoint_driver_terms(c, p, q, P, Q, 32u);
        Mat expect5 = p[0] * c.b_xx[0] + p[1] * c.b_xx[1];
        CHECK((t5 - expect5).cwiseAbs().maxCoeff() < 1e-14);
        Mat t7 = second_adjoint_driver_terms(c, p, q, P, Q, 128u);
        Mat border(n, n + 2);
        border.leftCols(n) = Mat::Identity(n, n);
        border.col(n) = p;
        border.col(n + 1) = c.sigma_x.transpose() * p + q;
        CHECK((t7 - border * c.d2f * border.transpose()).cwiseAbs().maxCoeff() < 1e-12);

        // With f (y,z)-free, only the classical groups survive in the driver.
        auto cf = c;
        cf.f_y = cf.f_z = 0.0;
        cf.d2f.setZero();
        Mat reduced = second_adjoint_driver_terms(cf, p, q, P, Q);
        Mat classical = cf.b_x.transpose() * P + P * cf.b_x +
                        cf.sigma_x.transpose() * P * cf.sigma_x + cf.sigma_x.transpose() * Q +
                        Q * cf.sigma_x;
        for (int i = 0; i < n; ++i)
            classical += p[i] * cf.b_xx[static_cast<std::size_t>(i)] +
                         q[i] * cf.sigma_xx[static_cast<std::size_t>(i)];
        CHECK((reduced - classical).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("scalar constant-coefficient P has the exponential-integral closed form") {
    // b_x = a, sigma_x = s, f = 0, phi_xx = c: P(t) = c exp((2a + s^2)(T - t)),
    // deterministic with Q = 0.
    const double a = -0.4, s = 0.3, c = 0.8;
    ModelSpec spec = make_benchmark("example").spec;
    spec.name = "const-coef";
    spec.x0 = sv(0.5);
    spec.drift = [a](double, CVec x, CVec, RVec o) { o[0] = a * x[0]; };
    spec.drift_jac = [a](double, CVec, CVec, RMat o) { o(0, 0) = a; };
    spec.diffusion = [s](double, CVec x, CVec, RVec o) { o[0] = s * x[0]; };
    spec.diffusion_jac = [s](double, CVec, CVec, RMat o) { o(0, 0) = s; };
    spec.driver = [](double, CVec, double, double, CVec) { return 0.0; };
    spec.driver_grad = [](double, CVec, double, double, CVec, RVec g) { g.setZero(); };
    spec.driver_hess = [](double, CVec, double, double, CVec, RMat h) { h.setZero(); };
    spec.terminal = [c](CVec x) { return 0.5 * c * x[0] * x[0]; };
    spec.terminal_grad = [c](CVec x, RVec g) { g[0] = c * x[0]; };
    spec.terminal_hess = [c](CVec, RMat h) { h(0, 0) = c; };
    TimeGrid grid(1.0, 256);
    auto noise = generate_noise(grid, 20000, 59);
    auto pol = ControlPolicy::constant(sv(0.0));
    auto x = simulate_forward(spec, pol, noise);
    auto yz = solve_bsde(spec, x, pol, noise, SolverOptions{});
    BaseSolution base{x, yz.y, yz.z, pol, yz.y0};
    auto pq = solve_p_q(spec, base, noise, SolverOptions{});
    auto PQ = solve_P_Q(spec, base, pq, noise, SolverOptions{});
    const double exact = c * std::exp(2.0 * a + s * s);
    CHECK(PQ.P.value(0, 0) == doctest::Approx(exact).epsilon(0.02));
}

TEST_CASE("adjoint solutions scale linearly with the terminal data") {
    Setup s("quadratic", 3000, 32, 61);
    auto base = s.base();
    auto pq1 = solve_p_q(s.bench.spec, base, s.noise, SolverOptions{});
    ModelSpec doubled = s.bench.spec;
    auto inner_grad = s.bench.spec.terminal_grad;
    doubled.terminal_grad = [inner_grad](CVec x, RVec g) {
        inner_grad(x, g);
        g *= 2.0;
    };
    auto inner_hess = s.bench.spec.terminal_hess;
    doubled.terminal_hess = [inner_hess](CVec x, RMat h) {
        inner_hess(x, h);
        h *= 2.0;
    };
    // Nonlinearity only enters through the coefficients along the base, which
    // are unchanged; the adjoint BSDE itself is linear.
    auto pq2 = solve_p_q(doubled, base, s.noise, SolverOptions{});
    CHECK((pq2.p.components[0] - 2.0 * pq1.p.components[0]).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((pq2.q.components[0] - 2.0 * pq1.q.components[0]).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("P symmetry holds to solver tolerance on a 2d system") {
    Setup s("linear2d", 3000, 24, 67);
    auto base = s.base();
    auto pq = solve_p_q(s.bench.spec, base, s.noise, SolverOptions{});
    auto PQ = solve_P_Q(s.bench.spec, base, pq, s.noise, SolverOptions{});
    CHECK(max_asymmetry(PQ.P, 2) < 1e-10);
    SecondAdjointOptions sym;
    sym.symmetrize_each_step = true;
    auto PQs = solve_P_Q(s.bench.spec, base, pq, s.noise, SolverOptions{}, sym);
    CHECK(max_asymmetry(PQs.P, 2) == 0.0);
}

TEST_CASE("constrained adjoints: mu = 0 gives identically zero processes") {
    Setup s("example-xcons", 2000, 24, 71);
    auto base = s.base();
    auto adj = solve_constrained_adjoints(s.bench.spec, base, 0.0, s.noise, SolverOptions{});
    CHECK(adj.first.p.components[0].cwiseAbs().maxCoeff() < 1e-14);
    CHECK(adj.second.P.components[0].cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("constrained adjoints scale linearly in mu") {
    Setup s("example-xcons", 2000, 24, 73);
    auto base = s.base();
    auto a1 = solve_constrained_adjoints(s.bench.spec, base, 1.0, s.noise, SolverOptions{});
    auto a2 = solve_constrained_adjoints(s.bench.spec, base, 2.0, s.noise, SolverOptions{});
    CHECK((a2.first.p.components[0] - 2.0 * a1.first.p.components[0]).cwiseAbs().maxCoeff() <
          1e-12);
    CHECK((a2.first.q.components[0] - 2.0 * a1.first.q.components[0]).cwiseAbs().maxCoeff() <
          1e-12);
    CHECK((a2.second.P.components[0] - 2.0 * a1.second.P.components[0]).cwiseAbs().maxCoeff() <
          1e-12);
}

TEST_CASE("f-free spec with phi_c = phi: (p0, q0) at mu = 1 coincides with (p, q)") {
    // With a (y,z)-free driver the (p, q) system and the constrained (p0, q0)
    // system have the same driver and terminal, up to f_x which must vanish.
    ModelSpec spec = make_benchmark("classical").spec;
    spec.name = "classical-cons";
    spec.driver = [](double, CVec, double, double, CVec) { return 0.0; };
    spec.driver_grad = [](double, CVec, double, double, CVec, RVec g) { g.setZero(); };
    spec.driver_hess = [](double, CVec, double, double, CVec, RMat h) { h.setZero(); };
    spec.has_constraint = true;
    auto tg = spec.terminal_grad;
    spec.constraint = [t = spec.terminal](CVec x, double) { return t(x); };
    spec.constraint_grad_x = [tg](CVec x, double, RVec g) { tg(x, g); };
    spec.constraint_hess_x = [th = spec.terminal_hess](CVec x, double, RMat h) { th(x, h); };
    spec.constraint_grad_y = [](CVec, double) { return 0.0; };
    TimeGrid grid(1.0, 32);
    auto noise = generate_noise(grid, 3000, 79);
    auto pol = ControlPolicy::constant(sv(0.0));
    auto x = simulate_forward(spec, pol, noise);
    auto yz = solve_bsde(spec, x, pol, noise, SolverOptions{});
    BaseSolution base{x, yz.y, yz.z, pol, yz.y0};
    auto pq = solve_p_q(spec, base, noise, SolverOptions{});
    auto adj0 = solve_constrained_adjoints(spec, base, 1.0, noise, SolverOptions{});
    CHECK((pq.p.components[0] - adj0.first.p.components[0]).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((pq.q.components[0] - adj0.first.q.components[0]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("constrained solve requires a constraint") {
    Setup s("example", 500, 8, 83);
    auto base = s.base();
    CHECK_THROWS_AS(solve_constrained_adjoints(s.bench.spec, base, 1.0, s.noise, SolverOptions{}),
                    std::invalid_argument);
}
