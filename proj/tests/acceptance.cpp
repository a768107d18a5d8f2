// Acceptance suite: one line per criterion. Exit code is the number of
// failed criteria. The CLI binary path may be passed as argv[1] for the
// reproducibility checks; they are skipped (and fail) otherwise.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fbsde/adjoint.hpp"
#include "fbsde/benchmarks.hpp"
#include "fbsde/bsde.hpp"
#include "fbsde/forward.hpp"
#include "fbsde/maxprinciple.hpp"
#include "fbsde/validate.hpp"
#include "fbsde/variation.hpp"

using namespace fbsde;
namespace fs = std::filesystem;

namespace {

int failures = 0;

double now_seconds() {
    using clock = std::chrono::steady_clock;
    static const auto start = clock::now();
    return std::chrono::duration<double>(clock::now() - start).count();
}

struct Timer {
    double t0 = now_seconds();
    double elapsed() const { return now_seconds() - t0; }
};

void report(int criterion, bool pass, const std::string& what, double seconds,
            const std::string& detail = "") {
    std::printf("criterion %2d: %s  %s (%.1f s)%s%s\n", criterion, pass ? "PASS" : "FAIL",
                what.c_str(), seconds, detail.empty() ? "" : "  -- ", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

Vec sv(double v) {
    Vec out(1);
    out[0] = v;
    return out;
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Conclusive pass, or an honest statistical zero on the primary benchmark
// backed by a conclusive pass on the fallback study.
bool met_or_backed(const OrderReport& primary, const OrderReport& fallback,
                   const std::string& label, std::string& detail) {
    const auto* a = primary.find(label);
    const auto* b = fallback.find(label);
    if (a == nullptr || b == nullptr) {
        detail += label + ": missing; ";
        return false;
    }
    const double thr = slope_threshold(label);
    if (!a->inconclusive && a->slope >= thr) {
        detail += label + "=" + std::to_string(a->slope).substr(0, 5) + "; ";
        return true;
    }
    if (a->inconclusive && !b->inconclusive && b->slope >= thr) {
        detail += label + ": zero on example, " + std::to_string(b->slope).substr(0, 5) +
                  " on quadratic; ";
        return true;
    }
    detail += label + ": NOT MET (example " +
              (a->inconclusive ? std::string("inconclusive") : std::to_string(a->slope)) +
              ", quadratic " +
              (b->inconclusive ? std::string("inconclusive") : std::to_string(b->slope)) + "); ";
    return false;
}

bool conclusive_at_least(const OrderReport& rep, const std::string& label, std::string& detail) {
    const auto* e = rep.find(label);
    if (e == nullptr) {
        detail += label + ": missing; ";
        return false;
    }
    if (e->inconclusive) {
        detail += label + ": inconclusive; ";
        return false;
    }
    const double thr = slope_threshold(label);
    detail += label + "=" + std::to_string(e->slope).substr(0, 5) + "; ";
    return e->slope >= thr;
}

int run_cmd(const std::string& cmd) { return std::system(cmd.c_str()); }

}  // namespace

int main(int argc, char** argv) {
    const std::string cli = argc > 1 ? argv[1] : "";

    // 1. Derivative validation at tol 1e-4 over 200 points, wrong spec
    //    flagged, under one second.
    {
        Timer t;
        bool pass = true;
        std::string detail;
        for (const auto& name : benchmark_names()) {
            auto bench = make_benchmark(name);
            auto rep = validate_derivatives(bench.spec, bench.region, 1e-4);
            const bool should_pass = name != "wrongderiv";
            if (rep.passed() != should_pass) {
                pass = false;
                detail += name + (should_pass ? " failed validation; " : " not flagged; ");
            }
        }
        double secs = t.elapsed();
        if (secs >= 1.0) {
            pass = false;
            detail += "overran 1 s; ";
        }
        report(1, pass, "derivative validation over all built-in benchmarks", secs, detail);
    }

    // 2. BSDE solver against the linear closed form e^{0.1} * 0.3.
    {
        Timer t;
        auto bench = make_benchmark("linear");
        auto noise = generate_noise(TimeGrid(1.0, 512), 100000, 2024);
        auto x = simulate_forward(bench.spec, bench.candidate, noise);
        SolverOptions opts;
        opts.se_batches = 16;
        auto yz = solve_bsde(bench.spec, x, bench.candidate, noise, opts);
        const double exact = std::exp(0.1) * 0.3;
        const double err = std::abs(yz.y0 - exact);
        const double tol = std::max(3.0 * yz.y0_se, 2e-3);
        double secs = t.elapsed();
        bool pass = err <= tol && secs < 60.0;
        std::ostringstream d;
        d << "y0=" << yz.y0 << " exact=" << exact << " err=" << err << " tol=" << tol;
        report(2, pass, "linear-benchmark y(0) closed form at N=1e5, M=512", secs, d.str());
    }

    // 3. Classical reduction: driver independent of (y, z).
    {
        Timer t;
        auto bench = make_benchmark("classical");
        TimeGrid grid(1.0, 256);
        const std::int64_t N = 50000;
        auto noise = generate_noise(grid, N, 2025);
        auto x = simulate_forward(bench.spec, bench.candidate, noise);
        SolverOptions opts;
        opts.se_batches = 16;
        auto yz = solve_bsde(bench.spec, x, bench.candidate, noise, opts);
        Eigen::VectorXd direct(N);
        for (std::int64_t p = 0; p < N; ++p) {
            double acc = bench.spec.terminal(sv(x.value(p, grid.M)));
            for (std::int64_t i = 0; i < grid.M; ++i)
                acc += std::cos(x.value(p, i)) * grid.dt();
            direct[p] = acc;
        }
        auto ms = mean_se(direct);
        double combined = std::sqrt(ms.se * ms.se + yz.y0_se * yz.y0_se);
        double err = std::abs(yz.y0 - ms.mean);
        bool pass = err <= 3.0 * combined + 1e-4;
        std::ostringstream d;
        d << "y0=" << yz.y0 << " direct=" << ms.mean << " err=" << err
          << " 3*combined=" << 3.0 * combined;
        report(3, pass, "recursive cost reduces to E[phi + int f] for (y,z)-free drivers",
               t.elapsed(), d.str());
    }

    // Shared order studies for criteria 4-7.
    OrderReport example_rep, quad_rep;
    double example_secs = 0.0, quad_secs = 0.0;
    {
        Timer t;
        auto bench = make_benchmark("example");
        StudyConfig cfg;
        cfg.N = 100000;
        cfg.M = 512;
        cfg.seed = 31415;
        cfg.eps_ladder = default_eps_ladder(1.0);  // {2^-3 .. 2^-7} T
        example_rep = run_order_study(bench, cfg);
        example_secs = t.elapsed();
    }
    {
        Timer t;
        auto bench = make_benchmark("quadratic");
        StudyConfig cfg;
        cfg.N = 80000;
        cfg.M = 512;
        cfg.seed = 27182;
        for (int i = 0; i < 6; ++i)
            cfg.eps_ladder.push_back(1.0 / (2.0 * static_cast<double>(1 << i)));
        cfg.replicate_denominator = 4;
        quad_rep = run_order_study(bench, cfg);
        quad_secs = t.elapsed();
    }

    // 4. Theorem-2.1 orders at beta = 1 on the example ladder; the x2-level
    //    residuals are identically zero there (x^eps - xbar = x1 exactly on
    //    this benchmark) and are verified on the quadratic system instead.
    {
        bool pass = true;
        std::string detail;
        for (const char* label : {"est1", "est2"})
            pass = conclusive_at_least(example_rep, label, detail) && pass;
        for (const char* label : {"est3", "est4", "est5", "est6"})
            pass = met_or_backed(example_rep, quad_rep, label, detail) && pass;
        if (example_secs >= 600.0) {
            pass = false;
            detail += "example study overran 10 min; ";
        }
        report(4, pass, "state-expansion orders (est1..est6)", example_secs, detail);
    }

    // 5. Theorem-3.1 orders, same runs.
    {
        bool pass = true;
        std::string detail;
        for (const char* label : {"vbs1", "vbs3"})
            pass = conclusive_at_least(example_rep, label, detail) && pass;
        pass = met_or_backed(example_rep, quad_rep, "vbs4", detail) && pass;
        report(5, pass, "variational-BSDE orders (vbs1, vbs3, vbs4)",
               example_secs + quad_secs, detail);
    }

    // 6. Expansion equivalence and full reconstruction on the quadratic
    //    system.
    {
        bool pass = true;
        std::string detail;
        pass = conclusive_at_least(quad_rep, "equivalence", detail) && pass;
        pass = conclusive_at_least(quad_rep, "veq123", detail) && pass;
        report(6, pass, "two-route expansion equivalence (quadratic system)", quad_secs, detail);
    }

    // 7. Cross-estimator agreement at every ladder point of both studies.
    {
        bool pass = true;
        std::ostringstream d;
        for (const OrderReport* rep : {&example_rep, &quad_rep}) {
            for (const auto& c : rep->cross_checks) {
                double comb = std::sqrt(c.yhat0_bsde_se * c.yhat0_bsde_se +
                                        c.yhat0_gamma_se * c.yhat0_gamma_se);
                if (std::abs(c.yhat0_bsde - c.yhat0_gamma) > 3.0 * comb) {
                    pass = false;
                    d << rep->benchmark << " eps=" << c.eps << " diff="
                      << std::abs(c.yhat0_bsde - c.yhat0_gamma) << " vs " << 3.0 * comb << "; ";
                }
            }
        }
        report(7, pass, "yhat(0): backward solve vs gamma representation", 0.0, d.str());
    }

    // 8. Maximum principle on the example: the candidate certifies on
    //    U = {0, 1}, the first-order test rejects it, and the boxed control
    //    set exposes the interior violation.
    {
        Timer t;
        bool pass = true;
        std::ostringstream d;
        {
            auto bench = make_benchmark("example");
            TimeGrid grid(1.0, 512);
            auto noise = generate_noise(grid, 100000, 1618);
            auto x = simulate_forward(bench.spec, bench.candidate, noise);
            SolverOptions opts;
            auto yz = solve_bsde(bench.spec, x, bench.candidate, noise, opts);
            BaseSolution base{x, yz.y, yz.z, bench.candidate, yz.y0};
            auto pq = solve_p_q(bench.spec, base, noise, opts);
            auto PQ = solve_P_Q(bench.spec, base, pq, noise, opts);
            AdjointProcesses adj{std::move(pq), std::move(PQ)};
            auto rep = check_mp(bench.spec, base, adj, bench.spec.control_set.enumerate(),
                                MPTolerance{});
            if (!rep.pass()) {
                pass = false;
                d << "two-point set flagged a violation (worst " << rep.worst << "); ";
            }
            d << "worst dH=" << rep.worst << "; ";
            // Weaker first-order condition at u = 1: mean -1/4 at every node.
            for (std::int64_t node = 0; node < rep.nodes; ++node) {
                const auto& fo = rep.first_order[static_cast<std::size_t>(node * 2 + 1)];
                if (std::abs(fo.mean + 0.25) > 3.0 * fo.se + 1e-9) {
                    pass = false;
                    d << "first-order column off at node " << node << " (" << fo.mean << "); ";
                    break;
                }
            }
        }
        {
            auto bench = make_benchmark("example-box");
            TimeGrid grid(1.0, 512);
            auto noise = generate_noise(grid, 5000, 1618);
            auto x = simulate_forward(bench.spec, bench.candidate, noise);
            SolverOptions opts;
            auto yz = solve_bsde(bench.spec, x, bench.candidate, noise, opts);
            BaseSolution base{x, yz.y, yz.z, bench.candidate, yz.y0};
            auto pq = solve_p_q(bench.spec, base, noise, opts);
            auto PQ = solve_P_Q(bench.spec, base, pq, noise, opts);
            AdjointProcesses adj{std::move(pq), std::move(PQ)};
            auto rep = check_mp(bench.spec, base, adj, bench.spec.control_set.enumerate(),
                                MPTolerance{});
            double u_star = rep.control_grid[static_cast<std::size_t>(rep.worst_control)][0];
            double f_at = u_star * u_star * u_star - 0.25 * u_star;
            if (rep.pass()) {
                pass = false;
                d << "boxed set missed the violation; ";
            } else if (!(f_at < 0.0)) {
                pass = false;
                d << "violation located where f(u) >= 0 (u=" << u_star << "); ";
            } else {
                d << "box violation at u=" << u_star << " (worst " << rep.worst << ")";
            }
        }
        report(8, pass, "maximum principle: certificate, strictness, box violation", t.elapsed(),
               d.str());
    }

    // 9. Adjoint trivialities on the example at every node, and P symmetry.
    {
        Timer t;
        bool pass = true;
        std::ostringstream d;
        auto bench = make_benchmark("example");
        TimeGrid grid(1.0, 256);
        const std::int64_t N = 20000;
        auto noise = generate_noise(grid, N, 4321);
        auto x = simulate_forward(bench.spec, bench.candidate, noise);
        SolverOptions opts;
        auto yz = solve_bsde(bench.spec, x, bench.candidate, noise, opts);
        BaseSolution base{x, yz.y, yz.z, bench.candidate, yz.y0};
        auto pq = solve_p_q(bench.spec, base, noise, opts);
        auto PQ = solve_P_Q(bench.spec, base, pq, noise, opts);
        double worst = 0.0;
        worst = std::max(worst, (pq.p.components[0].array() - 1.0).abs().maxCoeff());
        worst = std::max(worst, pq.q.components[0].cwiseAbs().maxCoeff());
        worst = std::max(worst, PQ.P.components[0].cwiseAbs().maxCoeff());
        worst = std::max(worst, PQ.Q.components[0].cwiseAbs().maxCoeff());
        if (worst > 1e-10) {
            pass = false;
            d << "example adjoints off by " << worst << "; ";
        } else {
            d << "max deviation " << worst << "; ";
        }
        // P symmetry on a genuinely matrix-valued case.
        auto b2 = make_benchmark("linear2d");
        TimeGrid g2(1.0, 64);
        auto n2 = generate_noise(g2, 8000, 4321);
        auto x2 = simulate_forward(b2.spec, b2.candidate, n2);
        auto yz2 = solve_bsde(b2.spec, x2, b2.candidate, n2, opts);
        BaseSolution base2{x2, yz2.y, yz2.z, b2.candidate, yz2.y0};
        auto pq2 = solve_p_q(b2.spec, base2, n2, opts);
        auto PQ2 = solve_P_Q(b2.spec, base2, pq2, n2, opts);
        double asym = max_asymmetry(PQ2.P, 2);
        if (asym > 1e-10) {
            pass = false;
            d << "P asymmetry " << asym << " on linear2d";
        } else {
            d << "P asymmetry " << asym;
        }
        report(9, pass, "adjoint trivialities and P symmetry", t.elapsed(), d.str());
    }

    // 10. Constrained reduction at (lambda, mu) = (1, 0) and mu-linearity.
    {
        Timer t;
        bool pass = true;
        std::ostringstream d;
        auto bench = make_benchmark("example-vacuous");
        TimeGrid grid(1.0, 64);
        auto noise = generate_noise(grid, 5000, 999);
        auto x = simulate_forward(bench.spec, bench.candidate, noise);
        SolverOptions opts;
        auto yz = solve_bsde(bench.spec, x, bench.candidate, noise, opts);
        BaseSolution base{x, yz.y, yz.z, bench.candidate, yz.y0};
        auto pq = solve_p_q(bench.spec, base, noise, opts);
        auto PQ = solve_P_Q(bench.spec, base, pq, noise, opts);
        AdjointProcesses adj{std::move(pq), std::move(PQ)};
        auto grid_pts = bench.spec.control_set.enumerate();
        auto unc = check_mp(bench.spec, base, adj, grid_pts, MPTolerance{});
        ConstrainedMPOptions copts;
        copts.solver = opts;
        auto con = check_constrained_at(bench.spec, base, noise, 1.0, 0.0, grid_pts, copts);
        double worst = 0.0;
        for (std::size_t i = 0; i < con.delta_h.size(); ++i) {
            worst = std::max(worst, std::abs(con.delta_h[i].mean - unc.delta_h[i].mean));
            worst = std::max(worst, std::abs(con.delta_h[i].min - unc.delta_h[i].min));
        }
        if (worst > 1e-10) {
            pass = false;
            d << "cell mismatch " << worst << "; ";
        } else {
            d << "cell mismatch " << worst << "; ";
        }
        // mu-scaling of the constrained adjoints.
        auto bx = make_benchmark("example-xcons");
        auto yzx = solve_bsde(bx.spec, x, bx.candidate, noise, opts);
        BaseSolution basex{x, yzx.y, yzx.z, bx.candidate, yzx.y0};
        auto a1 = solve_constrained_adjoints(bx.spec, basex, 1.0, noise, opts);
        auto a2 = solve_constrained_adjoints(bx.spec, basex, 2.0, noise, opts);
        double lin = (a2.first.p.components[0] - 2.0 * a1.first.p.components[0])
                         .cwiseAbs()
                         .maxCoeff();
        lin = std::max(lin, (a2.second.P.components[0] - 2.0 * a1.second.P.components[0])
                                .cwiseAbs()
                                .maxCoeff());
        if (lin > 1e-10) {
            pass = false;
            d << "mu-scaling residual " << lin;
        } else {
            d << "mu-scaling residual " << lin;
        }
        report(10, pass, "vacuous-constraint reduction and mu-linearity", t.elapsed(), d.str());
    }

    // 11. Reproducibility of the CLI: identical bytes across reruns and
    //     worker counts.
    {
        Timer t;
        bool pass = true;
        std::string detail;
        if (cli.empty()) {
            pass = false;
            detail = "CLI path not supplied";
        } else {
            fs::path work = fs::temp_directory_path() / "fbsdelab_acceptance";
            fs::remove_all(work);
            fs::create_directories(work);
            auto run = [&](const std::string& sub, const std::string& args,
                           const std::string& out) {
                std::string cmd = cli + " " + sub + " " + args + " --output-dir " +
                                  (work / out).string() + " > /dev/null 2>&1";
                return run_cmd(cmd);
            };
            run("simulate", "--benchmark quadratic --N 500 --M 64 --seed 12", "a");
            run("simulate", "--benchmark quadratic --N 500 --M 64 --seed 12", "b");
            run("simulate", "--benchmark quadratic --N 500 --M 64 --seed 12 --workers 3", "c");
            run("verify-orders",
                "--benchmark example --N 1200 --M 64 --seed 12 --eps 0.25 --eps 0.125 --eps "
                "0.0625",
                "va");
            run("verify-orders",
                "--benchmark example --N 1200 --M 64 --seed 12 --eps 0.25 --eps 0.125 --eps "
                "0.0625 --workers 2",
                "vb");
            for (const char* f : {"x.csv", "y.csv", "p.csv", "Q.csv", "simulate_summary.json"}) {
                if (read_file(work / "a" / f) != read_file(work / "b" / f) ||
                    read_file(work / "a" / f) != read_file(work / "c" / f)) {
                    pass = false;
                    detail += std::string(f) + " differs; ";
                }
            }
            if (read_file(work / "va" / "order_report.json") !=
                read_file(work / "vb" / "order_report.json")) {
                pass = false;
                detail += "order_report.json differs across worker counts; ";
            }
            if (read_file(work / "va" / "order_report.json").empty()) {
                pass = false;
                detail += "order_report.json missing; ";
            }
        }
        report(11, pass, "byte-identical reruns, worker-count invariant", t.elapsed(), detail);
    }

    std::printf("acceptance: %d criterion(s) failed\n", failures);
    return failures;
}
