// Batch experiment runner. Subcommands: simulate, verify-orders, check-mp,
// check-constrained, list-benchmarks, validate-model. Exit codes: 0 success,
// 1 conclusive check failure, 2 invalid configuration.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fbsde/adjoint.hpp"
#include "fbsde/benchmarks.hpp"
#include "fbsde/bsde.hpp"
#include "fbsde/config.hpp"
#include "fbsde/forward.hpp"
#include "fbsde/maxprinciple.hpp"
#include "fbsde/trajectory.hpp"
#include "fbsde/validate.hpp"
#include "fbsde/variation.hpp"

namespace {

using namespace fbsde;
namespace fs = std::filesystem;

struct CliOverrides {
    std::string config_path;
    std::string benchmark;
    std::int64_t N = -1;
    std::int64_t M = -1;
    std::int64_t seed = -1;
    int workers = -1;
    std::string output_dir;
    std::vector<double> eps;
    double spike_s = -1.0;
    std::vector<double> spike_u;
    int degree = -1;
    int se_batches = -1;
    bool negate_delta_sigma = false;
};

void add_common(CLI::App* cmd, CliOverrides& o) {
    cmd->add_option("-c,--config", o.config_path, "JSON config file");
    cmd->add_option("--benchmark", o.benchmark, "benchmark name (overrides config)");
    cmd->add_option("--paths,--N", o.N, "Monte Carlo path count");
    cmd->add_option("--steps,--M", o.M, "time steps");
    cmd->add_option("--seed", o.seed, "master seed");
    cmd->add_option("--workers", o.workers, "worker threads (0 = hardware)");
    cmd->add_option("--output-dir", o.output_dir, "output directory");
    cmd->add_option("--eps", o.eps, "eps ladder (decreasing)");
    cmd->add_option("--spike-s", o.spike_s, "spike start");
    cmd->add_option("--spike-u", o.spike_u, "replacement control");
    cmd->add_option("--degree", o.degree, "regression polynomial degree");
    cmd->add_option("--se-batches", o.se_batches, "batches for y0 standard errors");
    cmd->add_flag("--negate-delta-sigma", o.negate_delta_sigma,
                  "debug: flip the x1 diffusion forcing sign");
}

ExperimentConfig resolve_config(const CliOverrides& o) {
    ExperimentConfig cfg;
    if (!o.config_path.empty()) cfg = ExperimentConfig::from_json_file(o.config_path);
    if (!o.benchmark.empty()) cfg.benchmark = o.benchmark;
    if (o.N >= 0) cfg.N = o.N;
    if (o.M >= 0) cfg.M = o.M;
    if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
    if (o.workers >= 0) cfg.workers = o.workers;
    if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
    if (!o.eps.empty()) cfg.eps_ladder = o.eps;
    if (o.spike_s >= 0.0) cfg.spike_s = o.spike_s;
    if (!o.spike_u.empty()) cfg.spike_u = o.spike_u;
    if (o.degree >= 0) cfg.degree = o.degree;
    if (o.se_batches >= 0) cfg.se_batches = o.se_batches;
    if (o.negate_delta_sigma) cfg.negate_delta_sigma = true;
    if (cfg.output_dir.empty()) {
        const char* env = std::getenv("FBSDELAB_OUTPUT_DIR");
        cfg.output_dir = env ? env : ".";
    }
    if (cfg.eps_ladder.empty())
        cfg.eps_ladder = default_eps_ladder(make_benchmark(cfg.benchmark).spec.T);
    cfg.validate();
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
}

// The manifest goes out before any heavy computation so failed runs are
// diagnosable; every report also embeds the same resolved config.
void write_manifest(const ExperimentConfig& cfg, const std::string& command) {
    fs::create_directories(cfg.output_dir);
    nlohmann::ordered_json j;
    j["command"] = command;
    j["config"] = nlohmann::ordered_json::parse(cfg.to_json());
    write_text(fs::path(cfg.output_dir) / "manifest.json", j.dump(2) + "\n");
}

std::string with_config(const std::string& report_json, const ExperimentConfig& cfg) {
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(report_json);
    j["config"] = nlohmann::ordered_json::parse(cfg.to_json());
    return j.dump(2) + "\n";
}

SolverOptions solver_options(const ExperimentConfig& cfg) {
    SolverOptions s;
    s.basis.degree = cfg.degree;
    s.basis.ridge = cfg.ridge;
    s.fixed_point_iters = cfg.fixed_point_iters;
    s.fixed_point_tol = cfg.fixed_point_tol;
    s.workers = cfg.workers;
    s.se_batches = cfg.se_batches;
    return s;
}

StudyConfig study_config(const ExperimentConfig& cfg) {
    StudyConfig sc;
    sc.N = cfg.N;
    sc.M = cfg.M;
    sc.seed = cfg.seed;
    sc.spike_s = cfg.spike_s;
    if (!cfg.spike_u.empty())
        sc.spike_u = Eigen::Map<const Vec>(cfg.spike_u.data(),
                                           static_cast<Eigen::Index>(cfg.spike_u.size()));
    sc.eps_ladder = cfg.eps_ladder;
    sc.solver = solver_options(cfg);
    sc.negate_delta_sigma = cfg.negate_delta_sigma;
    sc.workers = cfg.workers;
    return sc;
}

std::vector<Vec> control_grid_of(const ExperimentConfig& cfg, const ModelSpec& spec) {
    ControlSet set = spec.control_set;
    if (set.kind == ControlSet::Kind::box) set.resolution = cfg.control_resolution;
    return set.enumerate();
}

int cmd_simulate(const ExperimentConfig& cfg) {
    write_manifest(cfg, "simulate");
    Benchmark bench = make_benchmark(cfg.benchmark);
    const ModelSpec& spec = bench.spec;
    TimeGrid grid(spec.T, cfg.M);
    NoiseEnsemble noise = generate_noise(grid, cfg.N, cfg.seed, cfg.workers);
    TrajectoryEnsemble x = simulate_forward(spec, bench.candidate, noise, cfg.workers);
    auto opts = solver_options(cfg);
    BsdeSolution yz = solve_bsde(spec, x, bench.candidate, noise, opts);
    BaseSolution base{x, yz.y, yz.z, bench.candidate, yz.y0};
    FirstAdjoint pq = solve_p_q(spec, base, noise, opts);
    SecondAdjoint PQ = solve_P_Q(spec, base, pq, noise, opts);
    TrajectoryEnsemble gamma =
        simulate_gamma(spec, x, yz.y, yz.z, bench.candidate, noise, 1.0, false, cfg.workers);

    const fs::path dir(cfg.output_dir);
    auto dump = [&](const TrajectoryEnsemble& ens, const std::string& name) {
        write_csv_file(ens, (dir / (name + ".csv")).string());
        write_binary_file(ens, (dir / (name + ".bin")).string());
    };
    dump(x, "x");
    dump(yz.y, "y");
    dump(yz.z, "z");
    dump(pq.p, "p");
    dump(pq.q, "q");
    dump(PQ.P, "P");
    dump(PQ.Q, "Q");
    dump(gamma, "gamma");

    nlohmann::ordered_json j;
    j["benchmark"] = cfg.benchmark;
    j["y0"] = yz.y0;
    j["y0_se"] = yz.y0_se;
    j["worst_condition"] = yz.diag.worst_condition;
    write_text(dir / "simulate_summary.json", with_config(j.dump(2), cfg));
    std::cout << "simulate: y0 = " << yz.y0 << " (se " << yz.y0_se << ")\n";
    return 0;
}

int cmd_verify_orders(const ExperimentConfig& cfg) {
    write_manifest(cfg, "verify-orders");
    Benchmark bench = make_benchmark(cfg.benchmark);
    OrderReport report = run_order_study(bench, study_config(cfg));
    const fs::path dir(cfg.output_dir);
    write_text(dir / "order_report.json", with_config(report.to_json(), cfg));
    {
        std::ofstream os(dir / "order_report.csv", std::ios::binary);
        report.write_csv(os);
    }
    auto outcome = verify_order_report(report);
    for (const auto& e : report.estimates) {
        std::cout << e.label << ": ";
        if (e.inconclusive)
            std::cout << "inconclusive (" << e.note << ")";
        else if (e.label == "veq123_z")
            std::cout << "slope " << e.slope << " (diagnostic)";
        else
            std::cout << "slope " << e.slope << " [" << e.ci_lo << ", " << e.ci_hi
                      << "] threshold " << slope_threshold(e.label)
                      << (e.slope >= slope_threshold(e.label) ? " PASS" : " FAIL");
        std::cout << "\n";
    }
    for (const auto& w : outcome.inconclusive)
        std::cout << "warning: " << w << " inconclusive (noise-dominated)\n";
    return outcome.pass ? 0 : 1;
}

int cmd_check_mp(const ExperimentConfig& cfg) {
    write_manifest(cfg, "check-mp");
    Benchmark bench = make_benchmark(cfg.benchmark);
    const ModelSpec& spec = bench.spec;
    TimeGrid grid(spec.T, cfg.M);
    NoiseEnsemble noise = generate_noise(grid, cfg.N, cfg.seed, cfg.workers);
    TrajectoryEnsemble x = simulate_forward(spec, bench.candidate, noise, cfg.workers);
    auto opts = solver_options(cfg);
    BsdeSolution yz = solve_bsde(spec, x, bench.candidate, noise, opts);
    BaseSolution base{x, yz.y, yz.z, bench.candidate, yz.y0};
    FirstAdjoint pq = solve_p_q(spec, base, noise, opts);
    SecondAdjoint PQ = solve_P_Q(spec, base, pq, noise, opts);
    AdjointProcesses adj{std::move(pq), std::move(PQ)};
    MPTolerance tol{cfg.tol_abs, cfg.tol_se_mult};
    MPReport rep = check_mp(spec, base, adj, control_grid_of(cfg, spec), tol, cfg.workers);
    const fs::path dir(cfg.output_dir);
    write_text(dir / "mp_report.json", with_config(rep.to_json(), cfg));
    {
        std::ofstream os(dir / "mp_report.csv", std::ios::binary);
        rep.write_csv(os);
    }
    std::cout << "check-mp: worst dH = " << rep.worst << " at node " << rep.worst_node
              << ", control index " << rep.worst_control << "; violations " << rep.violation_cells
              << "/" << rep.total_cells << "\n";
    return rep.pass() ? 0 : 1;
}

int cmd_check_constrained(const ExperimentConfig& cfg) {
    write_manifest(cfg, "check-constrained");
    Benchmark bench = make_benchmark(cfg.benchmark);
    const ModelSpec& spec = bench.spec;
    if (!spec.has_constraint) {
        std::cerr << "benchmark '" << cfg.benchmark << "' has no state constraint\n";
        return 2;
    }
    TimeGrid grid(spec.T, cfg.M);
    NoiseEnsemble noise = generate_noise(grid, cfg.N, cfg.seed, cfg.workers);
    TrajectoryEnsemble x = simulate_forward(spec, bench.candidate, noise, cfg.workers);
    auto opts = solver_options(cfg);
    BsdeSolution yz = solve_bsde(spec, x, bench.candidate, noise, opts);
    BaseSolution base{x, yz.y, yz.z, bench.candidate, yz.y0};
    ConstrainedMPOptions copts;
    copts.circle_points = cfg.circle_points;
    copts.tol = MPTolerance{cfg.tol_abs, cfg.tol_se_mult};
    copts.solver = opts;
    copts.workers = cfg.workers;
    ConstrainedMPReport rep =
        check_constrained_mp(spec, base, noise, control_grid_of(cfg, spec), copts);
    const fs::path dir(cfg.output_dir);
    write_text(dir / "constrained_report.json", with_config(rep.to_json(), cfg));
    {
        std::ofstream os(dir / "constrained_report.csv", std::ios::binary);
        rep.at_best.write_csv(os);
    }
    if (!rep.feasible)
        std::cout << "warning: candidate infeasible (constraint residual "
                  << rep.feasibility_residual << " vs se " << rep.feasibility_se << ")\n";
    std::cout << "check-constrained: best (lambda, mu) = (" << rep.best_lambda << ", "
              << rep.best_mu << "), worst cell " << rep.at_best.worst << "\n";
    return rep.at_best.pass() ? 0 : 1;
}

int cmd_list_benchmarks() {
    for (const auto& name : benchmark_names()) {
        Benchmark b = make_benchmark(name);
        std::cout << name << ": " << b.description << "\n";
    }
    return 0;
}

int cmd_validate_model(const ExperimentConfig& cfg) {
    write_manifest(cfg, "validate-model");
    Benchmark bench = make_benchmark(cfg.benchmark);
    SamplingRegion region = bench.region;
    region.samples = cfg.validate_samples;
    region.seed = cfg.seed;
    ValidationReport rep = validate_derivatives(bench.spec, region, cfg.validate_tol);
    write_text(fs::path(cfg.output_dir) / "validation.json", with_config(rep.to_json(), cfg));
    for (const auto& e : rep.entries) {
        std::cout << e.derivative << ": max rel " << e.max_rel_discrepancy
                  << (e.pass ? " PASS" : " FAIL") << "\n";
        if (!e.note.empty()) std::cout << "  " << e.note << "\n";
    }
    return rep.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spike-variation laboratory for controlled forward-backward SDE systems"};
    app.require_subcommand(1);
    CliOverrides o;

    auto* sim = app.add_subcommand("simulate", "simulate and export base ensembles");
    add_common(sim, o);
    auto* vo = app.add_subcommand("verify-orders", "run the asymptotic order study");
    add_common(vo, o);
    auto* mp = app.add_subcommand("check-mp", "check the maximum-principle inequality");
    add_common(mp, o);
    auto* cmp = app.add_subcommand("check-constrained",
                                   "check the state-constrained maximum principle");
    add_common(cmp, o);
    auto* lb = app.add_subcommand("list-benchmarks", "list built-in benchmark systems");
    auto* vm = app.add_subcommand("validate-model", "finite-difference derivative validation");
    add_common(vm, o);

    CLI11_PARSE(app, argc, argv);

    try {
        if (lb->parsed()) return cmd_list_benchmarks();
        ExperimentConfig cfg = resolve_config(o);
        if (sim->parsed()) return cmd_simulate(cfg);
        if (vo->parsed()) return cmd_verify_orders(cfg);
        if (mp->parsed()) return cmd_check_mp(cfg);
        if (cmp->parsed()) return cmd_check_constrained(cfg);
        if (vm->parsed()) return cmd_validate_model(cfg);
    } catch (const std::invalid_argument& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
