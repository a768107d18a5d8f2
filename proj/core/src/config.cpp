#include "fbsde/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fbsde/benchmarks.hpp"

namespace fbsde {

namespace {

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
        throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
    }
    ExperimentConfig c;
    read_field(j, "benchmark", c.benchmark);
    read_field(j, "N", c.N);
    read_field(j, "M", c.M);
    read_field(j, "seed", c.seed);
    read_field(j, "spike_s", c.spike_s);
    read_field(j, "spike_u", c.spike_u);
    read_field(j, "eps_ladder", c.eps_ladder);
    read_field(j, "degree", c.degree);
    read_field(j, "ridge", c.ridge);
    read_field(j, "fixed_point_iters", c.fixed_point_iters);
    read_field(j, "fixed_point_tol", c.fixed_point_tol);
    read_field(j, "se_batches", c.se_batches);
    read_field(j, "control_resolution", c.control_resolution);
    read_field(j, "tol_abs", c.tol_abs);
    read_field(j, "tol_se_mult", c.tol_se_mult);
    read_field(j, "circle_points", c.circle_points);
    read_field(j, "validate_tol", c.validate_tol);
    read_field(j, "validate_samples", c.validate_samples);
    read_field(j, "workers", c.workers);
    read_field(j, "output_dir", c.output_dir);
    read_field(j, "negate_delta_sigma", c.negate_delta_sigma);
    return c;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("config: cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return from_json_text(ss.str());
}

std::string ExperimentConfig::to_json() const {
    nlohmann::ordered_json j;
    j["benchmark"] = benchmark;
    j["N"] = N;
    j["M"] = M;
    j["seed"] = seed;
    j["spike_s"] = spike_s;
    j["spike_u"] = spike_u;
    j["eps_ladder"] = eps_ladder;
    j["degree"] = degree;
    j["ridge"] = ridge;
    j["fixed_point_iters"] = fixed_point_iters;
    j["fixed_point_tol"] = fixed_point_tol;
    j["se_batches"] = se_batches;
    j["control_resolution"] = control_resolution;
    j["tol_abs"] = tol_abs;
    j["tol_se_mult"] = tol_se_mult;
    j["circle_points"] = circle_points;
    j["validate_tol"] = validate_tol;
    j["validate_samples"] = validate_samples;
    j["workers"] = workers;
    j["output_dir"] = output_dir;
    j["negate_delta_sigma"] = negate_delta_sigma;
    return j.dump(2);
}

void ExperimentConfig::validate() const {
    if (!has_benchmark(benchmark))
        throw std::invalid_argument("config: unknown benchmark '" + benchmark + "'");
    if (N < 1) throw std::invalid_argument("config: N must be positive");
    if (M < 1) throw std::invalid_argument("config: M must be positive");
    if (degree < 0) throw std::invalid_argument("config: degree must be nonnegative");
    if (!(ridge >= 0.0)) throw std::invalid_argument("config: ridge must be nonnegative");
    if (fixed_point_iters < 1)
        throw std::invalid_argument("config: fixed_point_iters must be positive");
    if (!(fixed_point_tol > 0.0))
        throw std::invalid_argument("config: fixed_point_tol must be positive");
    if (!(control_resolution > 0.0))
        throw std::invalid_argument("config: control_resolution must be positive");
    if (circle_points < 4) throw std::invalid_argument("config: circle_points too small");
    if (spike_s < 0.0) throw std::invalid_argument("config: spike_s must be nonnegative");
    const double T = make_benchmark(benchmark).spec.T;
    const double dt = T / static_cast<double>(M);
    auto aligned = [&](double v) {
        double pos = v / dt;
        return std::abs(pos - std::round(pos)) <= 1e-9 * static_cast<double>(M);
    };
    if (!aligned(spike_s))
        throw std::invalid_argument("config: spike_s is not a grid node");
    for (double eps : eps_ladder) {
        if (!(eps > 0.0)) throw std::invalid_argument("config: eps must be positive");
        if (!aligned(eps))
            throw std::invalid_argument("config: eps is not a multiple of the step size");
        if (spike_s + eps > T + 1e-9 * T)
            throw std::invalid_argument("config: spike interval leaves [0, T]");
    }
    for (std::size_t i = 1; i < eps_ladder.size(); ++i)
        if (!(eps_ladder[i] < eps_ladder[i - 1]))
            throw std::invalid_argument("config: eps ladder must be strictly decreasing");
}

}  // namespace fbsde
