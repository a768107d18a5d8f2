#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fbsde {

// Batch experiment configuration. JSON is the canonical format; the CLI can
// override individual fields. Serialization round-trips unchanged.
struct ExperimentConfig {
    std::string benchmark = "example";
    std::int64_t N = 1000;
    std::int64_t M = 512;
    std::uint64_t seed = 1;

    double spike_s = 0.0;
    std::vector<double> spike_u;     // empty: the benchmark's default
    std::vector<double> eps_ladder;  // empty: {2^-3..2^-7} T

    int degree = 3;
    double ridge = 1e-8;
    int fixed_point_iters = 5;
    double fixed_point_tol = 1e-12;
    int se_batches = 16;

    double control_resolution = 0.01;  // box control sets
    double tol_abs = 1e-12;
    double tol_se_mult = 3.0;
    int circle_points = 720;

    double validate_tol = 1e-4;
    int validate_samples = 200;

    int workers = 0;
    std::string output_dir;
    bool negate_delta_sigma = false;  // fault injection (debug)

    static ExperimentConfig from_json_text(const std::string& text);
    static ExperimentConfig from_json_file(const std::string& path);
    std::string to_json() const;
    // Throws std::invalid_argument with a message on any malformed field.
    void validate() const;
};

}  // namespace fbsde
