#pragma once

#include <string>
#include <vector>

#include "fbsde/model.hpp"
#include "fbsde/validate.hpp"

namespace fbsde {

// A registered control system together with the candidate control the
// library's checks run against.
struct Benchmark {
    ModelSpec spec;
    ControlPolicy candidate;
    Vec spike_u;  // default replacement control for spike studies
    double spike_s = 0.0;
    SamplingRegion region;
    std::string description;
};

std::vector<std::string> benchmark_names();
bool has_benchmark(const std::string& name);
Benchmark make_benchmark(const std::string& name);

}  // namespace fbsde
