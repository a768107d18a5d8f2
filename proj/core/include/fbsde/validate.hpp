#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fbsde/model.hpp"

namespace fbsde {

// Sampling region for derivative validation. Points are drawn uniformly;
// controls come from the spec's control set (finite) or the control box.
struct SamplingRegion {
    double t_lo = 0.0, t_hi = 1.0;
    Vec x_lo, x_hi;
    double y_lo = -2.0, y_hi = 2.0;
    double z_lo = -2.0, z_hi = 2.0;
    int samples = 200;
    std::uint64_t seed = 20240901;
};

struct ValidationEntry {
    std::string derivative;   // e.g. "drift_jac", "driver_hess", "terminal_hess_symmetry"
    double max_rel_discrepancy = 0.0;
    std::string worst_point;  // formatted (t, x, y, z, u)
    bool pass = true;
    std::string note;         // non-finite diagnostics etc.
};

struct ValidationReport {
    std::string spec_name;
    double tol = 0.0;
    int samples = 0;
    std::vector<ValidationEntry> entries;

    bool passed() const {
        for (const auto& e : entries)
            if (!e.pass) return false;
        return true;
    }
    std::string to_json() const;
};

// Central finite differences of the base functions against the supplied
// derivatives, with step h = 1e-5 * max(1, |coordinate|). The relative
// discrepancy of values a (finite difference) and b (supplied) is
// |a - b| / max(1, |a|, |b|), so zero derivatives are compared absolutely.
ValidationReport validate_derivatives(const ModelSpec& spec, const SamplingRegion& region,
                                      double tol);

// Region with conventional bounds (|x_j| <= 2 around x0) for quick checks.
SamplingRegion default_region(const ModelSpec& spec);

}  // namespace fbsde
