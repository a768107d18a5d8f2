#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace fbsde {

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;  // standard error of the mean
};

// Mean and standard error, accumulated in index order (deterministic).
MeanSe mean_se(const Eigen::Ref<const Eigen::VectorXd>& values);

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double ci_halfwidth = 0.0;  // 95% half-width on the slope
    int points = 0;
};

// Ordinary least squares of y against x with a t-based confidence interval.
// With two points the CI is undefined and reported as +inf.
SlopeFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

// Two-sided 97.5% Student-t quantile (for 95% CIs), df clamped to [1, 30].
double t_quantile_975(int df);

}  // namespace fbsde
