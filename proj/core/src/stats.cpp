#include "fbsde/stats.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace fbsde {

MeanSe mean_se(const Eigen::Ref<const Eigen::VectorXd>& values) {
    const auto n = values.size();
    if (n == 0) throw std::invalid_argument("mean_se: empty sample");
    double mean = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) mean += values[i];
    mean /= static_cast<double>(n);
    if (n == 1) return {mean, 0.0};
    double ss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double d = values[i] - mean;
        ss += d * d;
    }
    double var = ss / static_cast<double>(n - 1);
    return {mean, std::sqrt(var / static_cast<double>(n))};
}

double t_quantile_975(int df) {
    static const double table[30] = {
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
        2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
        2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};
    if (df < 1) df = 1;
    if (df > 30) return 1.96 + 1.6 / static_cast<double>(df);  // smooth tail toward normal
    return table[df - 1];
}

SlopeFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("fit_line: size mismatch");
    const int n = static_cast<int>(x.size());
    if (n < 2) throw std::invalid_argument("fit_line: need at least two points");
    double mx = 0.0, my = 0.0;
    for (int i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (int i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0) throw std::invalid_argument("fit_line: degenerate abscissae");
    SlopeFit fit;
    fit.points = n;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    if (n == 2) {
        fit.ci_halfwidth = std::numeric_limits<double>::infinity();
        return fit;
    }
    double rss = 0.0;
    for (int i = 0; i < n; ++i) {
        double r = y[i] - fit.intercept - fit.slope * x[i];
        rss += r * r;
    }
    double sigma2 = rss / static_cast<double>(n - 2);
    fit.ci_halfwidth = t_quantile_975(n - 2) * std::sqrt(sigma2 / sxx);
    return fit;
}

}  // namespace fbsde
