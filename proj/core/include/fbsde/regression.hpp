#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace fbsde {

// Global polynomial least-squares basis for conditional expectations. The
// feature map is every monomial of total degree <= degree in the raw
// variables handed to NodeRegression (state components, optionally x1/x2
// components for the variational solves).
struct RegressionBasis {
    int degree = 3;
    double ridge = 1e-8;  // relative to the standardized Gram scale
};

// Exponent tuples of all monomials in `vars` variables with total degree
// between 1 and `degree`, in a fixed deterministic order.
std::vector<std::vector<int>> monomial_exponents(int vars, int degree);

// Cross-sectional regression at one time node. Columns are standardized;
// columns with (numerically) zero variance are dropped, so a fully constant
// feature set degrades to plain averaging. The normal equations carry a
// ridge term ridge * rows * I and are factored once; fits against multiple
// targets share the factorization.
class NodeRegression {
  public:
    // raw: N x V matrix of raw variables; rows [begin, end) participate.
    NodeRegression(const Eigen::MatrixXd& raw, const RegressionBasis& basis,
                   std::int64_t begin, std::int64_t end, int workers = 0,
                   double guard_ratio = 20.0);

    // Fitted values (conditional-expectation estimates) for rows [begin, end),
    // indexed from 0; entry r corresponds to path begin + r.
    Eigen::VectorXd fit(const Eigen::Ref<const Eigen::VectorXd>& target_rows) const;

    int active_features() const { return static_cast<int>(kept_.size()); }
    // Condition number estimate of the standardized ridged Gram.
    double condition() const { return condition_; }
    std::int64_t rows() const { return rows_; }

  private:
    std::int64_t rows_ = 0;
    int workers_ = 0;
    std::vector<int> kept_;            // indices into the monomial list
    Eigen::MatrixXd features_;         // rows_ x kept (standardized)
    Eigen::LDLT<Eigen::MatrixXd> gram_;
    double condition_ = 1.0;
};

}  // namespace fbsde
